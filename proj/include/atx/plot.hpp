#pragma once

// Minimal static plot renderer: axes plus one polyline per series, written as
// an RGB PNG. Series names/values live in the CSV emitted next to the image.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "atx/image.hpp"

namespace atx {

struct PlotSeries {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

namespace detail {

struct Canvas {
    Image img;
    Canvas(int w, int h) {
        img.width = w;
        img.height = h;
        img.channels = 3;
        img.pixels.assign(static_cast<size_t>(w) * h * 3, 255);
    }
    void set(int x, int y, uint8_t r, uint8_t g, uint8_t b) {
        if (x < 0 || x >= img.width || y < 0 || y >= img.height) return;
        auto* p = &img.pixels[(static_cast<size_t>(y) * img.width + x) * 3];
        p[0] = r;
        p[1] = g;
        p[2] = b;
    }
    void line(int x0, int y0, int x1, int y1, uint8_t r, uint8_t g, uint8_t b) {
        const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
        const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
        int err = dx + dy;
        for (;;) {
            set(x0, y0, r, g, b);
            if (x0 == x1 && y0 == y1) break;
            int e2 = 2 * err;
            if (e2 >= dy) { err += dy; x0 += sx; }
            if (e2 <= dx) { err += dx; y0 += sy; }
        }
    }
};

}  // namespace detail

inline void render_plot(const std::string& png_path, const std::vector<PlotSeries>& series,
                        int width = 800, int height = 500) {
    static const uint8_t palette[][3] = {{214, 69, 65},  {31, 119, 180}, {44, 160, 44},
                                         {148, 103, 189}, {255, 127, 14}, {23, 190, 207}};
    detail::Canvas cv(width, height);
    const int ml = 60, mr = 20, mt = 20, mb = 40;  // margins
    double xmin = 0, xmax = 1, ymin = 0, ymax = 1;
    bool first = true;
    for (const auto& s : series)
        for (auto [x, y] : s.points) {
            if (first) {
                xmin = xmax = x;
                ymin = ymax = y;
                first = false;
            }
            xmin = std::min(xmin, x);
            xmax = std::max(xmax, x);
            ymin = std::min(ymin, y);
            ymax = std::max(ymax, y);
        }
    if (xmax == xmin) xmax = xmin + 1;
    if (ymax == ymin) ymax = ymin + 1;
    const double ypad = 0.05 * (ymax - ymin);
    ymin -= ypad;
    ymax += ypad;

    auto px = [&](double x) {
        return ml + static_cast<int>((x - xmin) / (xmax - xmin) * (width - ml - mr));
    };
    auto py = [&](double y) {
        return height - mb - static_cast<int>((y - ymin) / (ymax - ymin) * (height - mt - mb));
    };
    // axes + tick marks
    cv.line(ml, mt, ml, height - mb, 0, 0, 0);
    cv.line(ml, height - mb, width - mr, height - mb, 0, 0, 0);
    for (int t = 0; t <= 4; ++t) {
        int y = mt + t * (height - mt - mb) / 4;
        cv.line(ml - 4, y, ml, y, 0, 0, 0);
        int x = ml + t * (width - ml - mr) / 4;
        cv.line(x, height - mb, x, height - mb + 4, 0, 0, 0);
    }
    for (size_t si = 0; si < series.size(); ++si) {
        const auto* col = palette[si % 6];
        const auto& pts = series[si].points;
        for (size_t i = 1; i < pts.size(); ++i)
            cv.line(px(pts[i - 1].first), py(pts[i - 1].second), px(pts[i].first),
                    py(pts[i].second), col[0], col[1], col[2]);
        // series swatch in the top-right corner
        int sy = mt + 8 + static_cast<int>(si) * 10;
        cv.line(width - mr - 30, sy, width - mr - 10, sy, col[0], col[1], col[2]);
    }
    encode_png(png_path, cv.img);
}

}  // namespace atx
