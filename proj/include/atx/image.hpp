#pragma once

// 8-bit image container and codecs. PGM (P2/P5) is handled directly; PNG via
// libpng. Other formats are rejected.

#include <png.h>

#include <cstdint>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace atx {

struct Image {
    int height = 0;
    int width = 0;
    int channels = 0;  // 1 (gray) or 3 (rgb), interleaved rows
    std::vector<uint8_t> pixels;

    uint8_t at(int y, int x, int c) const {
        return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
    }
};

class ImageError : public std::runtime_error {
public:
    ImageError(const std::string& path, const std::string& what)
        : std::runtime_error("image '" + path + "': " + what) {}
};

namespace detail {

inline int pgm_next_token(std::istream& in, const std::string& path) {
    // skips whitespace and '#' comments
    for (;;) {
        int ch = in.peek();
        if (ch == '#') {
            std::string line;
            std::getline(in, line);
        } else if (std::isspace(ch)) {
            in.get();
        } else {
            break;
        }
    }
    int v;
    if (!(in >> v)) throw ImageError(path, "truncated PGM header");
    return v;
}

}  // namespace detail

inline Image decode_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ImageError(path, "cannot open");
    char p, kind;
    in.get(p);
    in.get(kind);
    if (p != 'P' || (kind != '2' && kind != '5')) throw ImageError(path, "not a PGM (P2/P5) file");
    int w = detail::pgm_next_token(in, path);
    int h = detail::pgm_next_token(in, path);
    int maxval = detail::pgm_next_token(in, path);
    if (w <= 0 || h <= 0) throw ImageError(path, "bad dimensions");
    if (maxval != 255) throw ImageError(path, "only 8-bit PGM supported (maxval 255)");
    Image img;
    img.width = w;
    img.height = h;
    img.channels = 1;
    img.pixels.resize(static_cast<size_t>(w) * h);
    if (kind == '5') {
        in.get();  // single whitespace after maxval
        in.read(reinterpret_cast<char*>(img.pixels.data()), img.pixels.size());
        if (in.gcount() != static_cast<std::streamsize>(img.pixels.size()))
            throw ImageError(path, "truncated pixel data");
    } else {
        for (auto& px : img.pixels) {
            int v = detail::pgm_next_token(in, path);
            if (v < 0 || v > 255) throw ImageError(path, "pixel out of range");
            px = static_cast<uint8_t>(v);
        }
    }
    return img;
}

inline void encode_pgm(const std::string& path, const Image& img) {
    if (img.channels != 1) throw ImageError(path, "PGM requires a single channel");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ImageError(path, "cannot write");
    out << "P5\n" << img.width << " " << img.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(img.pixels.data()), img.pixels.size());
}

inline Image decode_png(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw ImageError(path, "cannot open");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ImageError(path, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ImageError(path, "PNG decode failed");
    }
    png_init_io(png, fp);
    png_read_info(png, info);
    const int bit_depth = png_get_bit_depth(png, info);
    const int color_type = png_get_color_type(png, info);
    if (bit_depth == 16) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ImageError(path, "16-bit PNG not supported (8-bit only)");
    }
    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    png_set_strip_alpha(png);
    png_read_update_info(png, info);

    Image img;
    img.width = static_cast<int>(png_get_image_width(png, info));
    img.height = static_cast<int>(png_get_image_height(png, info));
    img.channels = static_cast<int>(png_get_channels(png, info));
    if (img.channels != 1 && img.channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        std::fclose(fp);
        throw ImageError(path, "unsupported channel count " + std::to_string(img.channels));
    }
    img.pixels.resize(static_cast<size_t>(img.width) * img.height * img.channels);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = img.pixels.data() + static_cast<size_t>(y) * img.width * img.channels;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    std::fclose(fp);
    return img;
}

inline void encode_png(const std::string& path, const Image& img) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw ImageError(path, "cannot write");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        if (png) png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw ImageError(path, "libpng init failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        std::fclose(fp);
        throw ImageError(path, "PNG encode failed");
    }
    png_init_io(png, fp);
    const int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    std::vector<png_bytep> rows(img.height);
    for (int y = 0; y < img.height; ++y)
        rows[y] = const_cast<png_bytep>(img.pixels.data() + static_cast<size_t>(y) * img.width * img.channels);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    std::fclose(fp);
}

// Dispatch on extension; anything but .png/.pgm is rejected.
inline Image decode_image(const std::string& path) {
    auto ends_with = [&](const char* suf) {
        std::string s = path;
        for (auto& ch : s) ch = static_cast<char>(std::tolower(ch));
        std::string e(suf);
        return s.size() >= e.size() && s.compare(s.size() - e.size(), e.size(), e) == 0;
    };
    if (ends_with(".pgm")) return decode_pgm(path);
    if (ends_with(".png")) return decode_png(path);
    throw ImageError(path, "unsupported format (PNG and PGM only)");
}

}  // namespace atx
