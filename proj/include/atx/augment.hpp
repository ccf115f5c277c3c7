#pragma once

// Preprocessing stack: grayscale replication, bilinear resize of the shorter
// side, center crop, train-time rotation/flip, per-channel normalization.
// Each sample's RNG stream derives from (seed, epoch, sample index), so
// augmented batches do not depend on worker scheduling.

#include <array>
#include <cmath>
#include <random>

#include "atx/image.hpp"
#include "atx/tensor.hpp"

namespace atx {

struct AugmentConfig {
    int out_size = 256;
    // canonical ImageNet statistics; configurable
    std::array<double, 3> mean{0.485, 0.456, 0.406};
    std::array<double, 3> stddev{0.229, 0.224, 0.225};
    double max_rotation_deg = 15.0;
    double flip_prob = 0.5;
};

struct AugmentParams {
    double angle_deg = 0.0;
    bool flip = false;
};

// Deterministic per-sample stream: splitmix64 over the (seed, epoch, index)
// triple seeds a mersenne twister.
inline std::mt19937 sample_rng(uint64_t seed, uint64_t epoch, uint64_t index) {
    uint64_t z = seed;
    auto mix = [&z](uint64_t v) {
        z += 0x9e3779b97f4a7c15ULL + v;
        uint64_t x = z;
        x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
        x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
        return x ^ (x >> 31);
    };
    mix(epoch);
    uint64_t s = mix(index);
    return std::mt19937(static_cast<uint32_t>(s ^ (s >> 32)));
}

namespace detail {

// planar float [3,H,W] in [0,1]; grayscale replicated across channels
struct FloatImage {
    int h = 0, w = 0;
    std::vector<float> px;  // 3*h*w
    float at(int c, int y, int x) const { return px[(static_cast<size_t>(c) * h + y) * w + x]; }
    float& at(int c, int y, int x) { return px[(static_cast<size_t>(c) * h + y) * w + x]; }
};

inline FloatImage to_float3(const Image& img) {
    FloatImage out;
    out.h = img.height;
    out.w = img.width;
    out.px.resize(3ull * out.h * out.w);
    constexpr float inv = 1.0f / 255.0f;
    for (int y = 0; y < out.h; ++y)
        for (int x = 0; x < out.w; ++x)
            for (int c = 0; c < 3; ++c) {
                int sc = img.channels == 1 ? 0 : c;
                out.at(c, y, x) = img.at(y, x, sc) * inv;
            }
    return out;
}

inline FloatImage resize_shorter_bilinear(const FloatImage& in, int target) {
    double scale = static_cast<double>(target) / std::min(in.h, in.w);
    int oh = std::max(target, static_cast<int>(std::round(in.h * scale)));
    int ow = std::max(target, static_cast<int>(std::round(in.w * scale)));
    if (in.h <= in.w) oh = target;
    else ow = target;
    if (oh == in.h && ow == in.w) return in;
    FloatImage out;
    out.h = oh;
    out.w = ow;
    out.px.resize(3ull * oh * ow);
    const double sy = static_cast<double>(in.h) / oh;
    const double sx = static_cast<double>(in.w) / ow;
    for (int y = 0; y < oh; ++y) {
        double fy = (y + 0.5) * sy - 0.5;
        int y0 = static_cast<int>(std::floor(fy));
        double wy = fy - y0;
        int ya = std::clamp(y0, 0, in.h - 1), yb = std::clamp(y0 + 1, 0, in.h - 1);
        for (int x = 0; x < ow; ++x) {
            double fx = (x + 0.5) * sx - 0.5;
            int x0 = static_cast<int>(std::floor(fx));
            double wx = fx - x0;
            int xa = std::clamp(x0, 0, in.w - 1), xb = std::clamp(x0 + 1, 0, in.w - 1);
            for (int c = 0; c < 3; ++c) {
                double top = in.at(c, ya, xa) * (1 - wx) + in.at(c, ya, xb) * wx;
                double bot = in.at(c, yb, xa) * (1 - wx) + in.at(c, yb, xb) * wx;
                out.at(c, y, x) = static_cast<float>(top * (1 - wy) + bot * wy);
            }
        }
    }
    return out;
}

inline FloatImage center_crop(const FloatImage& in, int size) {
    if (in.h == size && in.w == size) return in;
    if (in.h < size || in.w < size)
        throw std::invalid_argument("center_crop: image smaller than crop size");
    int oy = (in.h - size) / 2, ox = (in.w - size) / 2;
    FloatImage out;
    out.h = out.w = size;
    out.px.resize(3ull * size * size);
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) out.at(c, y, x) = in.at(c, oy + y, ox + x);
    return out;
}

// Inverse-mapped rotation about the center, bilinear sampling, zero fill
// outside the frame (pre-normalization).
inline FloatImage rotate(const FloatImage& in, double angle_deg) {
    if (angle_deg == 0.0) return in;
    const double rad = angle_deg * M_PI / 180.0;
    const double ca = std::cos(rad), sa = std::sin(rad);
    const double cy = (in.h - 1) / 2.0, cx = (in.w - 1) / 2.0;
    FloatImage out;
    out.h = in.h;
    out.w = in.w;
    out.px.assign(in.px.size(), 0.0f);
    for (int y = 0; y < in.h; ++y)
        for (int x = 0; x < in.w; ++x) {
            double dy = y - cy, dx = x - cx;
            double sy = ca * dy - sa * dx + cy;  // rotate by -angle
            double sx = sa * dy + ca * dx + cx;
            int y0 = static_cast<int>(std::floor(sy)), x0 = static_cast<int>(std::floor(sx));
            double wy = sy - y0, wx = sx - x0;
            for (int c = 0; c < 3; ++c) {
                double acc = 0;
                for (int iy = 0; iy <= 1; ++iy)
                    for (int ix = 0; ix <= 1; ++ix) {
                        int yy = y0 + iy, xx = x0 + ix;
                        if (yy < 0 || yy >= in.h || xx < 0 || xx >= in.w) continue;
                        double wgt = (iy ? wy : 1 - wy) * (ix ? wx : 1 - wx);
                        acc += wgt * in.at(c, yy, xx);
                    }
                out.at(c, y, x) = static_cast<float>(acc);
            }
        }
    return out;
}

inline void hflip_inplace(FloatImage& img) {
    for (int c = 0; c < 3; ++c)
        for (int y = 0; y < img.h; ++y)
            for (int x = 0; x < img.w / 2; ++x) std::swap(img.at(c, y, x), img.at(c, y, img.w - 1 - x));
}

}  // namespace detail

// Core transform with explicit parameters (angle 0 / no flip reproduces the
// eval path exactly). Output is a [3,S,S] normalized tensor.
inline Tensor<float> augment_with(const Image& img, const AugmentConfig& cfg, const AugmentParams& p) {
    auto f = detail::to_float3(img);
    f = detail::resize_shorter_bilinear(f, cfg.out_size);
    f = detail::center_crop(f, cfg.out_size);
    f = detail::rotate(f, p.angle_deg);
    if (p.flip) detail::hflip_inplace(f);
    const int s = cfg.out_size;
    std::vector<float> data(3ull * s * s);
    for (int c = 0; c < 3; ++c) {
        const float m = static_cast<float>(cfg.mean[c]);
        const float inv_sd = static_cast<float>(1.0 / cfg.stddev[c]);
        for (int i = 0; i < s * s; ++i)
            data[static_cast<size_t>(c) * s * s + i] = (f.px[static_cast<size_t>(c) * s * s + i] - m) * inv_sd;
    }
    return Tensor<float>::from({3, s, s}, std::move(data));
}

inline Tensor<float> augment_eval(const Image& img, const AugmentConfig& cfg) {
    return augment_with(img, cfg, AugmentParams{});
}

inline Tensor<float> augment_train(const Image& img, const AugmentConfig& cfg, std::mt19937& rng) {
    std::uniform_real_distribution<double> ang(-cfg.max_rotation_deg, cfg.max_rotation_deg);
    std::bernoulli_distribution flip(cfg.flip_prob);
    AugmentParams p;
    p.angle_deg = ang(rng);
    p.flip = flip(rng);
    return augment_with(img, cfg, p);
}

}  // namespace atx
