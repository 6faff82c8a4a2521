// Raster images, cubic-convolution resampling, and patch tokenization.
//
// Images are HWC row-major, 3 channels, values in [0,1]. "Bicubic" is the
// Keys a = -0.5 cubic-convolution kernel with reflect padding; downsampling
// by an integer factor samples the same kernel at stride s with no pre-blur,
// which is both the dataset degradation and the LR upsampling path.
#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <vector>

#include "dsdit/tensor.hpp"

namespace dsdit {

struct RasterImage {
    std::size_t height = 0;
    std::size_t width = 0;
    std::vector<double> pixels; // HWC, channels = 3

    RasterImage() = default;
    RasterImage(std::size_t h, std::size_t w, double fill = 0.0)
        : height(h), width(w), pixels(h * w * 3, fill) {
        if (h < 1 || w < 1) throw ShapeError("raster: dimensions must be >= 1");
    }

    double& at(std::size_t y, std::size_t x, std::size_t c) {
        return pixels[(y * width + x) * 3 + c];
    }
    double at(std::size_t y, std::size_t x, std::size_t c) const {
        return pixels[(y * width + x) * 3 + c];
    }

    std::size_t pixel_count() const { return height * width; }

    Tensor to_tensor() const {
        return Tensor({height, width, 3}, pixels);
    }
    static RasterImage from_tensor(const Tensor& t) {
        if (t.rank() != 3 || t.extent(2) != 3)
            throw ShapeError("raster: expected HxWx3 tensor, got " + shape_str(t.shape()));
        RasterImage img(t.extent(0), t.extent(1));
        img.pixels.assign(t.data(), t.data() + t.size());
        return img;
    }

    void clamp01() {
        for (double& v : pixels) v = std::clamp(v, 0.0, 1.0);
    }

    bool equals(const RasterImage& o) const {
        return height == o.height && width == o.width && pixels == o.pixels;
    }
};

// ---------------------------------------------------------------------------
// Cubic convolution (Keys, a = -0.5)

inline double cubic_kernel(double x) {
    constexpr double a = -0.5;
    x = std::abs(x);
    if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
    if (x < 2.0) return (((x - 5.0) * x + 8.0) * x - 4.0) * a;
    return 0.0;
}

// Weights of the 4 taps at fractional phase f in [0,1); taps cover
// floor(src)-1 .. floor(src)+2. They sum to 1 at every phase.
inline std::array<double, 4> cubic_weights(double f) {
    return {cubic_kernel(f + 1.0), cubic_kernel(f), cubic_kernel(1.0 - f), cubic_kernel(2.0 - f)};
}

namespace detail {

// Half-sample symmetric reflection, folded until in range.
inline std::size_t reflect_index(long i, std::size_t n) {
    const long nn = long(n);
    while (i < 0 || i >= nn) {
        if (i < 0) i = -i - 1;
        if (i >= nn) i = 2 * nn - i - 1;
    }
    return std::size_t(i);
}

struct Tap {
    std::size_t idx[4];
    double w[4];
};

// One resampling axis: output index -> 4 source taps under the pixel-center
// convention src = (dst + 0.5) * (in/out) - 0.5.
inline std::vector<Tap> make_taps(std::size_t in, std::size_t out) {
    std::vector<Tap> taps(out);
    const double ratio = double(in) / double(out);
    for (std::size_t d = 0; d < out; ++d) {
        const double src = (double(d) + 0.5) * ratio - 0.5;
        const double base = std::floor(src);
        const double f = src - base;
        const auto w = cubic_weights(f);
        for (int k = 0; k < 4; ++k) {
            taps[d].idx[k] = reflect_index(long(base) - 1 + k, in);
            taps[d].w[k] = w[std::size_t(k)];
        }
    }
    return taps;
}

} // namespace detail

// Separable cubic-convolution resize; output clamped to [0,1].
inline RasterImage bicubic_resize(const RasterImage& img, std::size_t out_h, std::size_t out_w) {
    if (out_h < 1 || out_w < 1) throw ShapeError("bicubic_resize: output dims must be >= 1");
    const auto col_taps = detail::make_taps(img.width, out_w);
    const auto row_taps = detail::make_taps(img.height, out_h);

    // horizontal pass
    std::vector<double> tmp(img.height * out_w * 3);
    for (std::size_t y = 0; y < img.height; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto& t = col_taps[x];
            for (std::size_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) acc += t.w[k] * img.at(y, t.idx[k], c);
                tmp[(y * out_w + x) * 3 + c] = acc;
            }
        }

    // vertical pass
    RasterImage out(out_h, out_w);
    for (std::size_t y = 0; y < out_h; ++y)
        for (std::size_t x = 0; x < out_w; ++x) {
            const auto& t = row_taps[y];
            for (std::size_t c = 0; c < 3; ++c) {
                double acc = 0.0;
                for (int k = 0; k < 4; ++k) acc += t.w[k] * tmp[(t.idx[k] * out_w + x) * 3 + c];
                out.at(y, x, c) = std::clamp(acc, 0.0, 1.0);
            }
        }
    return out;
}

// ---------------------------------------------------------------------------
// Patch tokenization

struct PatchGrid {
    std::size_t patch = 0;
    std::size_t rows = 0;
    std::size_t cols = 0;

    std::size_t token_count() const { return rows * cols; }
    std::size_t token_dim() const { return patch * patch * 3; }
};

enum class Modality { noisy, lr, ref };

struct TokenSequence {
    Tensor tokens; // N x token_dim
    Modality modality = Modality::noisy;
    PatchGrid grid;
};

inline PatchGrid make_patch_grid(std::size_t h, std::size_t w, std::size_t p) {
    if (p == 0 || h % p != 0 || w % p != 0)
        throw ShapeError("patchify: patch size " + std::to_string(p) + " must divide " +
                         std::to_string(h) + "x" + std::to_string(w));
    return PatchGrid{p, h / p, w / p};
}

// HxWx3 -> N x (3 p^2); token layout is pixel-major, channel-minor, patches
// in row-major grid order.
inline Tensor patchify_tensor(const Tensor& img, std::size_t p) {
    if (img.rank() != 3 || img.extent(2) != 3)
        throw ShapeError("patchify: expected HxWx3 tensor, got " + shape_str(img.shape()));
    const PatchGrid grid = make_patch_grid(img.extent(0), img.extent(1), p);
    Tensor tokens({grid.token_count(), grid.token_dim()});
    for (std::size_t gr = 0; gr < grid.rows; ++gr)
        for (std::size_t gc = 0; gc < grid.cols; ++gc) {
            const std::size_t n = gr * grid.cols + gc;
            std::size_t j = 0;
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                    for (std::size_t c = 0; c < 3; ++c)
                        tokens(n, j++) = img(gr * p + py, gc * p + px, c);
        }
    return tokens;
}

inline Tensor unpatchify_tensor(const Tensor& tokens, const PatchGrid& grid) {
    if (tokens.rank() != 2 || tokens.extent(0) != grid.token_count() ||
        tokens.extent(1) != grid.token_dim())
        throw ShapeError("unpatchify: tokens " + shape_str(tokens.shape()) +
                         " do not match grid " + std::to_string(grid.rows) + "x" +
                         std::to_string(grid.cols) + " p=" + std::to_string(grid.patch));
    const std::size_t p = grid.patch;
    Tensor img({grid.rows * p, grid.cols * p, 3});
    for (std::size_t gr = 0; gr < grid.rows; ++gr)
        for (std::size_t gc = 0; gc < grid.cols; ++gc) {
            const std::size_t n = gr * grid.cols + gc;
            std::size_t j = 0;
            for (std::size_t py = 0; py < p; ++py)
                for (std::size_t px = 0; px < p; ++px)
                    for (std::size_t c = 0; c < 3; ++c)
                        img(gr * p + py, gc * p + px, c) = tokens(n, j++);
        }
    return img;
}

inline TokenSequence patchify(const RasterImage& img, std::size_t p,
                              Modality modality = Modality::noisy) {
    TokenSequence seq;
    seq.grid = make_patch_grid(img.height, img.width, p);
    seq.modality = modality;
    seq.tokens = patchify_tensor(img.to_tensor(), p);
    return seq;
}

inline RasterImage unpatchify(const TokenSequence& seq) {
    return RasterImage::from_tensor(unpatchify_tensor(seq.tokens, seq.grid));
}

} // namespace dsdit
