// PSNR and single-scale SSIM on [0,1] images. PSNR of identical images
// returns +infinity as the documented sentinel. SSIM uses the 11x11
// Gaussian window (sigma 1.5), K1 = 0.01, K2 = 0.03, dynamic range 1, with
// moments computed by separable convolution over valid window positions.
#pragma once

#include <cmath>
#include <limits>
#include <vector>

#include "dsdit/image.hpp"

namespace dsdit {

inline double mse_image(const RasterImage& a, const RasterImage& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("mse: image sizes differ");
    double s = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        s += d * d;
    }
    return s / double(a.pixels.size());
}

inline double psnr_from_mse(double mse) {
    if (mse <= 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

inline double psnr(const RasterImage& a, const RasterImage& b) {
    return psnr_from_mse(mse_image(a, b));
}

// MSE restricted to pixels where mask (HxW of 0/1) equals `region`.
// An empty region has zero mass; its PSNR is the +inf sentinel.
inline double mse_masked(const RasterImage& a, const RasterImage& b,
                         const Tensor& mask, double region) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("mse_masked: image sizes differ");
    if (mask.rank() != 2 || mask.extent(0) != a.height || mask.extent(1) != a.width)
        throw ShapeError("mse_masked: mask " + shape_str(mask.shape()) + " does not match image");
    double s = 0.0;
    std::size_t n = 0;
    for (std::size_t y = 0; y < a.height; ++y)
        for (std::size_t x = 0; x < a.width; ++x) {
            if (mask(y, x) != region) continue;
            for (std::size_t c = 0; c < 3; ++c) {
                const double d = a.at(y, x, c) - b.at(y, x, c);
                s += d * d;
            }
            n += 3;
        }
    if (n == 0) return 0.0;
    return s / double(n);
}

inline double psnr_masked(const RasterImage& a, const RasterImage& b,
                          const Tensor& mask, double region) {
    return psnr_from_mse(mse_masked(a, b, mask, region));
}

namespace detail {

inline std::vector<double> gaussian_window_11() {
    std::vector<double> w(11);
    const double sigma = 1.5;
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        const double d = double(i - 5);
        w[std::size_t(i)] = std::exp(-d * d / (2.0 * sigma * sigma));
        sum += w[std::size_t(i)];
    }
    for (double& v : w) v /= sum;
    return w;
}

// Separable 11-tap weighted convolution, valid region only.
inline std::vector<double> conv_valid(const std::vector<double>& in, std::size_t h, std::size_t w,
                                      const std::vector<double>& win) {
    const std::size_t k = win.size();
    const std::size_t oh = h - k + 1, ow = w - k + 1;
    std::vector<double> hor(h * ow);
    for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += win[i] * in[y * w + x + i];
            hor[y * ow + x] = acc;
        }
    std::vector<double> out(oh * ow);
    for (std::size_t y = 0; y < oh; ++y)
        for (std::size_t x = 0; x < ow; ++x) {
            double acc = 0.0;
            for (std::size_t i = 0; i < k; ++i) acc += win[i] * hor[(y + i) * ow + x];
            out[y * ow + x] = acc;
        }
    return out;
}

} // namespace detail

inline double ssim(const RasterImage& a, const RasterImage& b) {
    if (a.height != b.height || a.width != b.width)
        throw ShapeError("ssim: image sizes differ");
    if (a.height < 11 || a.width < 11)
        throw ShapeError("ssim: image smaller than the 11x11 window");

    const auto win = detail::gaussian_window_11();
    constexpr double c1 = 0.01 * 0.01;
    constexpr double c2 = 0.03 * 0.03;
    const std::size_t h = a.height, w = a.width;

    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        std::vector<double> pa(h * w), pb(h * w), paa(h * w), pbb(h * w), pab(h * w);
        for (std::size_t i = 0; i < h * w; ++i) {
            const double va = a.pixels[i * 3 + c];
            const double vb = b.pixels[i * 3 + c];
            pa[i] = va;
            pb[i] = vb;
            paa[i] = va * va;
            pbb[i] = vb * vb;
            pab[i] = va * vb;
        }
        const auto mu_a = detail::conv_valid(pa, h, w, win);
        const auto mu_b = detail::conv_valid(pb, h, w, win);
        const auto m_aa = detail::conv_valid(paa, h, w, win);
        const auto m_bb = detail::conv_valid(pbb, h, w, win);
        const auto m_ab = detail::conv_valid(pab, h, w, win);

        double sum = 0.0;
        for (std::size_t i = 0; i < mu_a.size(); ++i) {
            const double ma = mu_a[i], mb = mu_b[i];
            const double va = m_aa[i] - ma * ma;
            const double vb = m_bb[i] - mb * mb;
            const double cov = m_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) /
                   ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / double(mu_a.size());
    }
    return total / 3.0;
}

} // namespace dsdit
