// Synthetic reference-SR scenes. HR images are multi-octave value noise plus
// geometric primitives (flat rectangles and thin lines, standing in for
// buildings and roads). The Ref image equals HR up to a per-channel
// photometric jitter inside unchanged regions and is drawn from an
// independent texture process inside the change mask, so reference
// reliability is controlled exactly by the mask.
#pragma once

#include <algorithm>
#include <cstdint>

#include "dsdit/image.hpp"
#include "dsdit/rng.hpp"

namespace dsdit {

// Stable per-scene stream derivation: one 64-bit hash of (base, tag, index).
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t tag, std::uint64_t index) {
    std::uint64_t x = base ^ (0x9e3779b97f4a7c15ULL * (tag + 1)) ^ (0xbf58476d1ce4e5b9ULL * (index + 1));
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

struct SyntheticScene {
    RasterImage hr;
    RasterImage ref;
    Tensor mask; // HxW, 1 = changed (Ref unreliable there)
    double change_fraction = 0.0;
    double jitter = 0.0;
    std::uint64_t seed = 0;
};

namespace detail {

inline double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

// One octave of lattice value noise with smoothstep interpolation.
inline void add_value_noise(RasterImage& img, SeededRng& rng, std::size_t cell, double amp) {
    const std::size_t gh = img.height / cell + 2, gw = img.width / cell + 2;
    std::vector<double> lattice(gh * gw * 3);
    for (double& v : lattice) v = rng.uniform(-1.0, 1.0);
    for (std::size_t y = 0; y < img.height; ++y) {
        const double fy = double(y) / double(cell);
        const std::size_t y0 = std::size_t(fy);
        const double ty = smoothstep(fy - double(y0));
        for (std::size_t x = 0; x < img.width; ++x) {
            const double fx = double(x) / double(cell);
            const std::size_t x0 = std::size_t(fx);
            const double tx = smoothstep(fx - double(x0));
            for (std::size_t c = 0; c < 3; ++c) {
                const double v00 = lattice[(y0 * gw + x0) * 3 + c];
                const double v01 = lattice[(y0 * gw + x0 + 1) * 3 + c];
                const double v10 = lattice[((y0 + 1) * gw + x0) * 3 + c];
                const double v11 = lattice[((y0 + 1) * gw + x0 + 1) * 3 + c];
                const double top = v00 + (v01 - v00) * tx;
                const double bot = v10 + (v11 - v10) * tx;
                img.at(y, x, c) += amp * (top + (bot - top) * ty);
            }
        }
    }
}

inline RasterImage procedural_texture(std::uint64_t seed, std::size_t size) {
    SeededRng rng(seed);
    RasterImage img(size, size);

    // base tint
    double base[3];
    for (double& b : base) b = rng.uniform(0.25, 0.75);
    for (std::size_t y = 0; y < size; ++y)
        for (std::size_t x = 0; x < size; ++x)
            for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = base[c];

    // terrain: coarse to fine octaves
    std::size_t cell = std::max<std::size_t>(2, size / 4);
    double amp = 0.22;
    while (cell >= 2) {
        add_value_noise(img, rng, cell, amp);
        cell /= 2;
        amp *= 0.55;
    }

    // buildings: flat rectangles with sharp edges
    const std::size_t n_rect = 3 + rng.uniform_index(4);
    for (std::size_t i = 0; i < n_rect; ++i) {
        const std::size_t rw = 3 + rng.uniform_index(std::max<std::size_t>(2, size / 3));
        const std::size_t rh = 3 + rng.uniform_index(std::max<std::size_t>(2, size / 3));
        const std::size_t rx = rng.uniform_index(size);
        const std::size_t ry = rng.uniform_index(size);
        double col[3];
        for (double& v : col) v = rng.uniform(0.1, 0.9);
        for (std::size_t y = ry; y < std::min(size, ry + rh); ++y)
            for (std::size_t x = rx; x < std::min(size, rx + rw); ++x)
                for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = col[c];
    }

    // roads: thin straight lines
    const std::size_t n_line = 2 + rng.uniform_index(2);
    for (std::size_t i = 0; i < n_line; ++i) {
        const bool horizontal = rng.uniform() < 0.5;
        const std::size_t pos = rng.uniform_index(size);
        const std::size_t thickness = 1 + rng.uniform_index(2);
        const double shade = rng.uniform(0.3, 0.6);
        for (std::size_t a = 0; a < size; ++a)
            for (std::size_t w = 0; w < thickness; ++w) {
                const std::size_t b = std::min(size - 1, pos + w);
                const std::size_t y = horizontal ? b : a;
                const std::size_t x = horizontal ? a : b;
                for (std::size_t c = 0; c < 3; ++c) img.at(y, x, c) = shade;
            }
    }

    img.clamp01();
    return img;
}

// Blob mask covering exactly floor(fraction * pixels): threshold low-frequency
// noise at the requested quantile.
inline Tensor blob_mask(std::uint64_t seed, std::size_t size, double fraction) {
    Tensor mask({size, size});
    const std::size_t want = std::size_t(fraction * double(size * size));
    if (want == 0) return mask;
    if (want >= size * size) {
        for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = 1.0;
        return mask;
    }
    SeededRng rng(seed);
    RasterImage field(size, size);
    add_value_noise(field, rng, std::max<std::size_t>(4, size / 4), 1.0);
    add_value_noise(field, rng, std::max<std::size_t>(2, size / 8), 0.35);
    std::vector<double> values(size * size);
    for (std::size_t i = 0; i < size * size; ++i) values[i] = field.pixels[i * 3];
    std::vector<double> sorted = values;
    std::nth_element(sorted.begin(), sorted.begin() + long(want), sorted.end());
    const double threshold = sorted[want];
    for (std::size_t i = 0; i < size * size; ++i) mask[i] = values[i] < threshold ? 1.0 : 0.0;
    return mask;
}

} // namespace detail

inline SyntheticScene generate_scene(std::uint64_t seed, std::size_t size,
                                     double change_fraction, double jitter) {
    if (change_fraction < 0.0 || change_fraction > 1.0)
        throw ContractError("generate_scene: change_fraction must be in [0,1]");
    SyntheticScene scene;
    scene.seed = seed;
    scene.change_fraction = change_fraction;
    scene.jitter = jitter;
    scene.hr = detail::procedural_texture(derive_seed(seed, 1, 0), size);
    scene.mask = detail::blob_mask(derive_seed(seed, 2, 0), size, change_fraction);

    scene.ref = scene.hr;
    if (jitter > 0.0) {
        SeededRng jrng(derive_seed(seed, 3, 0));
        double gain[3], offset[3];
        for (std::size_t c = 0; c < 3; ++c) {
            gain[c] = 1.0 + jitter * jrng.uniform(-0.1, 0.1);
            offset[c] = jitter * jrng.uniform(-0.05, 0.05);
        }
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    scene.ref.at(y, x, c) = std::clamp(gain[c] * scene.ref.at(y, x, c) + offset[c], 0.0, 1.0);
    }

    // changed regions: texture from an independent process
    bool any = false;
    for (std::size_t i = 0; i < scene.mask.size(); ++i)
        if (scene.mask[i] == 1.0) { any = true; break; }
    if (any) {
        const RasterImage other = detail::procedural_texture(derive_seed(seed, 4, 0), size);
        for (std::size_t y = 0; y < size; ++y)
            for (std::size_t x = 0; x < size; ++x)
                if (scene.mask(y, x) == 1.0)
                    for (std::size_t c = 0; c < 3; ++c) scene.ref.at(y, x, c) = other.at(y, x, c);
    }
    return scene;
}

struct ScenePair {
    RasterImage lr_up; // bicubic down then up, model-resolution input
    RasterImage ref;
    RasterImage hr;
};

inline ScenePair make_pair(const SyntheticScene& scene, std::size_t scale) {
    if (scale == 0 || scene.hr.height % scale != 0 || scene.hr.width % scale != 0)
        throw ContractError("make_pair: scale must divide the image size");
    const RasterImage lr = bicubic_resize(scene.hr, scene.hr.height / scale, scene.hr.width / scale);
    ScenePair pair;
    pair.lr_up = bicubic_resize(lr, scene.hr.height, scene.hr.width);
    pair.ref = scene.ref;
    pair.hr = scene.hr;
    return pair;
}

} // namespace dsdit
