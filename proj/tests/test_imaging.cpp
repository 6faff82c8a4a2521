#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>

#include "dsdit/dtns.hpp"
#include "dsdit/image.hpp"
#include "dsdit/metrics.hpp"
#include "dsdit/png_io.hpp"
#include "dsdit/rng.hpp"

using namespace dsdit;

namespace {

RasterImage random_image(SeededRng& rng, std::size_t h, std::size_t w) {
    RasterImage img(h, w);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

// Direct per-window SSIM, the independent oracle: explicit 2-D Gaussian
// weighted moments per valid window position.
double ssim_oracle(const RasterImage& a, const RasterImage& b) {
    std::vector<double> win(11);
    double wsum = 0.0;
    for (int i = 0; i < 11; ++i) {
        win[std::size_t(i)] = std::exp(-double((i - 5) * (i - 5)) / (2.0 * 1.5 * 1.5));
        wsum += win[std::size_t(i)];
    }
    for (double& v : win) v /= wsum;

    const double c1 = 0.01 * 0.01, c2 = 0.03 * 0.03;
    double total = 0.0;
    for (std::size_t c = 0; c < 3; ++c) {
        double channel = 0.0;
        std::size_t windows = 0;
        for (std::size_t y0 = 0; y0 + 11 <= a.height; ++y0)
            for (std::size_t x0 = 0; x0 + 11 <= a.width; ++x0) {
                double ma = 0, mb = 0, maa = 0, mbb = 0, mab = 0;
                for (std::size_t i = 0; i < 11; ++i)
                    for (std::size_t j = 0; j < 11; ++j) {
                        const double w = win[i] * win[j];
                        const double va = a.at(y0 + i, x0 + j, c);
                        const double vb = b.at(y0 + i, x0 + j, c);
                        ma += w * va;
                        mb += w * vb;
                        maa += w * va * va;
                        mbb += w * vb * vb;
                        mab += w * va * vb;
                    }
                const double va = maa - ma * ma, vb = mbb - mb * mb, cov = mab - ma * mb;
                channel += ((2 * ma * mb + c1) * (2 * cov + c2)) /
                           ((ma * ma + mb * mb + c1) * (va + vb + c2));
                ++windows;
            }
        total += channel / double(windows);
    }
    return total / 3.0;
}

} // namespace

TEST_CASE("cubic kernel weights are a partition of unity at any phase") {
    SeededRng rng(3);
    for (int trial = 0; trial < 200; ++trial) {
        const auto w = cubic_weights(rng.uniform());
        CHECK(std::abs(w[0] + w[1] + w[2] + w[3] - 1.0) <= 1e-12);
    }
    const auto w0 = cubic_weights(0.0); // identity tap at phase zero
    CHECK(w0[1] == 1.0);
    CHECK(w0[0] == 0.0);
    CHECK(w0[2] == 0.0);
    CHECK(w0[3] == 0.0);
}

TEST_CASE("bicubic preserves constants at any scale") {
    RasterImage img(12, 12, 0.4);
    for (auto [h, w] : {std::pair<std::size_t, std::size_t>{96, 96}, {3, 7}, {12, 12}, {25, 13}}) {
        const RasterImage out = bicubic_resize(img, h, w);
        CHECK(out.height == h);
        for (double v : out.pixels) CHECK(std::abs(v - 0.4) <= 1e-12);
    }
    CHECK_THROWS_AS(bicubic_resize(img, 0, 5), ShapeError);
}

TEST_CASE("bicubic has linear precision: x8 up then x8 down reproduces a ramp interior") {
    const std::size_t w = 16;
    RasterImage ramp(4, w);
    auto ramp_at = [&](double x) { return 0.2 + 0.5 * (x / double(w - 1)); };
    for (std::size_t y = 0; y < 4; ++y)
        for (std::size_t x = 0; x < w; ++x)
            for (std::size_t c = 0; c < 3; ++c) ramp.at(y, x, c) = ramp_at(double(x));

    const RasterImage up = bicubic_resize(ramp, 4, w * 8);
    // interior of the upsample equals the continuous linear interpolant
    for (std::size_t x = 16; x + 16 < w * 8; ++x) {
        const double src = (double(x) + 0.5) / 8.0 - 0.5;
        CHECK(std::abs(up.at(1, x, 0) - ramp_at(src)) <= 1e-9);
    }

    const RasterImage down = bicubic_resize(up, 4, w);
    for (std::size_t x = 3; x + 3 < w; ++x)
        CHECK(std::abs(down.at(2, x, 1) - ramp_at(double(x))) <= 1e-9);
}

TEST_CASE("bicubic supports the x8 and x16 degradation factors") {
    SeededRng rng(12);
    const RasterImage hr = random_image(rng, 64, 64);
    const RasterImage lr8 = bicubic_resize(hr, 8, 8);
    const RasterImage lr16 = bicubic_resize(hr, 4, 4);
    CHECK(lr8.height == 8);
    CHECK(lr16.height == 4);
    // round trip through the degradation stays finite-error for non-constant input
    const double p = psnr(bicubic_resize(lr8, 64, 64), hr);
    CHECK(std::isfinite(p));
    CHECK(p > 5.0);
}

TEST_CASE("patchify round-trips exactly and counts tokens") {
    SeededRng rng(21);
    const RasterImage img = random_image(rng, 32, 32);
    const TokenSequence seq = patchify(img, 4);
    CHECK(seq.grid.token_count() == 64);
    CHECK(seq.tokens.shape() == Shape{64, 48});
    CHECK(unpatchify(seq).equals(img));

    const RasterImage tiny = random_image(rng, 8, 8);
    const TokenSequence whole = patchify(tiny, 8);
    CHECK(whole.grid.token_count() == 1);
    CHECK(unpatchify(whole).equals(tiny));

    CHECK_THROWS_AS(patchify(img, 5), ShapeError);
}

TEST_CASE("psnr sentinel, closed-form offset, and oracle") {
    SeededRng rng(31);
    const RasterImage a = random_image(rng, 16, 16);
    CHECK(std::isinf(psnr(a, a)));

    RasterImage base(16, 16, 0.3);
    RasterImage shifted = base;
    for (double& v : shifted.pixels) v += 1.0 / 255.0;
    const double want = 20.0 * std::log10(255.0);
    CHECK(std::abs(psnr(base, shifted) - want) <= 1e-9);
    CHECK(want == doctest::Approx(48.1308).epsilon(1e-4));

    const RasterImage b = random_image(rng, 16, 16);
    double mse = 0.0;
    for (std::size_t i = 0; i < a.pixels.size(); ++i) {
        const double d = a.pixels[i] - b.pixels[i];
        mse += d * d;
    }
    mse /= double(a.pixels.size());
    CHECK(std::abs(psnr(a, b) - 10.0 * std::log10(1.0 / mse)) <= 1e-9);
    CHECK(psnr(a, b) == psnr(b, a));

    RasterImage c(8, 9);
    CHECK_THROWS_AS(psnr(a, c), ShapeError);
}

TEST_CASE("ssim identity, anticorrelation, and sliding-window oracle") {
    SeededRng rng(41);
    const RasterImage a = random_image(rng, 20, 20);
    CHECK(ssim(a, a) == 1.0);

    // binary checker vs its inverse: strong anticorrelation
    RasterImage bin(16, 16);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x)
            for (std::size_t c = 0; c < 3; ++c) bin.at(y, x, c) = double((x + y) % 2);
    RasterImage inv = bin;
    for (double& v : inv.pixels) v = 1.0 - v;
    CHECK(ssim(bin, inv) < -0.5);

    const RasterImage b = random_image(rng, 20, 20);
    CHECK(std::abs(ssim(a, b) - ssim_oracle(a, b)) <= 1e-9);

    RasterImage small(8, 8);
    CHECK_THROWS_AS(ssim(small, small), ShapeError);
}

TEST_CASE("masked mse decomposes the full-image mse by area") {
    SeededRng rng(51);
    const RasterImage a = random_image(rng, 16, 16);
    const RasterImage b = random_image(rng, 16, 16);
    Tensor mask({16, 16});
    std::size_t changed = 0;
    for (std::size_t i = 0; i < mask.size(); ++i) {
        mask[i] = rng.uniform() < 0.3 ? 1.0 : 0.0;
        changed += mask[i] == 1.0;
    }
    const double mse_full = mse_image(a, b);
    const double mse_unchanged = mse_masked(a, b, mask, 0.0);
    const double mse_changed = mse_masked(a, b, mask, 1.0);
    const double wu = double(mask.size() - changed) / double(mask.size());
    const double wc = double(changed) / double(mask.size());
    CHECK(std::abs(wu * mse_unchanged + wc * mse_changed - mse_full) <= 1e-9);
}

TEST_CASE("png round-trip is exact on quantized pixels") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dsdit_png_test").string();
    fs::create_directories(dir);

    SeededRng rng(61);
    RasterImage img = random_image(rng, 13, 7);
    const std::string path = dir + "/rt.png";
    write_png(path, img);
    const RasterImage back = read_png(path);

    RasterImage quant = img;
    for (double& v : quant.pixels) v = double(quantize8(v)) / 255.0;
    CHECK(back.equals(quant));

    // write o read is idempotent from the first round on
    write_png(path, back);
    CHECK(read_png(path).equals(back));

    RasterImage one(1, 1);
    one.at(0, 0, 1) = 0.5;
    write_png(dir + "/one.png", one);
    const RasterImage one_back = read_png(dir + "/one.png");
    CHECK(one_back.at(0, 0, 1) == double(quantize8(0.5)) / 255.0);
}

TEST_CASE("png rejects malformed files") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dsdit_png_test").string();
    fs::create_directories(dir);

    const std::string junk = dir + "/junk.png";
    std::ofstream(junk, std::ios::binary) << "definitely not a png";
    CHECK_THROWS_AS(read_png(junk), IoError);

    // corrupt one payload byte of a valid file: chunk crc must catch it
    RasterImage img(6, 6, 0.25);
    const std::string path = dir + "/corrupt.png";
    write_png(path, img);
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(40);
    f.put('\x7f');
    f.close();
    CHECK_THROWS_AS(read_png(path), IoError);

    CHECK_THROWS_AS(read_png(dir + "/missing.png"), IoError);
}

TEST_CASE("checkerboard fixture digest is pinned") {
    RasterImage board(16, 16);
    for (std::size_t y = 0; y < 16; ++y)
        for (std::size_t x = 0; x < 16; ++x) {
            const bool on = ((x / 2) + (y / 2)) % 2 == 0;
            board.at(y, x, 0) = on ? 0.9 : 0.1;
            board.at(y, x, 1) = 0.5;
            board.at(y, x, 2) = on ? 0.1 : 0.9;
        }
    const auto rgb = quantize_rgb8(board);
    const std::uint64_t digest = fnv1a64(rgb.data(), rgb.size());
    CHECK(digest == 0xa0717b91e5ad0325ULL);
}
