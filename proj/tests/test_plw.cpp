#include <doctest.h>

#include "dsdit/grad_check.hpp"
#include "dsdit/plw.hpp"
#include "dsdit/rng.hpp"

using namespace dsdit;

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double silu_scalar(double x) { return x * sigmoid(x); }

// Independent per-token evaluation of the whole PLW path, explicit loops.
Tensor inject_plw_oracle(const Tensor& h_z, const Tensor& h_l, const Tensor& h_r,
                         const PLWParams& p) {
    const std::size_t n = h_z.extent(0), c = h_z.extent(1);
    Tensor out = h_z;
    for (std::size_t tok = 0; tok < n; ++tok) {
        std::vector<double> x(3 * c);
        for (std::size_t j = 0; j < c; ++j) {
            x[j] = h_l(tok, j);
            x[c + j] = h_r(tok, j);
            x[2 * c + j] = h_z(tok, j);
        }
        std::vector<double> a1(2 * c);
        for (std::size_t j = 0; j < 2 * c; ++j) {
            double acc = p.b1[j];
            for (std::size_t d = 0; d < 3 * c; ++d) acc += x[d] * p.w1(d, j);
            a1[j] = silu_scalar(acc);
        }
        std::vector<double> a2(c);
        for (std::size_t j = 0; j < c; ++j) {
            double acc = p.b2[j];
            for (std::size_t d = 0; d < 2 * c; ++d) acc += a1[d] * p.w2(d, j);
            a2[j] = silu_scalar(acc);
        }
        double logits[2];
        for (std::size_t j = 0; j < 2; ++j) {
            double acc = p.b3[j];
            for (std::size_t d = 0; d < c; ++d) acc += a2[d] * p.w3(d, j);
            logits[j] = acc;
        }
        const double mx = std::max(logits[0], logits[1]);
        const double e0 = std::exp(logits[0] - mx), e1 = std::exp(logits[1] - mx);
        const double wl = e0 / (e0 + e1), wr = e1 / (e0 + e1);

        std::vector<double> fused(c);
        for (std::size_t j = 0; j < c; ++j) fused[j] = wl * h_l(tok, j) + wr * h_r(tok, j);
        for (std::size_t j = 0; j < c; ++j) {
            double acc = p.zl_b[j];
            for (std::size_t d = 0; d < c; ++d) acc += fused[d] * p.zl_w(d, j);
            out(tok, j) += acc;
        }
    }
    return out;
}

PLWParams random_plw(SeededRng& rng, std::size_t c) {
    PLWParams p = PLWParams::init(c, rng);
    // emulate a trained state: every tensor non-trivial, including the zero linear
    p.b1 = rng.uniform_tensor({2 * c}, -0.3, 0.3);
    p.b2 = rng.uniform_tensor({c}, -0.3, 0.3);
    p.b3 = rng.uniform_tensor({2}, -0.3, 0.3);
    p.zl_w = rng.uniform_tensor({c, c}, -0.4, 0.4);
    p.zl_b = rng.uniform_tensor({c}, -0.2, 0.2);
    return p;
}

} // namespace

TEST_CASE("zero-initialized PLW parameters have exactly zero linear entries") {
    SeededRng rng(2);
    const PLWParams p = PLWParams::init(8, rng);
    CHECK(p.zl_w.equals(Tensor::zeros({8, 8})));
    CHECK(p.zl_b.equals(Tensor::zeros({8})));
    CHECK(p.w3.extent(1) == 2);
}

TEST_CASE("zeroed final weight layer gives 0.5/0.5 patch weights") {
    SeededRng rng(3);
    PLWParams p = random_plw(rng, 8);
    p.w3 = Tensor::zeros({8, 2});
    p.b3 = Tensor::zeros({2});
    const Tensor hl = rng.uniform_tensor({5, 8}, -1.0, 1.0);
    const Tensor hr = rng.uniform_tensor({5, 8}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({5, 8}, -1.0, 1.0);
    const PatchWeights w = compute_patch_weights(hl, hr, hz, p);
    for (std::size_t i = 0; i < 5; ++i) {
        CHECK(w.lr(i, 0) == 0.5);
        CHECK(w.ref(i, 0) == 0.5);
    }
}

TEST_CASE("patch weights are a convex pair summing to one") {
    SeededRng rng(4);
    const PLWParams p = random_plw(rng, 8);
    const Tensor hl = rng.uniform_tensor({6, 8}, -2.0, 2.0);
    const Tensor hr = rng.uniform_tensor({6, 8}, -2.0, 2.0);
    const Tensor hz = rng.uniform_tensor({6, 8}, -2.0, 2.0);
    const PatchWeights w = compute_patch_weights(hl, hr, hz, p);
    for (std::size_t i = 0; i < 6; ++i) {
        CHECK(w.lr(i, 0) > 0.0);
        CHECK(w.ref(i, 0) > 0.0);
        CHECK(w.lr(i, 0) < 1.0);
        CHECK(w.ref(i, 0) < 1.0);
        CHECK(std::abs(w.lr(i, 0) + w.ref(i, 0) - 1.0) <= 1e-12);
    }
}

TEST_CASE("inject_plw is the exact identity at initialization") {
    SeededRng rng(5);
    const PLWParams p = PLWParams::init(8, rng);
    const Tensor hl = rng.uniform_tensor({4, 8}, -1.0, 1.0);
    const Tensor hr = rng.uniform_tensor({4, 8}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({4, 8}, -1.0, 1.0);
    CHECK(inject_plw(hz, hl, hr, p).equals(hz));
}

TEST_CASE("forced LR weight of one with identity zero-linear adds exactly H^l") {
    SeededRng rng(6);
    PLWParams p = random_plw(rng, 4);
    // large logit offset toward the LR column
    p.w3 = Tensor::zeros({4, 2});
    p.b3 = Tensor({2}, {60.0, -60.0});
    p.zl_w = Tensor::zeros({4, 4});
    for (std::size_t i = 0; i < 4; ++i) p.zl_w(i, i) = 1.0;
    p.zl_b = Tensor::zeros({4});

    const Tensor hl = rng.uniform_tensor({3, 4}, -1.0, 1.0);
    const Tensor hr = rng.uniform_tensor({3, 4}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({3, 4}, -1.0, 1.0);
    const Tensor out = inject_plw(hz, hl, hr, p);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(std::abs(out[i] - (hz[i] + hl[i])) <= 1e-12);
}

TEST_CASE("inject_plw matches the per-token oracle on random trained weights") {
    SeededRng rng(7);
    for (int trial = 0; trial < 20; ++trial) {
        const PLWParams p = random_plw(rng, 8);
        const Tensor hl = rng.uniform_tensor({5, 8}, -1.5, 1.5);
        const Tensor hr = rng.uniform_tensor({5, 8}, -1.5, 1.5);
        const Tensor hz = rng.uniform_tensor({5, 8}, -1.5, 1.5);
        CHECK(inject_plw(hz, hl, hr, p).max_abs_diff(inject_plw_oracle(hz, hl, hr, p)) <= 1e-12);
    }
}

TEST_CASE("variant A: identities and formula oracle") {
    SeededRng rng(8);
    const Tensor hl = rng.uniform_tensor({4, 6}, -1.0, 1.0);
    const Tensor hr = rng.uniform_tensor({4, 6}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({4, 6}, -1.0, 1.0);

    CHECK(inject_variant_a(hz, hl, hr, VariantAParams::init(6)).equals(hz));

    VariantAParams ident = VariantAParams::init(6);
    for (std::size_t i = 0; i < 6; ++i) {
        ident.zl_l_w(i, i) = 1.0;
        ident.zl_r_w(i, i) = 1.0;
    }
    const Tensor out = inject_variant_a(hz, hl, hr, ident);
    for (std::size_t i = 0; i < out.size(); ++i)
        CHECK(std::abs(out[i] - (hz[i] + hl[i] + hr[i])) <= 1e-12);

    VariantAParams p = VariantAParams::init(6);
    p.zl_l_w = rng.uniform_tensor({6, 6}, -0.5, 0.5);
    p.zl_l_b = rng.uniform_tensor({6}, -0.2, 0.2);
    p.zl_r_w = rng.uniform_tensor({6, 6}, -0.5, 0.5);
    p.zl_r_b = rng.uniform_tensor({6}, -0.2, 0.2);
    const Tensor got = inject_variant_a(hz, hl, hr, p);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            double acc = hz(i, j) + p.zl_l_b[j] + p.zl_r_b[j];
            for (std::size_t d = 0; d < 6; ++d)
                acc += hl(i, d) * p.zl_l_w(d, j) + hr(i, d) * p.zl_r_w(d, j);
            CHECK(std::abs(got(i, j) - acc) <= 1e-12);
        }
}

TEST_CASE("variant B: identities, cancellation, and formula oracle") {
    SeededRng rng(9);
    const Tensor hl = rng.uniform_tensor({4, 6}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({4, 6}, -1.0, 1.0);

    CHECK(inject_variant_b(hz, hl, hl, VariantBParams::init(6)).equals(hz));

    // H^r = -H^l cancels inside the linear for any weights
    Tensor neg = hl;
    for (double* v = neg.data(); v != neg.data() + neg.size(); ++v) *v = -*v;
    VariantBParams p = VariantBParams::init(6);
    p.zl_w = rng.uniform_tensor({6, 6}, -0.5, 0.5);
    const Tensor out = inject_variant_b(hz, hl, neg, p);
    CHECK(out.max_abs_diff(hz) <= 1e-12);

    p.zl_b = rng.uniform_tensor({6}, -0.2, 0.2);
    const Tensor hr = rng.uniform_tensor({4, 6}, -1.0, 1.0);
    const Tensor got = inject_variant_b(hz, hl, hr, p);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 6; ++j) {
            double acc = hz(i, j) + p.zl_b[j];
            for (std::size_t d = 0; d < 6; ++d) acc += (hl(i, d) + hr(i, d)) * p.zl_w(d, j);
            CHECK(std::abs(got(i, j) - acc) <= 1e-12);
        }
}

TEST_CASE("all variants are the identity at init, so configurations agree at step zero") {
    SeededRng rng(10);
    const Tensor hl = rng.uniform_tensor({4, 8}, -1.0, 1.0);
    const Tensor hr = rng.uniform_tensor({4, 8}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({4, 8}, -1.0, 1.0);
    const Tensor a = inject_variant_a(hz, hl, hr, VariantAParams::init(8));
    const Tensor b = inject_variant_b(hz, hl, hr, VariantBParams::init(8));
    const Tensor c = inject_plw(hz, hl, hr, PLWParams::init(8, rng));
    CHECK(a.equals(hz));
    CHECK(b.equals(hz));
    CHECK(c.equals(hz));
}

TEST_CASE("tied logits reduce PLW to variant B with a half-scaled linear") {
    SeededRng rng(11);
    PLWParams plw = random_plw(rng, 8);
    plw.w3 = Tensor::zeros({8, 2}); // equal logits: weights 0.5/0.5
    plw.b3 = Tensor::zeros({2});

    VariantBParams half = VariantBParams::init(8);
    half.zl_w = plw.zl_w;
    half.zl_b = plw.zl_b;
    for (std::size_t i = 0; i < half.zl_w.size(); ++i) half.zl_w[i] *= 0.5;
    // bias is applied once in both paths, so only the weight scales

    const Tensor hl = rng.uniform_tensor({5, 8}, -1.0, 1.0);
    const Tensor hr = rng.uniform_tensor({5, 8}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({5, 8}, -1.0, 1.0);
    CHECK(inject_plw(hz, hl, hr, plw).max_abs_diff(inject_variant_b(hz, hl, hr, half)) <= 1e-12);
}

TEST_CASE("inject_plw differentiates: finite-difference check over all PLW parameters") {
    SeededRng rng(12);
    const std::size_t c = 6, n = 3;
    const PLWParams seed_params = random_plw(rng, c);
    const Tensor hl = rng.uniform_tensor({n, c}, -1.0, 1.0);
    const Tensor hr = rng.uniform_tensor({n, c}, -1.0, 1.0);
    const Tensor hz = rng.uniform_tensor({n, c}, -1.0, 1.0);
    const Tensor target = rng.uniform_tensor({n, c}, -1.0, 1.0);

    ParamStore params;
    params.add("w1", seed_params.w1);
    params.add("b1", seed_params.b1);
    params.add("w2", seed_params.w2);
    params.add("b2", seed_params.b2);
    params.add("w3", seed_params.w3);
    params.add("b3", seed_params.b3);
    params.add("zl.w", seed_params.zl_w);
    params.add("zl.b", seed_params.zl_b);

    auto run = [&](const ParamStore& ps, Tape& tape) {
        PLWValues v{tape.leaf(ps.at("w1"), "w1"),   tape.leaf(ps.at("b1"), "b1"),
                    tape.leaf(ps.at("w2"), "w2"),   tape.leaf(ps.at("b2"), "b2"),
                    tape.leaf(ps.at("w3"), "w3"),   tape.leaf(ps.at("b3"), "b3"),
                    tape.leaf(ps.at("zl.w"), "zl.w"), tape.leaf(ps.at("zl.b"), "zl.b")};
        Value out = inject_plw_tape(tape.constant(hz), tape.constant(hl), tape.constant(hr), v);
        return mse(out, tape.constant(target));
    };

    GradientMap analytic;
    {
        Tape tape;
        analytic = tape.backward(run(params, tape));
    }
    auto f = [&](const ParamStore& ps) {
        Tape tape;
        return run(ps, tape).val()[0];
    };
    const auto report = grad_check(f, params, analytic);
    CHECK(report.max_rel_err <= 1e-4);
}
