#include <doctest.h>

#include "dsdit/flow.hpp"
#include "dsdit/rng.hpp"

using namespace dsdit;

namespace {

struct StubModel : VelocityModel {
    std::function<Tensor(const Tensor&, double)> fn;
    Tensor velocity(const Tensor& xt, double t, const RasterImage&, const RasterImage&,
                    double) const override {
        return fn(xt, t);
    }
};

// Stub whose weak and strong passes differ, for guidance algebra tests.
struct LambdaStub : VelocityModel {
    Tensor velocity(const Tensor& xt, double, const RasterImage&, const RasterImage&,
                    double lambda) const override {
        Tensor v(xt.shape());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = (0.5 + lambda) * xt[i] + 0.1 * lambda;
        return v;
    }
};

RasterImage dummy_image() { return RasterImage(4, 4, 0.5); }

} // namespace

TEST_CASE("interpolate endpoints and midpoint") {
    SeededRng rng(1);
    const Tensor x0 = rng.uniform_tensor({3, 3});
    const Tensor x1 = rng.normal_tensor({3, 3});

    const Tensor at0 = interpolate(x0, x1, 0.0);
    const Tensor at1 = interpolate(x0, x1, 1.0);
    for (std::size_t i = 0; i < x0.size(); ++i) {
        CHECK(at0[i] == x0[i]);
        CHECK(at1[i] == x1[i]);
    }
    const Tensor mid = interpolate(x0, x1, 0.5);
    for (std::size_t i = 0; i < x0.size(); ++i)
        CHECK(mid[i] == doctest::Approx(0.5 * (x0[i] + x1[i])).epsilon(1e-15));

    CHECK_THROWS_AS(interpolate(x0, x1, -0.01), ContractError);
    CHECK_THROWS_AS(interpolate(x0, x1, 1.01), ContractError);
}

TEST_CASE("interpolate is affine in its endpoints") {
    SeededRng rng(2);
    const Tensor a0 = rng.normal_tensor({8});
    const Tensor a1 = rng.normal_tensor({8});
    const Tensor b0 = rng.normal_tensor({8});
    const Tensor b1 = rng.normal_tensor({8});
    const double t = 0.37;

    Tensor sum0(a0.shape()), sum1(a0.shape());
    for (std::size_t i = 0; i < 8; ++i) {
        sum0[i] = 0.25 * a0[i] + 0.75 * b0[i];
        sum1[i] = 0.25 * a1[i] + 0.75 * b1[i];
    }
    const Tensor lhs = interpolate(sum0, sum1, t);
    const Tensor ia = interpolate(a0, a1, t);
    const Tensor ib = interpolate(b0, b1, t);
    for (std::size_t i = 0; i < 8; ++i)
        CHECK(std::abs(lhs[i] - (0.25 * ia[i] + 0.75 * ib[i])) <= 1e-12);
}

TEST_CASE("flow sample: interpolant identity and t-independent target velocity") {
    SeededRng rng(3);
    for (int trial = 0; trial < 20; ++trial) {
        const Tensor x0 = rng.uniform_tensor({2, 5});
        const Tensor x1 = rng.normal_tensor({2, 5});
        const double t = rng.uniform();
        const FlowSample s = make_flow_sample(x0, x1, t);
        CHECK(s.xt.equals(interpolate(x0, x1, t)));
        const FlowSample s2 = make_flow_sample(x0, x1, rng.uniform());
        CHECK(s.v_target.equals(s2.v_target)); // velocity does not depend on t
    }
}

TEST_CASE("rf_loss: zero at the target, constant offset squared, two-loop oracle") {
    SeededRng rng(4);
    const Tensor x0 = rng.uniform_tensor({4, 4});
    const Tensor x1 = rng.normal_tensor({4, 4});

    Tensor v(x0.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = x1[i] - x0[i];
    CHECK(rf_loss(v, x0, x1) == 0.0);

    const double c = 0.3;
    Tensor voff = v;
    for (std::size_t i = 0; i < voff.size(); ++i) voff[i] += c;
    CHECK(rf_loss(voff, x0, x1) == doctest::Approx(c * c).epsilon(1e-12));

    const Tensor vr = rng.normal_tensor({4, 4});
    double want = 0.0;
    for (std::size_t i = 0; i < vr.size(); ++i) {
        const double d = vr[i] - (x1[i] - x0[i]);
        want += d * d;
    }
    want /= double(vr.size());
    CHECK(std::abs(rf_loss(vr, x0, x1) - want) <= 1e-12);
    CHECK(rf_loss(vr, x0, x1) > 0.0);
}

TEST_CASE("sample_timestep is uniform: range, reproducibility, Monte-Carlo mean") {
    SeededRng a(5), b(5);
    double mean = 0.0;
    const int draws = 100000;
    for (int i = 0; i < draws; ++i) {
        const double t = sample_timestep(a);
        CHECK(t >= 0.0);
        CHECK(t < 1.0);
        CHECK(t == sample_timestep(b));
        mean += t;
    }
    mean /= draws;
    CHECK(std::abs(mean - 0.5) <= 0.01);
}

TEST_CASE("autoguide: degenerate omegas and extrapolation identity") {
    SeededRng rng(6);
    const Tensor s = rng.normal_tensor({3, 4});
    const Tensor w = rng.normal_tensor({3, 4});

    CHECK(autoguide(s, w, 1.0).equals(s));
    CHECK(autoguide(s, w, 0.0).equals(w));

    const Tensor two = autoguide(s, Tensor::zeros({3, 4}), 2.0);
    for (std::size_t i = 0; i < s.size(); ++i) CHECK(two[i] == 2.0 * s[i]);

    for (double omega : {0.0, 1.1, 1.2, 1.5}) {
        const Tensor got = autoguide(s, w, omega);
        for (std::size_t i = 0; i < s.size(); ++i)
            CHECK(std::abs(got[i] - (w[i] + omega * (s[i] - w[i]))) <= 1e-12);
    }
}

TEST_CASE("euler with a constant-velocity stub recovers x0 exactly at any step count") {
    SeededRng rng(7);
    const Tensor x0 = rng.uniform_tensor({4, 4, 3});
    const Tensor x1 = rng.normal_tensor({4, 4, 3});

    StubModel stub;
    Tensor v_true(x0.shape());
    for (std::size_t i = 0; i < v_true.size(); ++i) v_true[i] = x1[i] - x0[i];
    stub.fn = [&](const Tensor&, double) { return v_true; };

    for (std::size_t steps : {1u, 3u, 40u, 171u}) {
        SamplerConfig cfg;
        cfg.steps = steps;
        cfg.guidance = false;
        const Tensor got = euler_sample(stub, x1, dummy_image(), dummy_image(), cfg);
        CHECK(got.max_abs_diff(x0) <= 1e-12);
    }
    SamplerConfig def;
    CHECK(def.steps == 40); // solver default
    CHECK(def.omega == 1.2);
    CHECK(def.lambda_weak == 0.0);
}

TEST_CASE("guided sampling with omega = 1 is bit-identical to unguided") {
    const LambdaStub model;
    SeededRng rng(8);
    const Tensor x1 = rng.normal_tensor({4, 4, 3});

    SamplerConfig guided;
    guided.steps = 17;
    guided.guidance = true;
    guided.omega = 1.0;
    SamplerConfig plain = guided;
    plain.guidance = false;

    const Tensor a = euler_sample(model, x1, dummy_image(), dummy_image(), guided);
    const Tensor b = euler_sample(model, x1, dummy_image(), dummy_image(), plain);
    CHECK(a.equals(b));
}

TEST_CASE("linear-field Euler endpoint matches the closed-form recurrence") {
    StubModel stub;
    stub.fn = [](const Tensor& x, double) { return x; }; // v(x, t) = x
    SeededRng rng(9);
    const Tensor x1 = rng.normal_tensor({2, 2, 3});

    SamplerConfig cfg;
    cfg.steps = 40;
    cfg.guidance = false;
    const Tensor got = euler_sample(stub, x1, dummy_image(), dummy_image(), cfg);

    // x <- x (1 - dt) each step: endpoint is (1 - dt)^40 x1
    const double factor = std::pow(1.0 - 1.0 / 40.0, 40.0);
    for (std::size_t i = 0; i < x1.size(); ++i)
        CHECK(std::abs(got[i] - factor * x1[i]) <= 1e-12);
}

TEST_CASE("sampling is deterministic and aborts on non-finite states with the step index") {
    const LambdaStub model;
    SeededRng rng(10);
    const Tensor x1 = rng.normal_tensor({4, 4, 3});
    SamplerConfig cfg;
    cfg.steps = 9;
    cfg.omega = 1.3;
    const Tensor a = euler_sample(model, x1, dummy_image(), dummy_image(), cfg);
    const Tensor b = euler_sample(model, x1, dummy_image(), dummy_image(), cfg);
    CHECK(a.equals(b));

    StubModel exploding;
    exploding.fn = [](const Tensor& x, double) {
        Tensor v(x.shape());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = -1e160 * (std::abs(x[i]) + 1.0);
        return v;
    };
    SamplerConfig cfg2;
    cfg2.steps = 8;
    cfg2.guidance = false;
    try {
        euler_sample(exploding, x1, dummy_image(), dummy_image(), cfg2);
        CHECK(false);
    } catch (const NumericError& e) {
        CHECK(std::string(e.what()).find("step") != std::string::npos);
    }
}

TEST_CASE("two guided evaluations per step: observer sees the composed velocity") {
    const LambdaStub model;
    SeededRng rng(11);
    const Tensor x1 = rng.normal_tensor({2, 2, 3});
    SamplerConfig cfg;
    cfg.steps = 5;
    cfg.omega = 1.2;

    std::size_t called = 0;
    euler_sample(model, x1, dummy_image(), dummy_image(), cfg,
                 [&](std::size_t step, double t, const Tensor& x, const Tensor& v) {
                     CHECK(step == called);
                     CHECK(t <= 1.0);
                     CHECK(x.all_finite());
                     CHECK(v.all_finite());
                     ++called;
                 });
    CHECK(called == 5);
}
