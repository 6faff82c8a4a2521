// Rectified-flow training quantities and the deterministic Euler sampler
// with autoguidance. Convention: t = 0 is data, t = 1 is noise, the target
// velocity is x1 - x0 (t-independent), and sampling integrates t from 1
// down to 0 on a uniform grid with x <- x - dt * v.
#pragma once

#include <cstdint>
#include <functional>

#include "dsdit/image.hpp"
#include "dsdit/rng.hpp"
#include "dsdit/tensor.hpp"

namespace dsdit {

struct FlowSample {
    Tensor x0;       // data
    Tensor x1;       // noise
    double t = 0.0;
    Tensor xt;       // (1-t) x0 + t x1
    Tensor v_target; // x1 - x0
};

inline Tensor interpolate(const Tensor& x0, const Tensor& x1, double t) {
    require_same_shape(x0, x1, "interpolate");
    if (t < 0.0 || t > 1.0) throw ContractError("interpolate: t must be in [0,1]");
    Tensor xt(x0.shape());
    const double a = 1.0 - t;
    for (std::size_t i = 0; i < xt.size(); ++i) xt[i] = a * x0[i] + t * x1[i];
    return xt;
}

inline FlowSample make_flow_sample(Tensor x0, Tensor x1, double t) {
    require_same_shape(x0, x1, "flow_sample");
    FlowSample s;
    s.xt = interpolate(x0, x1, t);
    s.v_target = Tensor(x0.shape());
    for (std::size_t i = 0; i < s.v_target.size(); ++i) s.v_target[i] = x1[i] - x0[i];
    s.x0 = std::move(x0);
    s.x1 = std::move(x1);
    s.t = t;
    return s;
}

// mean squared error against the ground-truth velocity x1 - x0
inline double rf_loss(const Tensor& v_pred, const Tensor& x0, const Tensor& x1) {
    require_same_shape(v_pred, x0, "rf_loss");
    require_same_shape(v_pred, x1, "rf_loss");
    double s = 0.0;
    for (std::size_t i = 0; i < v_pred.size(); ++i) {
        const double d = v_pred[i] - (x1[i] - x0[i]);
        s += d * d;
    }
    return s / double(v_pred.size());
}

// training timestep distribution: Uniform(0,1)
inline double sample_timestep(SeededRng& rng) { return rng.uniform(); }

// v+ = (1 - omega) v_weak + omega v_strong
inline Tensor autoguide(const Tensor& v_strong, const Tensor& v_weak, double omega) {
    require_same_shape(v_strong, v_weak, "autoguide");
    Tensor out(v_strong.shape());
    const double a = 1.0 - omega;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = a * v_weak[i] + omega * v_strong[i];
    return out;
}

struct SamplerConfig {
    std::size_t steps = 40;
    double lambda_weak = 0.0;
    double omega = 1.2;
    bool guidance = true;
    std::uint64_t seed = 0;
};

struct VelocityModel {
    virtual ~VelocityModel() = default;
    virtual Tensor velocity(const Tensor& xt, double t, const RasterImage& lr_up,
                            const RasterImage& ref, double lambda) const = 0;
};

// Optional per-step observer for trajectory debug dumps.
using StepObserver = std::function<void(std::size_t step, double t, const Tensor& x, const Tensor& v)>;

// Integrates from t = 1 (noise) to t = 0. Under guidance every step runs two
// model evaluations, strong (lambda = 1) and weak (lambda = lambda_weak),
// and extrapolates with omega; omega = 1 therefore reproduces the unguided
// trajectory exactly.
inline Tensor euler_sample(const VelocityModel& model, const Tensor& x1,
                           const RasterImage& lr_up, const RasterImage& ref,
                           const SamplerConfig& cfg, const StepObserver& observe = {}) {
    if (cfg.steps < 1) throw ContractError("euler_sample: steps must be >= 1");
    if (cfg.omega < 0.0) throw ContractError("euler_sample: omega must be >= 0");

    Tensor x = x1;
    const double dt = 1.0 / double(cfg.steps);
    for (std::size_t k = 0; k < cfg.steps; ++k) {
        const double t = 1.0 - double(k) * dt;
        Tensor v;
        if (cfg.guidance) {
            const Tensor v_strong = model.velocity(x, t, lr_up, ref, 1.0);
            const Tensor v_weak = model.velocity(x, t, lr_up, ref, cfg.lambda_weak);
            v = autoguide(v_strong, v_weak, cfg.omega);
        } else {
            v = model.velocity(x, t, lr_up, ref, 1.0);
        }
        require_same_shape(x, v, "euler_sample: model output");
        for (std::size_t i = 0; i < x.size(); ++i) x[i] -= dt * v[i];
        if (!x.all_finite())
            throw NumericError("euler_sample: non-finite state at step " + std::to_string(k));
        if (observe) observe(k, t, x, v);
    }
    return x;
}

} // namespace dsdit
