// AdamW with decoupled weight decay. Defaults follow the training recipe:
// lr 5e-5, weight decay 0.001.
#pragma once

#include <cstdint>

#include "dsdit/tape.hpp"

namespace dsdit {

struct AdamWConfig {
    double lr = 5e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;
};

// One update of a single parameter tensor; step_t counts from 1.
inline void adamw_step(Tensor& param, const Tensor& grad, Tensor& m, Tensor& v,
                       std::uint64_t step_t, const AdamWConfig& cfg) {
    require_same_shape(param, grad, "adamw_step");
    require_same_shape(param, m, "adamw_step moments");
    require_same_shape(param, v, "adamw_step moments");
    if (step_t == 0) throw ContractError("adamw_step: step count starts at 1");

    const double bc1 = 1.0 - std::pow(cfg.beta1, double(step_t));
    const double bc2 = 1.0 - std::pow(cfg.beta2, double(step_t));
    for (std::size_t i = 0; i < param.size(); ++i) {
        m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grad[i];
        v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grad[i] * grad[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        param[i] -= cfg.lr * (mhat / (std::sqrt(vhat) + cfg.eps) + cfg.weight_decay * param[i]);
    }
    param.require_finite("adamw_step");
}

class AdamW {
public:
    explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

    void step(ParamStore& params, const GradientMap& grads) {
        ++t_;
        for (auto& [name, p] : params) {
            auto it = grads.find(name);
            if (it == grads.end()) throw ContractError("adamw: missing gradient for '" + name + "'");
            if (!m_.has(name)) {
                m_.add(name, Tensor::zeros(p.shape()));
                v_.add(name, Tensor::zeros(p.shape()));
            }
            adamw_step(p, it->second, m_.at(name), v_.at(name), t_, cfg_);
        }
    }

    const AdamWConfig& config() const { return cfg_; }
    void set_lr(double lr) { cfg_.lr = lr; }
    std::uint64_t step_count() const { return t_; }
    ParamStore& moments_m() { return m_; }
    ParamStore& moments_v() { return v_; }
    void restore(std::uint64_t t, ParamStore m, ParamStore v) {
        t_ = t;
        m_ = std::move(m);
        v_ = std::move(v);
    }

private:
    AdamWConfig cfg_;
    ParamStore m_, v_;
    std::uint64_t t_ = 0;
};

} // namespace dsdit
