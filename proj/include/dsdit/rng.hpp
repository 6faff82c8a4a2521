// Deterministic random number generation. The generator is pinned to
// xoshiro256++ seeded through splitmix64, with uniform doubles taken from
// the top 53 bits and normals via Box-Muller, so identical seeds give
// identical streams on every platform regardless of the standard library.
#pragma once

#include <cmath>
#include <cstdint>
#include <array>

#include "dsdit/tensor.hpp"

namespace dsdit {

class SeededRng {
public:
    explicit SeededRng(std::uint64_t seed) {
        // splitmix64 expansion of the seed into the xoshiro state
        std::uint64_t x = seed;
        for (auto& s : state_) {
            x += 0x9e3779b97f4a7c15ULL;
            std::uint64_t z = x;
            z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
            z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
            s = z ^ (z >> 31);
        }
    }

    std::uint64_t next_u64() {
        const std::uint64_t result = rotl(state_[0] + state_[3], 23) + state_[0];
        const std::uint64_t t = state_[1] << 17;
        state_[2] ^= state_[0];
        state_[3] ^= state_[1];
        state_[1] ^= state_[2];
        state_[0] ^= state_[3];
        state_[2] ^= t;
        state_[3] = rotl(state_[3], 45);
        return result;
    }

    // uniform in [0,1)
    double uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // unbiased index in [0,n)
    std::size_t uniform_index(std::size_t n) {
        if (n == 0) throw ContractError("uniform_index: n must be positive");
        const std::uint64_t bound = UINT64_MAX - UINT64_MAX % std::uint64_t(n);
        std::uint64_t r;
        do { r = next_u64(); } while (r >= bound);
        return std::size_t(r % std::uint64_t(n));
    }

    // standard normal, Box-Muller with the spare value cached
    double normal() {
        if (has_spare_) {
            has_spare_ = false;
            return spare_;
        }
        const double u1 = 1.0 - uniform(); // (0,1], keeps log finite
        const double u2 = uniform();
        const double r = std::sqrt(-2.0 * std::log(u1));
        const double theta = 2.0 * M_PI * u2;
        spare_ = r * std::sin(theta);
        has_spare_ = true;
        return r * std::cos(theta);
    }

    // normal(0, std) resampled until within cut standard deviations
    double truncated_normal(double stddev, double cut = 2.0) {
        double z;
        do { z = normal(); } while (std::abs(z) > cut);
        return z * stddev;
    }

    Tensor normal_tensor(Shape shape, double stddev = 1.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = normal() * stddev;
        return t;
    }

    Tensor uniform_tensor(Shape shape, double lo = 0.0, double hi = 1.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = uniform(lo, hi);
        return t;
    }

    Tensor truncated_normal_tensor(Shape shape, double stddev, double cut = 2.0) {
        Tensor t(std::move(shape));
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = truncated_normal(stddev, cut);
        return t;
    }

    struct State {
        std::array<std::uint64_t, 4> s;
        bool has_spare;
        double spare;
    };

    State save_state() const { return {state_, has_spare_, spare_}; }
    void restore_state(const State& st) {
        state_ = st.s;
        has_spare_ = st.has_spare;
        spare_ = st.spare;
    }

private:
    static std::uint64_t rotl(std::uint64_t x, int k) {
        return (x << k) | (x >> (64 - k));
    }

    std::array<std::uint64_t, 4> state_{};
    bool has_spare_ = false;
    double spare_ = 0.0;
};

} // namespace dsdit
