// Dense row-major tensor of 64-bit floats. The reference value type for
// everything in this library; shapes are checked on every public operation
// and non-finite values are rejected rather than propagated.
#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace dsdit {

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error("shape: " + msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error("numeric: " + msg) {}
};

struct ContractError : std::runtime_error {
    explicit ContractError(const std::string& msg) : std::runtime_error("contract: " + msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error("io: " + msg) {}
};

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    return out + "]";
}

class Tensor {
public:
    Tensor() = default;

    explicit Tensor(Shape shape, double fill = 0.0)
        : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {}

    Tensor(Shape shape, std::vector<double> data)
        : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != shape_numel(shape_))
            throw ShapeError("data length " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }

    static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t extent(std::size_t axis) const { return shape_.at(axis); }
    bool empty() const { return data_.empty(); }

    double* data() { return data_.data(); }
    const double* data() const { return data_.data(); }

    double& operator[](std::size_t i) { return data_[i]; }
    double operator[](std::size_t i) const { return data_[i]; }

    double& operator()(std::size_t i, std::size_t j) {
        return data_[i * shape_[1] + j];
    }
    double operator()(std::size_t i, std::size_t j) const {
        return data_[i * shape_[1] + j];
    }
    double& operator()(std::size_t i, std::size_t j, std::size_t k) {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }
    double operator()(std::size_t i, std::size_t j, std::size_t k) const {
        return data_[(i * shape_[1] + j) * shape_[2] + k];
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    bool all_finite() const {
        for (double v : data_)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void require_finite(const char* where) const {
        if (!all_finite()) throw NumericError(std::string(where) + ": non-finite value");
    }

    // Exact elementwise equality (no tolerance). NaN never appears by policy.
    bool equals(const Tensor& other) const {
        if (shape_ != other.shape_) return false;
        for (std::size_t i = 0; i < data_.size(); ++i)
            if (data_[i] != other.data_[i]) return false;
        return true;
    }

    double max_abs_diff(const Tensor& other) const {
        if (shape_ != other.shape_)
            throw ShapeError("max_abs_diff: " + shape_str(shape_) + " vs " + shape_str(other.shape_));
        double m = 0.0;
        for (std::size_t i = 0; i < data_.size(); ++i)
            m = std::max(m, std::abs(data_[i] - other.data_[i]));
        return m;
    }

private:
    Shape shape_;
    std::vector<double> data_;
};

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* where) {
    if (!a.same_shape(b))
        throw ShapeError(std::string(where) + ": " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
}

// ---------------------------------------------------------------------------
// Raw matrix kernels. Row-major, ikj loop order so the inner loop streams
// both B and C rows. These back the tape ops and the optimizer; independent
// oracles in the tests use their own triple loops.

// C(M,N) += A(M,K) * B(K,N)
inline void matmul_nn_acc(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t i = 0; i < m; ++i) {
        const double* arow = a + i * k;
        double* crow = c + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// C(M,N) += A(M,K) * B(N,K)^T. B is transposed into scratch first so the
// hot loop streams rows like the nn kernel; the transpose is O(nk) against
// O(mnk) multiply work.
inline void matmul_nt_acc(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    std::vector<double> bt(k * n);
    for (std::size_t j = 0; j < n; ++j)
        for (std::size_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    matmul_nn_acc(a, bt.data(), c, m, k, n);
}

// C(M,N) += A(K,M)^T * B(K,N)
inline void matmul_tn_acc(const double* a, const double* b, double* c,
                          std::size_t m, std::size_t k, std::size_t n) {
    for (std::size_t p = 0; p < k; ++p) {
        const double* arow = a + p * m;
        const double* brow = b + p * n;
        for (std::size_t i = 0; i < m; ++i) {
            const double av = arow[i];
            double* crow = c + i * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline Tensor matmul_plain(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw ShapeError("matmul: expects rank-2 operands, got " +
                         shape_str(a.shape()) + " and " + shape_str(b.shape()));
    if (a.extent(1) != b.extent(0))
        throw ShapeError("matmul: inner extents differ, " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
    Tensor c({a.extent(0), b.extent(1)});
    matmul_nn_acc(a.data(), b.data(), c.data(), a.extent(0), a.extent(1), b.extent(1));
    return c;
}

} // namespace dsdit
