// Reverse-mode differentiation over Tensors. A Tape records primitive ops in
// creation order (which is already topological); backward seeds the scalar
// loss and walks the record once in reverse. Tensors are immutable once on
// the tape; one forward/backward pass owns a tape exclusively.
#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "dsdit/tensor.hpp"

namespace dsdit {

using GradientMap = std::map<std::string, Tensor>;

class ParamStore {
public:
    Tensor& add(const std::string& name, Tensor t) {
        auto [it, inserted] = items_.emplace(name, std::move(t));
        if (!inserted) throw ContractError("param '" + name + "' already registered");
        return it->second;
    }
    Tensor& at(const std::string& name) {
        auto it = items_.find(name);
        if (it == items_.end()) throw ContractError("unknown param '" + name + "'");
        return it->second;
    }
    const Tensor& at(const std::string& name) const {
        auto it = items_.find(name);
        if (it == items_.end()) throw ContractError("unknown param '" + name + "'");
        return it->second;
    }
    bool has(const std::string& name) const { return items_.count(name) != 0; }

    auto begin() { return items_.begin(); }
    auto end() { return items_.end(); }
    auto begin() const { return items_.begin(); }
    auto end() const { return items_.end(); }
    std::size_t size() const { return items_.size(); }

    std::size_t scalar_count() const {
        std::size_t n = 0;
        for (const auto& [k, v] : items_) n += v.size();
        return n;
    }

private:
    std::map<std::string, Tensor> items_; // sorted: canonical order for serialization
};

class Tape;

struct Value {
    Tape* tape = nullptr;
    int id = -1;

    const Tensor& val() const;
    bool valid() const { return tape != nullptr && id >= 0; }
};

class Tape {
public:
    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Value leaf(Tensor t, std::string name = {}) {
        t.require_finite("leaf");
        nodes_.push_back(Node{std::move(t), {}, nullptr, std::move(name)});
        return Value{this, int(nodes_.size()) - 1};
    }

    Value constant(Tensor t) { return leaf(std::move(t)); }

    const Tensor& val(int id) const { return nodes_[std::size_t(id)].value; }

    // Gradient buffer for a node, allocated to zeros on first touch.
    Tensor& grad_buf(int id) {
        Tensor& g = grads_[std::size_t(id)];
        if (g.empty() && nodes_[std::size_t(id)].value.size() > 0)
            g = Tensor::zeros(nodes_[std::size_t(id)].value.shape());
        return g;
    }
    bool has_grad(int id) const { return !grads_[std::size_t(id)].empty(); }

    using BackFn = std::function<void(Tape&, int)>;

    Value record(Tensor out, std::vector<int> parents, BackFn back) {
        out.require_finite("op output");
        nodes_.push_back(Node{std::move(out), std::move(parents), std::move(back), {}});
        return Value{this, int(nodes_.size()) - 1};
    }

    GradientMap backward(const Value& loss) {
        if (loss.tape != this) throw ContractError("backward: loss lives on another tape");
        if (loss.val().size() != 1) throw ContractError("backward: loss must be scalar");

        grads_.assign(nodes_.size(), Tensor());
        grad_buf(loss.id)[0] = 1.0;
        for (int id = loss.id; id >= 0; --id) {
            Node& n = nodes_[std::size_t(id)];
            if (n.back && has_grad(id)) n.back(*this, id);
        }

        GradientMap out;
        for (std::size_t id = 0; id < nodes_.size(); ++id) {
            const Node& n = nodes_[id];
            if (n.name.empty()) continue;
            out[n.name] = has_grad(int(id)) ? grads_[id] : Tensor::zeros(n.value.shape());
        }
        return out;
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        std::vector<int> parents;
        BackFn back;
        std::string name;
    };

    std::vector<Node> nodes_;
    std::vector<Tensor> grads_;
};

inline const Tensor& Value::val() const { return tape->val(id); }

namespace detail {
inline Tape& common_tape(const Value& a, const Value& b) {
    if (a.tape != b.tape) throw ContractError("operands live on different tapes");
    return *a.tape;
}
} // namespace detail

// ---------------------------------------------------------------------------
// Elementwise ops

inline Value add(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    require_same_shape(a.val(), b.val(), "add");
    Tensor out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += b.val()[i];
    return t.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < g.size(); ++i) { ga[i] += g[i]; gb[i] += g[i]; }
    });
}

inline Value sub(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    require_same_shape(a.val(), b.val(), "sub");
    Tensor out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] -= b.val()[i];
    return t.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < g.size(); ++i) { ga[i] += g[i]; gb[i] -= g[i]; }
    });
}

inline Value mul(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    require_same_shape(a.val(), b.val(), "mul");
    Tensor out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= b.val()[i];
    return t.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& av = tp.val(pa);
        const Tensor& bv = tp.val(pb);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < g.size(); ++i) {
            ga[i] += g[i] * bv[i];
            gb[i] += g[i] * av[i];
        }
    });
}

inline Value scale(Value a, double c) {
    Tensor out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] *= c;
    return a.tape->record(std::move(out), {a.id}, [pa = a.id, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += c * g[i];
    });
}

inline Value add_scalar(Value a, double c) {
    Tensor out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += c;
    return a.tape->record(std::move(out), {a.id}, [pa = a.id](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    });
}

inline Value silu(Value a) {
    Tensor out = a.val();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = out[i];
        out[i] = x / (1.0 + std::exp(-x));
    }
    return a.tape->record(std::move(out), {a.id}, [pa = a.id](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& x = tp.val(pa);
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t i = 0; i < g.size(); ++i) {
            const double s = 1.0 / (1.0 + std::exp(-x[i]));
            ga[i] += g[i] * s * (1.0 + x[i] * (1.0 - s));
        }
    });
}

// ---------------------------------------------------------------------------
// Matrix ops

inline Value matmul(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    Tensor out = matmul_plain(a.val(), b.val());
    return t.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& av = tp.val(pa);
        const Tensor& bv = tp.val(pb);
        const std::size_t m = av.extent(0), k = av.extent(1), n = bv.extent(1);
        matmul_nt_acc(g.data(), bv.data(), tp.grad_buf(pa).data(), m, n, k); // dA = g * B^T
        matmul_tn_acc(av.data(), g.data(), tp.grad_buf(pb).data(), k, m, n); // dB = A^T * g
    });
}

namespace detail {
inline void require_bmm(const Tensor& a, const Tensor& b, const char* where) {
    if (a.rank() != 3 || b.rank() != 3 || a.extent(0) != b.extent(0))
        throw ShapeError(std::string(where) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}
} // namespace detail

// batched (B,M,K)x(B,K,N) -> (B,M,N)
inline Value bmm(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    detail::require_bmm(a.val(), b.val(), "bmm");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.extent(2) != bv.extent(1))
        throw ShapeError("bmm: inner extents differ, " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const std::size_t nb = av.extent(0), m = av.extent(1), k = av.extent(2), n = bv.extent(2);
    Tensor out({nb, m, n});
    for (std::size_t i = 0; i < nb; ++i)
        matmul_nn_acc(av.data() + i * m * k, bv.data() + i * k * n, out.data() + i * m * n, m, k, n);
    return t.record(std::move(out), {a.id, b.id},
                    [pa = a.id, pb = b.id, nb, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& av2 = tp.val(pa);
        const Tensor& bv2 = tp.val(pb);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < nb; ++i) {
            matmul_nt_acc(g.data() + i * m * n, bv2.data() + i * k * n, ga.data() + i * m * k, m, n, k);
            matmul_tn_acc(av2.data() + i * m * k, g.data() + i * m * n, gb.data() + i * k * n, k, m, n);
        }
    });
}

// batched (B,M,K)x(B,N,K)^T -> (B,M,N); used for attention scores q k^T
inline Value bmm_nt(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    detail::require_bmm(a.val(), b.val(), "bmm_nt");
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.extent(2) != bv.extent(2))
        throw ShapeError("bmm_nt: inner extents differ, " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const std::size_t nb = av.extent(0), m = av.extent(1), k = av.extent(2), n = bv.extent(1);
    Tensor out({nb, m, n});
    for (std::size_t i = 0; i < nb; ++i)
        matmul_nt_acc(av.data() + i * m * k, bv.data() + i * n * k, out.data() + i * m * n, m, k, n);
    return t.record(std::move(out), {a.id, b.id},
                    [pa = a.id, pb = b.id, nb, m, k, n](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& av2 = tp.val(pa);
        const Tensor& bv2 = tp.val(pb);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < nb; ++i) {
            // dA = g * B ; dB = g^T * A
            matmul_nn_acc(g.data() + i * m * n, bv2.data() + i * n * k, ga.data() + i * m * k, m, n, k);
            matmul_tn_acc(g.data() + i * m * n, av2.data() + i * m * k, gb.data() + i * n * k, n, m, k);
        }
    });
}

// ---------------------------------------------------------------------------
// Shape ops

// (N,C) -> (H, N, C/H)
inline Value split_heads(Value a, std::size_t heads) {
    const Tensor& av = a.val();
    if (av.rank() != 2) throw ShapeError("split_heads: expects rank-2, got " + shape_str(av.shape()));
    const std::size_t n = av.extent(0), c = av.extent(1);
    if (heads == 0 || c % heads != 0)
        throw ShapeError("split_heads: head count " + std::to_string(heads) +
                         " does not divide channels " + std::to_string(c));
    const std::size_t d = c / heads;
    Tensor out({heads, n, d});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out(h, i, j) = av(i, h * d + j);
    return a.tape->record(std::move(out), {a.id}, [pa = a.id, heads, n, d](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    ga(i, h * d + j) += g(h, i, j);
    });
}

// (H, N, D) -> (N, H*D); exact inverse of split_heads
inline Value merge_heads(Value a) {
    const Tensor& av = a.val();
    if (av.rank() != 3) throw ShapeError("merge_heads: expects rank-3, got " + shape_str(av.shape()));
    const std::size_t heads = av.extent(0), n = av.extent(1), d = av.extent(2);
    Tensor out({n, heads * d});
    for (std::size_t h = 0; h < heads; ++h)
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out(i, h * d + j) = av(h, i, j);
    return a.tape->record(std::move(out), {a.id}, [pa = a.id, heads, n, d](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < d; ++j)
                    ga(h, i, j) += g(i, h * d + j);
    });
}

inline Value concat_rows(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(1) != bv.extent(1))
        throw ShapeError("concat_rows: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const std::size_t na = av.extent(0), nb = bv.extent(0), c = av.extent(1);
    Tensor out({na + nb, c});
    std::copy(av.data(), av.data() + na * c, out.data());
    std::copy(bv.data(), bv.data() + nb * c, out.data() + na * c);
    return t.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id, na, nb, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < na * c; ++i) ga[i] += g[i];
        for (std::size_t i = 0; i < nb * c; ++i) gb[i] += g[na * c + i];
    });
}

inline Value slice_rows(Value a, std::size_t begin, std::size_t count) {
    const Tensor& av = a.val();
    if (av.rank() != 2 || begin + count > av.extent(0))
        throw ShapeError("slice_rows: window [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") out of " + shape_str(av.shape()));
    const std::size_t c = av.extent(1);
    Tensor out({count, c});
    std::copy(av.data() + begin * c, av.data() + (begin + count) * c, out.data());
    return a.tape->record(std::move(out), {a.id}, [pa = a.id, begin, count, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t i = 0; i < count * c; ++i) ga[begin * c + i] += g[i];
    });
}

inline Value concat_cols(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    const Tensor& av = a.val();
    const Tensor& bv = b.val();
    if (av.rank() != 2 || bv.rank() != 2 || av.extent(0) != bv.extent(0))
        throw ShapeError("concat_cols: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const std::size_t n = av.extent(0), ca = av.extent(1), cb = bv.extent(1);
    Tensor out({n, ca + cb});
    for (std::size_t i = 0; i < n; ++i) {
        std::copy(av.data() + i * ca, av.data() + (i + 1) * ca, out.data() + i * (ca + cb));
        std::copy(bv.data() + i * cb, bv.data() + (i + 1) * cb, out.data() + i * (ca + cb) + ca);
    }
    return t.record(std::move(out), {a.id, b.id}, [pa = a.id, pb = b.id, n, ca, cb](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < n; ++i) {
            for (std::size_t j = 0; j < ca; ++j) ga(i, j) += g(i, j);
            for (std::size_t j = 0; j < cb; ++j) gb(i, j) += g(i, ca + j);
        }
    });
}

inline Value slice_cols(Value a, std::size_t begin, std::size_t count) {
    const Tensor& av = a.val();
    if (av.rank() != 2 || begin + count > av.extent(1))
        throw ShapeError("slice_cols: window [" + std::to_string(begin) + "," +
                         std::to_string(begin + count) + ") out of " + shape_str(av.shape()));
    const std::size_t n = av.extent(0);
    Tensor out({n, count});
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < count; ++j) out(i, j) = av(i, begin + j);
    return a.tape->record(std::move(out), {a.id},
                          [pa = a.id, begin, count](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        const std::size_t n = g.extent(0);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < count; ++j) ga(i, begin + j) += g(i, j);
    });
}

// ---------------------------------------------------------------------------
// Broadcast ops. Only last-axis (bias/gain) and per-row broadcasts exist;
// everything else is an explicit shape error.

// t(N,C) + b(C)
inline Value add_bias(Value a, Value bias) {
    Tape& t = detail::common_tape(a, bias);
    const Tensor& av = a.val();
    const Tensor& bv = bias.val();
    if (av.rank() != 2 || bv.size() != av.extent(1))
        throw ShapeError("add_bias: " + shape_str(av.shape()) + " vs " + shape_str(bv.shape()));
    const std::size_t n = av.extent(0), c = av.extent(1);
    Tensor out = av;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) += bv[j];
    return t.record(std::move(out), {a.id, bias.id}, [pa = a.id, pb = bias.id, n, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                ga(i, j) += g(i, j);
                gb[j] += g(i, j);
            }
    });
}

// t(N,C) * s(C), s broadcast over rows
inline Value mul_colwise(Value a, Value s) {
    Tape& t = detail::common_tape(a, s);
    const Tensor& av = a.val();
    const Tensor& sv = s.val();
    if (av.rank() != 2 || sv.size() != av.extent(1))
        throw ShapeError("mul_colwise: " + shape_str(av.shape()) + " vs " + shape_str(sv.shape()));
    const std::size_t n = av.extent(0), c = av.extent(1);
    Tensor out = av;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) *= sv[j];
    return t.record(std::move(out), {a.id, s.id}, [pa = a.id, ps = s.id, n, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& av2 = tp.val(pa);
        const Tensor& sv2 = tp.val(ps);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gs = tp.grad_buf(ps);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                ga(i, j) += g(i, j) * sv2[j];
                gs[j] += g(i, j) * av2(i, j);
            }
    });
}

// t(N,C) * w(N) or w(N,1), w broadcast over channels
inline Value mul_rowwise(Value a, Value w) {
    Tape& t = detail::common_tape(a, w);
    const Tensor& av = a.val();
    const Tensor& wv = w.val();
    if (av.rank() != 2 || wv.size() != av.extent(0))
        throw ShapeError("mul_rowwise: " + shape_str(av.shape()) + " vs " + shape_str(wv.shape()));
    const std::size_t n = av.extent(0), c = av.extent(1);
    Tensor out = av;
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) out(i, j) *= wv[i];
    return t.record(std::move(out), {a.id, w.id}, [pa = a.id, pw = w.id, n, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& av2 = tp.val(pa);
        const Tensor& wv2 = tp.val(pw);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gw = tp.grad_buf(pw);
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < c; ++j) {
                ga(i, j) += g(i, j) * wv2[i];
                gw[i] += g(i, j) * av2(i, j);
            }
    });
}

// ---------------------------------------------------------------------------
// Normalization / softmax / reductions

// Softmax along the last axis, stabilized by max subtraction. Rank 2 or 3.
inline Value softmax_lastdim(Value a) {
    const Tensor& av = a.val();
    if (av.rank() < 1) throw ShapeError("softmax_lastdim: scalar input");
    const std::size_t c = av.shape().back();
    if (c < 1) throw ShapeError("softmax_lastdim: empty last axis");
    const std::size_t rows = av.size() / c;
    Tensor out = av;
    for (std::size_t r = 0; r < rows; ++r) {
        double* row = out.data() + r * c;
        double mx = row[0];
        for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
    }
    return a.tape->record(std::move(out), {a.id}, [pa = a.id, rows, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& y = tp.val(self);
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t r = 0; r < rows; ++r) {
            const double* yr = y.data() + r * c;
            const double* gr = g.data() + r * c;
            double dot = 0.0;
            for (std::size_t j = 0; j < c; ++j) dot += yr[j] * gr[j];
            double* gar = ga.data() + r * c;
            for (std::size_t j = 0; j < c; ++j) gar[j] += yr[j] * (gr[j] - dot);
        }
    });
}

// Per-row normalization of t(N,C) followed by gain/bias affine.
inline Value layer_norm(Value a, Value gain, Value bias, double eps = 1e-6) {
    Tape& t = detail::common_tape(a, gain);
    detail::common_tape(a, bias);
    if (eps <= 0.0) throw ContractError("layer_norm: eps must be positive");
    const Tensor& av = a.val();
    if (av.rank() != 2) throw ShapeError("layer_norm: expects rank-2, got " + shape_str(av.shape()));
    const std::size_t n = av.extent(0), c = av.extent(1);
    if (gain.val().size() != c || bias.val().size() != c)
        throw ShapeError("layer_norm: gain/bias length must equal channels " + std::to_string(c));

    auto mean = std::make_shared<std::vector<double>>(n);
    auto rstd = std::make_shared<std::vector<double>>(n);
    Tensor out({n, c});
    for (std::size_t i = 0; i < n; ++i) {
        double mu = 0.0;
        for (std::size_t j = 0; j < c; ++j) mu += av(i, j);
        mu /= double(c);
        double var = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
            const double d = av(i, j) - mu;
            var += d * d;
        }
        var /= double(c);
        const double rs = 1.0 / std::sqrt(var + eps);
        (*mean)[i] = mu;
        (*rstd)[i] = rs;
        for (std::size_t j = 0; j < c; ++j)
            out(i, j) = (av(i, j) - mu) * rs * gain.val()[j] + bias.val()[j];
    }
    return t.record(std::move(out), {a.id, gain.id, bias.id},
                    [pa = a.id, pg = gain.id, pb = bias.id, mean, rstd, n, c](Tape& tp, int self) {
        const Tensor& g = tp.grad_buf(self);
        const Tensor& x = tp.val(pa);
        const Tensor& gn = tp.val(pg);
        Tensor& gx = tp.grad_buf(pa);
        Tensor& gg = tp.grad_buf(pg);
        Tensor& gb = tp.grad_buf(pb);
        for (std::size_t i = 0; i < n; ++i) {
            const double mu = (*mean)[i], rs = (*rstd)[i];
            double dnorm_mean = 0.0, dnorm_norm_mean = 0.0;
            for (std::size_t j = 0; j < c; ++j) {
                const double xhat = (x(i, j) - mu) * rs;
                const double dnorm = gn[j] * g(i, j);
                dnorm_mean += dnorm;
                dnorm_norm_mean += dnorm * xhat;
            }
            dnorm_mean /= double(c);
            dnorm_norm_mean /= double(c);
            for (std::size_t j = 0; j < c; ++j) {
                const double xhat = (x(i, j) - mu) * rs;
                const double dnorm = gn[j] * g(i, j);
                gx(i, j) += (dnorm - dnorm_mean - xhat * dnorm_norm_mean) * rs;
                gg[j] += xhat * g(i, j);
                gb[j] += g(i, j);
            }
        }
    });
}

inline Value sum(Value a) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.val().size(); ++i) s += a.val()[i];
    return a.tape->record(Tensor::scalar(s), {a.id}, [pa = a.id](Tape& tp, int self) {
        const double g = tp.grad_buf(self)[0];
        Tensor& ga = tp.grad_buf(pa);
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += g;
    });
}

// mean((a-b)^2) over all elements
inline Value mse(Value a, Value b) {
    Tape& t = detail::common_tape(a, b);
    require_same_shape(a.val(), b.val(), "mse");
    const std::size_t n = a.val().size();
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = a.val()[i] - b.val()[i];
        s += d * d;
    }
    return t.record(Tensor::scalar(s / double(n)), {a.id, b.id},
                    [pa = a.id, pb = b.id, n](Tape& tp, int self) {
        const double g = tp.grad_buf(self)[0];
        const Tensor& av = tp.val(pa);
        const Tensor& bv = tp.val(pb);
        Tensor& ga = tp.grad_buf(pa);
        Tensor& gb = tp.grad_buf(pb);
        const double k = 2.0 * g / double(n);
        for (std::size_t i = 0; i < n; ++i) {
            const double d = k * (av[i] - bv[i]);
            ga[i] += d;
            gb[i] -= d;
        }
    });
}

} // namespace dsdit
