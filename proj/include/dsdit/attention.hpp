// Joint MM-attention between the noisy branch and one conditioning branch,
// the siamese lambda-scaled combination, and the M3 three-way baseline where
// all modalities attend in a single concatenated sequence.
//
// A block builds exactly one noisy-branch Q/K/V set; both conditioning paths
// receive that same instance, so the LR and Ref interactions are decoupled
// from each other while staying anchored to the same noisy tokens.
#pragma once

#include <optional>

#include "dsdit/image.hpp"
#include "dsdit/tape.hpp"

namespace dsdit {

struct BranchProjection {
    Tensor wq, wk, wv; // C x C
    std::optional<Tensor> bq, bk, bv;
    std::size_t heads = 1;
};

// Tape-side view of a BranchProjection.
struct ProjValues {
    Value wq, wk, wv;
    std::optional<Value> bq, bk, bv;
    std::size_t heads = 1;
};

struct JointAttentionOutput {
    Tensor noisy; // updated noisy tokens, before any output projection
    Tensor cond;  // updated conditioning tokens
};

namespace detail {

inline Value project(Value tokens, Value w, const std::optional<Value>& b) {
    Value out = matmul(tokens, w);
    if (b) out = add_bias(out, *b);
    return out;
}

inline void require_proj(const Tensor& tokens, const ProjValues& p, const char* branch) {
    const std::size_t c = tokens.extent(1);
    if (p.wq.val().shape() != Shape{c, c})
        throw ShapeError(std::string("attention: ") + branch + " projection must be " +
                         std::to_string(c) + "x" + std::to_string(c));
    if (p.heads == 0 || c % p.heads != 0)
        throw ShapeError(std::string("attention: head count must divide channels on ") + branch);
}

// Multi-head scaled dot-product attention over one sequence.
inline Value sdpa(Value q, Value k, Value v, std::size_t heads) {
    const std::size_t c = q.val().extent(1);
    const double scale_factor = 1.0 / std::sqrt(double(c / heads));
    Value qh = split_heads(q, heads);
    Value kh = split_heads(k, heads);
    Value vh = split_heads(v, heads);
    Value scores = scale(bmm_nt(qh, kh), scale_factor);
    Value attn = softmax_lastdim(scores);
    return merge_heads(bmm(attn, vh));
}

} // namespace detail

struct JointAttentionValues {
    Value noisy;
    Value cond;
};

// Eq. pair: concatenate noisy+cond Q/K/V along the sequence axis, attend over
// the joint 2N sequence, split back. proj_z must be the block's single noisy
// projection instance; the caller passes the same ProjValues to both paths.
inline JointAttentionValues joint_attention_tape(Value h_noisy, Value h_cond,
                                                 const ProjValues& proj_z,
                                                 const ProjValues& proj_c) {
    const Tensor& hz = h_noisy.val();
    const Tensor& hc = h_cond.val();
    if (hz.rank() != 2 || hc.rank() != 2 || hz.extent(1) != hc.extent(1))
        throw ShapeError("joint_attention: token channel dims differ, " +
                         shape_str(hz.shape()) + " vs " + shape_str(hc.shape()));
    if (proj_z.heads != proj_c.heads)
        throw ShapeError("joint_attention: branch head counts differ");
    detail::require_proj(hz, proj_z, "noisy");
    detail::require_proj(hc, proj_c, "cond");

    const std::size_t n_noisy = hz.extent(0);
    const std::size_t n_cond = hc.extent(0);

    Value q = concat_rows(detail::project(h_noisy, proj_z.wq, proj_z.bq),
                          detail::project(h_cond, proj_c.wq, proj_c.bq));
    Value k = concat_rows(detail::project(h_noisy, proj_z.wk, proj_z.bk),
                          detail::project(h_cond, proj_c.wk, proj_c.bk));
    Value v = concat_rows(detail::project(h_noisy, proj_z.wv, proj_z.bv),
                          detail::project(h_cond, proj_c.wv, proj_c.bv));

    Value out = detail::sdpa(q, k, v, proj_z.heads);
    return {slice_rows(out, 0, n_noisy), slice_rows(out, n_noisy, n_cond)};
}

struct M3AttentionValues {
    Value noisy;
    Value lr;
    Value ref;
};

// Appendix baseline: one attention over the concatenated 3N sequence.
inline M3AttentionValues m3_attention_tape(Value h_z, Value h_l, Value h_r,
                                           const ProjValues& proj_z,
                                           const ProjValues& proj_l,
                                           const ProjValues& proj_r) {
    const std::size_t c = h_z.val().extent(1);
    if (h_l.val().extent(1) != c || h_r.val().extent(1) != c)
        throw ShapeError("m3_attention: token channel dims differ");
    if (proj_z.heads != proj_l.heads || proj_z.heads != proj_r.heads)
        throw ShapeError("m3_attention: branch head counts differ");
    detail::require_proj(h_z.val(), proj_z, "noisy");
    detail::require_proj(h_l.val(), proj_l, "lr");
    detail::require_proj(h_r.val(), proj_r, "ref");

    const std::size_t nz = h_z.val().extent(0);
    const std::size_t nl = h_l.val().extent(0);
    const std::size_t nr = h_r.val().extent(0);

    Value q = concat_rows(concat_rows(detail::project(h_z, proj_z.wq, proj_z.bq),
                                      detail::project(h_l, proj_l.wq, proj_l.bq)),
                          detail::project(h_r, proj_r.wq, proj_r.bq));
    Value k = concat_rows(concat_rows(detail::project(h_z, proj_z.wk, proj_z.bk),
                                      detail::project(h_l, proj_l.wk, proj_l.bk)),
                          detail::project(h_r, proj_r.wk, proj_r.bk));
    Value v = concat_rows(concat_rows(detail::project(h_z, proj_z.wv, proj_z.bv),
                                      detail::project(h_l, proj_l.wv, proj_l.bv)),
                          detail::project(h_r, proj_r.wv, proj_r.bv));

    Value out = detail::sdpa(q, k, v, proj_z.heads);
    return {slice_rows(out, 0, nz), slice_rows(out, nz, nl), slice_rows(out, nz + nl, nr)};
}

// h_l^z + lambda * h_r^z (lambda = 1 is the training-time path)
inline Value siamese_combine_tape(Value h_l_z, Value h_r_z, double lambda) {
    if (lambda < 0.0) throw ContractError("siamese_combine: lambda must be >= 0");
    require_same_shape(h_l_z.val(), h_r_z.val(), "siamese_combine");
    return add(h_l_z, scale(h_r_z, lambda));
}

// ---------------------------------------------------------------------------
// Plain-tensor entry points (scratch tape underneath, same computation)

namespace detail {

inline ProjValues bind_proj(Tape& tape, const BranchProjection& p) {
    ProjValues pv;
    pv.wq = tape.constant(p.wq);
    pv.wk = tape.constant(p.wk);
    pv.wv = tape.constant(p.wv);
    if (p.bq) pv.bq = tape.constant(*p.bq);
    if (p.bk) pv.bk = tape.constant(*p.bk);
    if (p.bv) pv.bv = tape.constant(*p.bv);
    pv.heads = p.heads;
    return pv;
}

} // namespace detail

inline JointAttentionOutput joint_attention(const TokenSequence& noisy,
                                            const TokenSequence& cond,
                                            const BranchProjection& proj_z,
                                            const BranchProjection& proj_c) {
    Tape tape;
    auto out = joint_attention_tape(tape.constant(noisy.tokens), tape.constant(cond.tokens),
                                    detail::bind_proj(tape, proj_z),
                                    detail::bind_proj(tape, proj_c));
    return {out.noisy.val(), out.cond.val()};
}

struct M3AttentionOutput {
    Tensor noisy, lr, ref;
};

inline M3AttentionOutput m3_attention(const TokenSequence& z, const TokenSequence& l,
                                      const TokenSequence& r, const BranchProjection& proj_z,
                                      const BranchProjection& proj_l,
                                      const BranchProjection& proj_r) {
    Tape tape;
    auto out = m3_attention_tape(tape.constant(z.tokens), tape.constant(l.tokens),
                                 tape.constant(r.tokens), detail::bind_proj(tape, proj_z),
                                 detail::bind_proj(tape, proj_l), detail::bind_proj(tape, proj_r));
    return {out.noisy.val(), out.lr.val(), out.ref.val()};
}

inline Tensor siamese_combine(const Tensor& h_l_z, const Tensor& h_r_z, double lambda) {
    if (lambda < 0.0) throw ContractError("siamese_combine: lambda must be >= 0");
    require_same_shape(h_l_z, h_r_z, "siamese_combine");
    Tensor out = h_l_z;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += lambda * h_r_z[i];
    return out;
}

} // namespace dsdit
