// Post-attention local fusion. The Patch-Level Weights module concatenates
// the three branches' MLP outputs, maps them through a three-layer MLP
// (3C -> 2C -> C -> 2, SiLU between layers) to per-patch logits, softmaxes
// into convex LR/Ref weights, and injects the weighted sum through a
// zero-initialized linear so the whole module is an exact identity at init.
// Variants A and B are the simpler ablation injections.
#pragma once

#include "dsdit/rng.hpp"
#include "dsdit/tape.hpp"

namespace dsdit {

struct PLWParams {
    Tensor w1, b1; // 3C x 2C
    Tensor w2, b2; // 2C x C
    Tensor w3, b3; // C x 2
    Tensor zl_w, zl_b; // zero-initialized C x C linear

    static PLWParams init(std::size_t c, SeededRng& rng) {
        PLWParams p;
        p.w1 = rng.truncated_normal_tensor({3 * c, 2 * c}, 0.02);
        p.b1 = Tensor::zeros({2 * c});
        p.w2 = rng.truncated_normal_tensor({2 * c, c}, 0.02);
        p.b2 = Tensor::zeros({c});
        p.w3 = rng.truncated_normal_tensor({c, 2}, 0.02);
        p.b3 = Tensor::zeros({2});
        p.zl_w = Tensor::zeros({c, c});
        p.zl_b = Tensor::zeros({c});
        return p;
    }
};

struct PLWValues {
    Value w1, b1, w2, b2, w3, b3, zl_w, zl_b;
};

struct VariantAParams {
    Tensor zl_l_w, zl_l_b; // zero-initialized C x C
    Tensor zl_r_w, zl_r_b;

    static VariantAParams init(std::size_t c) {
        return {Tensor::zeros({c, c}), Tensor::zeros({c}),
                Tensor::zeros({c, c}), Tensor::zeros({c})};
    }
};

struct VariantAValues {
    Value zl_l_w, zl_l_b, zl_r_w, zl_r_b;
};

struct VariantBParams {
    Tensor zl_w, zl_b;

    static VariantBParams init(std::size_t c) {
        return {Tensor::zeros({c, c}), Tensor::zeros({c})};
    }
};

struct VariantBValues {
    Value zl_w, zl_b;
};

namespace detail {

inline void require_post_attention(const Tensor& hz, const Tensor& hl, const Tensor& hr) {
    require_same_shape(hz, hl, "injection");
    require_same_shape(hz, hr, "injection");
    if (hz.rank() != 2) throw ShapeError("injection: tokens must be NxC");
}

} // namespace detail

struct PatchWeightValues {
    Value lr;  // N x 1
    Value ref; // N x 1
};

// [H^l, H^r, H^z] -> weight MLP -> Nx2 logits -> last-dim softmax -> split.
// The two columns sum to 1 per patch by construction.
inline PatchWeightValues compute_patch_weights_tape(Value h_l, Value h_r, Value h_z,
                                                    const PLWValues& p) {
    detail::require_post_attention(h_z.val(), h_l.val(), h_r.val());
    Value x = concat_cols(concat_cols(h_l, h_r), h_z);
    Value a1 = silu(add_bias(matmul(x, p.w1), p.b1));
    Value a2 = silu(add_bias(matmul(a1, p.w2), p.b2));
    Value logits = add_bias(matmul(a2, p.w3), p.b3);
    Value weights = softmax_lastdim(logits);
    return {slice_cols(weights, 0, 1), slice_cols(weights, 1, 1)};
}

// H~^z = H^z + ZeroLinear(W^l . H^l + W^r . H^r); ref_scale gates the Ref
// summand when the weak condition is configured to reach into the injection.
inline Value inject_plw_tape(Value h_z, Value h_l, Value h_r, const PLWValues& p,
                             double ref_scale = 1.0) {
    auto w = compute_patch_weights_tape(h_l, h_r, h_z, p);
    Value ref_term = mul_rowwise(h_r, w.ref);
    if (ref_scale != 1.0) ref_term = scale(ref_term, ref_scale);
    Value fused = add(mul_rowwise(h_l, w.lr), ref_term);
    return add(h_z, add_bias(matmul(fused, p.zl_w), p.zl_b));
}

// H~^z = H^z + ZeroLinear_l(H^l) + ZeroLinear_r(H^r)
inline Value inject_variant_a_tape(Value h_z, Value h_l, Value h_r, const VariantAValues& p,
                                   double ref_scale = 1.0) {
    detail::require_post_attention(h_z.val(), h_l.val(), h_r.val());
    Value lr_term = add_bias(matmul(h_l, p.zl_l_w), p.zl_l_b);
    Value ref_term = add_bias(matmul(h_r, p.zl_r_w), p.zl_r_b);
    if (ref_scale != 1.0) ref_term = scale(ref_term, ref_scale);
    return add(h_z, add(lr_term, ref_term));
}

// H~^z = H^z + ZeroLinear(H^l + H^r)
inline Value inject_variant_b_tape(Value h_z, Value h_l, Value h_r, const VariantBValues& p,
                                   double ref_scale = 1.0) {
    detail::require_post_attention(h_z.val(), h_l.val(), h_r.val());
    Value r = ref_scale != 1.0 ? scale(h_r, ref_scale) : h_r;
    Value fused = add(h_l, r);
    return add(h_z, add_bias(matmul(fused, p.zl_w), p.zl_b));
}

// ---------------------------------------------------------------------------
// Plain-tensor entry points

namespace detail {

inline PLWValues bind_plw(Tape& t, const PLWParams& p) {
    return {t.constant(p.w1), t.constant(p.b1), t.constant(p.w2), t.constant(p.b2),
            t.constant(p.w3), t.constant(p.b3), t.constant(p.zl_w), t.constant(p.zl_b)};
}

} // namespace detail

struct PatchWeights {
    Tensor lr;  // N x 1
    Tensor ref; // N x 1
};

inline PatchWeights compute_patch_weights(const Tensor& h_l, const Tensor& h_r,
                                          const Tensor& h_z, const PLWParams& params) {
    Tape tape;
    auto w = compute_patch_weights_tape(tape.constant(h_l), tape.constant(h_r),
                                        tape.constant(h_z), detail::bind_plw(tape, params));
    return {w.lr.val(), w.ref.val()};
}

inline Tensor inject_plw(const Tensor& h_z, const Tensor& h_l, const Tensor& h_r,
                         const PLWParams& params) {
    Tape tape;
    return inject_plw_tape(tape.constant(h_z), tape.constant(h_l), tape.constant(h_r),
                           detail::bind_plw(tape, params))
        .val();
}

inline Tensor inject_variant_a(const Tensor& h_z, const Tensor& h_l, const Tensor& h_r,
                               const VariantAParams& params) {
    Tape tape;
    VariantAValues v{tape.constant(params.zl_l_w), tape.constant(params.zl_l_b),
                     tape.constant(params.zl_r_w), tape.constant(params.zl_r_b)};
    return inject_variant_a_tape(tape.constant(h_z), tape.constant(h_l), tape.constant(h_r), v)
        .val();
}

inline Tensor inject_variant_b(const Tensor& h_z, const Tensor& h_l, const Tensor& h_r,
                               const VariantBParams& params) {
    Tape tape;
    VariantBValues v{tape.constant(params.zl_w), tape.constant(params.zl_b)};
    return inject_variant_b_tape(tape.constant(h_z), tape.constant(h_l), tape.constant(h_r), v)
        .val();
}

} // namespace dsdit
