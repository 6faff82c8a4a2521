// Full velocity model: token embedders, 2-D sinusoidal positions, timestep
// conditioning, a stack of decoupled-siamese (or M3) blocks, and the
// zero-initialized output head. Operates in pixel space on patch tokens.
//
// Block wiring, noisy branch:   adaLN-modulated norm -> shared Q/K/V ->
// two joint attentions (with LR and with Ref) -> lambda combine -> output
// projection, gated residual -> modulated norm -> MLP -> injection variant
// -> gated residual. Conditioning branches use plain learnable layer norms
// and ungated residuals unless cond_time_modulation is on.
#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>

#include "dsdit/attention.hpp"
#include "dsdit/config.hpp"
#include "dsdit/flow.hpp"
#include "dsdit/image.hpp"
#include "dsdit/plw.hpp"
#include "dsdit/rng.hpp"
#include "dsdit/tape.hpp"

namespace dsdit {

enum class Arch { dsdit, m3dit };
enum class InjectionKind { none, variant_a, variant_b, plw };

inline std::string to_string(Arch a) { return a == Arch::dsdit ? "dsdit" : "m3dit"; }
inline std::string to_string(InjectionKind k) {
    switch (k) {
        case InjectionKind::none: return "none";
        case InjectionKind::variant_a: return "variant_a";
        case InjectionKind::variant_b: return "variant_b";
        case InjectionKind::plw: return "plw";
    }
    return "?";
}

inline Arch arch_from_string(const std::string& s) {
    if (s == "dsdit") return Arch::dsdit;
    if (s == "m3dit") return Arch::m3dit;
    throw ContractError("unknown arch '" + s + "' (expected dsdit|m3dit)");
}

inline InjectionKind injection_from_string(const std::string& s) {
    if (s == "none") return InjectionKind::none;
    if (s == "variant_a") return InjectionKind::variant_a;
    if (s == "variant_b") return InjectionKind::variant_b;
    if (s == "plw") return InjectionKind::plw;
    throw ContractError("unknown injection '" + s + "' (expected none|variant_a|variant_b|plw)");
}

struct ModelConfig {
    std::size_t image_size = 32;
    std::size_t patch = 4;
    std::size_t dim = 64;
    std::size_t heads = 4;
    std::size_t blocks = 4;
    Arch arch = Arch::dsdit;
    InjectionKind injection = InjectionKind::plw;
    std::size_t time_embed_dim = 64;
    std::uint64_t seed = 0;
    bool qkv_bias = false;
    bool cond_time_modulation = false;  // timestep gates on conditioning branches
    bool lambda_gates_injection = false; // weak condition also suppresses Ref inside injection
    bool freeze_cond_tokens = false;     // ablation: conditioning streams not updated per block

    void validate() const {
        if (patch == 0 || image_size % patch != 0)
            throw ContractError("config: patch must divide image_size");
        if (heads == 0 || dim % heads != 0)
            throw ContractError("config: heads must divide dim");
        if (dim % 4 != 0)
            throw ContractError("config: dim must be a multiple of 4 for 2-D positions");
        if (blocks < 1) throw ContractError("config: blocks must be >= 1");
        if (time_embed_dim < 2 || time_embed_dim % 2 != 0)
            throw ContractError("config: time_embed_dim must be even and >= 2");
        if (arch == Arch::m3dit && injection == InjectionKind::plw)
            throw ContractError("config: plw injection is defined for the siamese path only");
    }

    bool operator==(const ModelConfig&) const = default;

    KvMap to_kv() const {
        KvMap kv;
        kv.set_u64("image_size", image_size);
        kv.set_u64("patch", patch);
        kv.set_u64("dim", dim);
        kv.set_u64("heads", heads);
        kv.set_u64("blocks", blocks);
        kv.set("arch", to_string(arch));
        kv.set("injection", to_string(injection));
        kv.set_u64("time_embed_dim", time_embed_dim);
        kv.set_u64("seed", seed);
        kv.set_bool("qkv_bias", qkv_bias);
        kv.set_bool("cond_time_modulation", cond_time_modulation);
        kv.set_bool("lambda_gates_injection", lambda_gates_injection);
        kv.set_bool("freeze_cond_tokens", freeze_cond_tokens);
        return kv;
    }

    static ModelConfig from_kv(const KvMap& kv) {
        ModelConfig c;
        c.image_size = kv.get_u64("image_size");
        c.patch = kv.get_u64("patch");
        c.dim = kv.get_u64("dim");
        c.heads = kv.get_u64("heads");
        c.blocks = kv.get_u64("blocks");
        c.arch = arch_from_string(kv.get("arch"));
        c.injection = injection_from_string(kv.get("injection"));
        c.time_embed_dim = kv.get_u64("time_embed_dim");
        c.seed = kv.get_u64("seed");
        c.qkv_bias = kv.get_bool("qkv_bias");
        c.cond_time_modulation = kv.get_bool("cond_time_modulation");
        c.lambda_gates_injection = kv.get_bool("lambda_gates_injection");
        c.freeze_cond_tokens = kv.get_bool("freeze_cond_tokens");
        c.validate();
        return c;
    }
};

// ---------------------------------------------------------------------------
// Fixed embeddings

// 2-D sinusoidal table, N x C: first half encodes the grid row, second half
// the grid column, each as [sin(f_i pos) ... | cos(f_i pos) ...].
inline Tensor positional_table_2d(const PatchGrid& grid, std::size_t c) {
    if (c % 4 != 0) throw ShapeError("positional table: dim must be a multiple of 4");
    const std::size_t half = c / 2, quarter = c / 4;
    Tensor table({grid.token_count(), c});
    for (std::size_t r = 0; r < grid.rows; ++r)
        for (std::size_t col = 0; col < grid.cols; ++col) {
            const std::size_t n = r * grid.cols + col;
            for (std::size_t i = 0; i < quarter; ++i) {
                const double freq = std::pow(10000.0, -double(i) / double(quarter));
                table(n, i) = std::sin(double(r) * freq);
                table(n, quarter + i) = std::cos(double(r) * freq);
                table(n, half + i) = std::sin(double(col) * freq);
                table(n, half + quarter + i) = std::cos(double(col) * freq);
            }
        }
    return table;
}

// Sinusoidal embedding of t in [0,1], scaled by 1000 before the usual
// frequency ladder; layout [cos | sin].
inline Tensor timestep_embedding(double t, std::size_t dim) {
    const std::size_t half = dim / 2;
    Tensor emb({1, dim});
    for (std::size_t i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * double(i) / double(half));
        const double angle = t * 1000.0 * freq;
        emb(0, i) = std::cos(angle);
        emb(0, half + i) = std::sin(angle);
    }
    return emb;
}

// ---------------------------------------------------------------------------

// Per-forward view of the parameter store: every parameter becomes a named
// tape leaf so one backward pass yields the full GradientMap.
struct BoundParams {
    std::map<std::string, Value> values;

    Value operator()(const std::string& name) const {
        auto it = values.find(name);
        if (it == values.end()) throw ContractError("unbound param '" + name + "'");
        return it->second;
    }
};

inline BoundParams bind_params(Tape& tape, const ParamStore& store) {
    BoundParams bound;
    for (const auto& [name, tensor] : store)
        bound.values.emplace(name, tape.leaf(tensor, name));
    return bound;
}

class DsDitModel : public VelocityModel {
public:
    explicit DsDitModel(ModelConfig cfg) : cfg_(cfg) {
        cfg_.validate();
        grid_ = make_patch_grid(cfg_.image_size, cfg_.image_size, cfg_.patch);
        pos_ = positional_table_2d(grid_, cfg_.dim);
        init_params();
    }

    // Construct around existing weights (checkpoint load).
    DsDitModel(ModelConfig cfg, ParamStore params) : cfg_(cfg) {
        cfg_.validate();
        grid_ = make_patch_grid(cfg_.image_size, cfg_.image_size, cfg_.patch);
        pos_ = positional_table_2d(grid_, cfg_.dim);
        init_params();
        for (auto& [name, tensor] : params_) {
            if (!params.has(name))
                throw ContractError("checkpoint params missing '" + name + "'");
            const Tensor& loaded = params.at(name);
            require_same_shape(tensor, loaded, "checkpoint param");
            tensor = loaded;
        }
        if (params.size() != params_.size())
            throw ContractError("checkpoint has extra parameters");
    }

    const ModelConfig& config() const { return cfg_; }
    const PatchGrid& grid() const { return grid_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    // Velocity prediction in token space; the caller owns the tape.
    Value forward_tokens(Tape& tape, const BoundParams& p, const Tensor& xt_tokens,
                         double t, const Tensor& lr_tokens, const Tensor& ref_tokens,
                         double lambda) const {
        if (lambda < 0.0) throw ContractError("forward: lambda must be >= 0");
        const std::size_t n = grid_.token_count();
        const std::size_t d = grid_.token_dim();
        const std::size_t c = cfg_.dim;
        for (const Tensor* tok : {&xt_tokens, &lr_tokens, &ref_tokens})
            if (tok->shape() != Shape{n, d})
                throw ShapeError("forward: token matrix must be " + std::to_string(n) + "x" +
                                 std::to_string(d) + ", got " + shape_str(tok->shape()));

        Value pos = tape.constant(pos_);
        Value ones_c = tape.constant(Tensor::full({c}, 1.0));
        Value zeros_c = tape.constant(Tensor::zeros({c}));

        auto embed = [&](const Tensor& tok, const char* branch) {
            Value e = add_bias(matmul(tape.constant(tok), p(std::string("embed.") + branch + ".w")),
                               p(std::string("embed.") + branch + ".b"));
            return add(e, pos);
        };
        Value z = embed(xt_tokens, "z");
        Value l = embed(lr_tokens, "l");
        Value r = embed(ref_tokens, "r");

        // timestep feature
        Value temb = tape.constant(timestep_embedding(t, cfg_.time_embed_dim));
        Value tf = add_bias(matmul(silu(add_bias(matmul(temb, p("time.mlp1.w")), p("time.mlp1.b"))),
                                   p("time.mlp2.w")),
                            p("time.mlp2.b"));
        Value stf = silu(tf);

        auto modulate = [&](Value x, Value shift, Value scale_v) {
            return add_bias(mul_colwise(x, add_scalar(scale_v, 1.0)), shift);
        };
        auto mlp = [&](Value x, const std::string& prefix) {
            Value h = silu(add_bias(matmul(x, p(prefix + ".w1")), p(prefix + ".b1")));
            return add_bias(matmul(h, p(prefix + ".w2")), p(prefix + ".b2"));
        };
        auto proj_of = [&](const std::string& prefix) {
            ProjValues pv;
            pv.wq = p(prefix + ".wq");
            pv.wk = p(prefix + ".wk");
            pv.wv = p(prefix + ".wv");
            if (cfg_.qkv_bias) {
                pv.bq = p(prefix + ".bq");
                pv.bk = p(prefix + ".bk");
                pv.bv = p(prefix + ".bv");
            }
            pv.heads = cfg_.heads;
            return pv;
        };

        const double ref_gate = cfg_.lambda_gates_injection ? lambda : 1.0;

        for (std::size_t b = 0; b < cfg_.blocks; ++b) {
            const std::string bk = "block" + std::to_string(b);

            // noisy-branch modulation: shift/scale/gate for attention and MLP
            Value mod = add_bias(matmul(stf, p(bk + ".z.mod.w")), p(bk + ".z.mod.b"));
            std::array<Value, 6> m;
            for (std::size_t i = 0; i < 6; ++i) m[i] = slice_cols(mod, i * c, c);

            auto cond_norm = [&](Value x, const std::string& branch, int which,
                                 std::array<Value, 3>* gates) {
                if (!cfg_.cond_time_modulation) {
                    const std::string ln = bk + "." + branch + ".ln" + std::to_string(which);
                    return layer_norm(x, p(ln + ".g"), p(ln + ".b"));
                }
                Value cmod = add_bias(matmul(stf, p(bk + "." + branch + ".mod.w")),
                                      p(bk + "." + branch + ".mod.b"));
                const std::size_t base = which == 1 ? 0 : 3;
                if (gates) (*gates)[2] = slice_cols(cmod, (base + 2) * c, c);
                return modulate(layer_norm(x, ones_c, zeros_c),
                                slice_cols(cmod, base * c, c), slice_cols(cmod, (base + 1) * c, c));
            };

            Value az = modulate(layer_norm(z, ones_c, zeros_c), m[0], m[1]);
            std::array<Value, 3> lg{}, rg{};
            Value al = cond_norm(l, "l", 1, &lg);
            Value ar = cond_norm(r, "r", 1, &rg);

            const ProjValues pz = proj_of(bk + ".z.attn");
            const ProjValues pl = proj_of(bk + ".l.attn");
            const ProjValues pr = proj_of(bk + ".r.attn");

            Value attn_z, attn_l, attn_r;
            if (cfg_.arch == Arch::dsdit) {
                auto path_l = joint_attention_tape(az, al, pz, pl);
                auto path_r = joint_attention_tape(az, ar, pz, pr);
                attn_z = siamese_combine_tape(path_l.noisy, path_r.noisy, lambda);
                attn_l = path_l.cond;
                attn_r = path_r.cond;
            } else {
                auto m3 = m3_attention_tape(az, al, ar, pz, pl, pr);
                attn_z = m3.noisy;
                attn_l = m3.lr;
                attn_r = m3.ref;
            }

            auto out_proj = [&](Value x, const std::string& branch) {
                return add_bias(matmul(x, p(bk + "." + branch + ".attn.wo")),
                                p(bk + "." + branch + ".attn.bo"));
            };
            z = add(z, mul_colwise(out_proj(attn_z, "z"), m[2]));
            if (!cfg_.freeze_cond_tokens) {
                Value dl = out_proj(attn_l, "l");
                Value dr = out_proj(attn_r, "r");
                if (cfg_.cond_time_modulation) {
                    dl = mul_colwise(dl, lg[2]);
                    dr = mul_colwise(dr, rg[2]);
                }
                l = add(l, dl);
                r = add(r, dr);
            }

            Value mz = modulate(layer_norm(z, ones_c, zeros_c), m[3], m[4]);
            Value h_z = mlp(mz, bk + ".z.mlp");
            std::array<Value, 3> lg2{}, rg2{};
            Value h_l = mlp(cond_norm(l, "l", 2, &lg2), bk + ".l.mlp");
            Value h_r = mlp(cond_norm(r, "r", 2, &rg2), bk + ".r.mlp");

            Value h_z_fused = h_z;
            switch (cfg_.injection) {
                case InjectionKind::none:
                    break;
                case InjectionKind::plw: {
                    PLWValues pv{p(bk + ".plw.w1"), p(bk + ".plw.b1"), p(bk + ".plw.w2"),
                                 p(bk + ".plw.b2"), p(bk + ".plw.w3"), p(bk + ".plw.b3"),
                                 p(bk + ".plw.zl.w"), p(bk + ".plw.zl.b")};
                    h_z_fused = inject_plw_tape(h_z, h_l, h_r, pv, ref_gate);
                    break;
                }
                case InjectionKind::variant_a: {
                    VariantAValues pv{p(bk + ".inj.a.l.w"), p(bk + ".inj.a.l.b"),
                                      p(bk + ".inj.a.r.w"), p(bk + ".inj.a.r.b")};
                    h_z_fused = inject_variant_a_tape(h_z, h_l, h_r, pv, ref_gate);
                    break;
                }
                case InjectionKind::variant_b: {
                    VariantBValues pv{p(bk + ".inj.b.w"), p(bk + ".inj.b.b")};
                    h_z_fused = inject_variant_b_tape(h_z, h_l, h_r, pv, ref_gate);
                    break;
                }
            }

            z = add(z, mul_colwise(h_z_fused, m[5]));
            if (!cfg_.freeze_cond_tokens) {
                Value dl = h_l;
                Value dr = h_r;
                if (cfg_.cond_time_modulation) {
                    dl = mul_colwise(dl, lg2[2]);
                    dr = mul_colwise(dr, rg2[2]);
                }
                l = add(l, dl);
                r = add(r, dr);
            }
        }

        Value fmod = add_bias(matmul(stf, p("final.mod.w")), p("final.mod.b"));
        Value xf = modulate(layer_norm(z, ones_c, zeros_c),
                            slice_cols(fmod, 0, c), slice_cols(fmod, c, c));
        return add_bias(matmul(xf, p("head.w")), p("head.b"));
    }

    // VelocityModel interface: pixel-space in, pixel-space out.
    Tensor velocity(const Tensor& xt, double t, const RasterImage& lr_up,
                    const RasterImage& ref, double lambda) const override {
        check_image_inputs(xt, lr_up, ref);
        Tape tape;
        BoundParams bound = bind_params(tape, params_);
        Value v = forward_tokens(tape, bound, patchify_tensor(xt, cfg_.patch), t,
                                 patchify_tensor(lr_up.to_tensor(), cfg_.patch),
                                 patchify_tensor(ref.to_tensor(), cfg_.patch), lambda);
        return unpatchify_tensor(v.val(), grid_);
    }

    void check_image_inputs(const Tensor& xt, const RasterImage& lr_up,
                            const RasterImage& ref) const {
        const std::size_t s = cfg_.image_size;
        if (xt.shape() != Shape{s, s, 3})
            throw ShapeError("velocity: state must be " + std::to_string(s) + "x" +
                             std::to_string(s) + "x3, got " + shape_str(xt.shape()));
        if (lr_up.height != s || lr_up.width != s || ref.height != s || ref.width != s)
            throw ShapeError("velocity: conditions must be pre-upsampled to model resolution");
    }

private:
    void init_params() {
        SeededRng rng(cfg_.seed);
        const std::size_t c = cfg_.dim;
        const std::size_t d = grid_.token_dim();
        const std::size_t td = cfg_.time_embed_dim;
        const double std_init = 0.02;

        auto trunc = [&](Shape shape) { return rng.truncated_normal_tensor(std::move(shape), std_init); };

        // token embedders; LR and Ref start from the same draw
        params_.add("embed.z.w", trunc({d, c}));
        params_.add("embed.z.b", Tensor::zeros({c}));
        Tensor embed_cond = trunc({d, c});
        params_.add("embed.l.w", embed_cond);
        params_.add("embed.l.b", Tensor::zeros({c}));
        params_.add("embed.r.w", embed_cond);
        params_.add("embed.r.b", Tensor::zeros({c}));

        params_.add("time.mlp1.w", trunc({td, c}));
        params_.add("time.mlp1.b", Tensor::zeros({c}));
        params_.add("time.mlp2.w", trunc({c, c}));
        params_.add("time.mlp2.b", Tensor::zeros({c}));

        struct BranchDraw {
            Tensor wq, wk, wv, wo, mlp_w1, mlp_w2;
        };
        auto draw_branch = [&]() {
            BranchDraw bd;
            bd.wq = trunc({c, c});
            bd.wk = trunc({c, c});
            bd.wv = trunc({c, c});
            bd.wo = trunc({c, c});
            bd.mlp_w1 = trunc({c, 4 * c});
            bd.mlp_w2 = trunc({4 * c, c});
            return bd;
        };
        auto add_branch = [&](const std::string& prefix, const BranchDraw& bd, bool noisy) {
            params_.add(prefix + ".attn.wq", bd.wq);
            params_.add(prefix + ".attn.wk", bd.wk);
            params_.add(prefix + ".attn.wv", bd.wv);
            if (cfg_.qkv_bias) {
                params_.add(prefix + ".attn.bq", Tensor::zeros({c}));
                params_.add(prefix + ".attn.bk", Tensor::zeros({c}));
                params_.add(prefix + ".attn.bv", Tensor::zeros({c}));
            }
            params_.add(prefix + ".attn.wo", bd.wo);
            params_.add(prefix + ".attn.bo", Tensor::zeros({c}));
            params_.add(prefix + ".mlp.w1", bd.mlp_w1);
            params_.add(prefix + ".mlp.b1", Tensor::zeros({4 * c}));
            params_.add(prefix + ".mlp.w2", bd.mlp_w2);
            params_.add(prefix + ".mlp.b2", Tensor::zeros({c}));
            if (noisy || cfg_.cond_time_modulation) {
                params_.add(prefix + ".mod.w", Tensor::zeros({c, 6 * c}));
                params_.add(prefix + ".mod.b", Tensor::zeros({6 * c}));
            }
            if (!noisy && !cfg_.cond_time_modulation) {
                params_.add(prefix + ".ln1.g", Tensor::full({c}, 1.0));
                params_.add(prefix + ".ln1.b", Tensor::zeros({c}));
                params_.add(prefix + ".ln2.g", Tensor::full({c}, 1.0));
                params_.add(prefix + ".ln2.b", Tensor::zeros({c}));
            }
        };

        for (std::size_t b = 0; b < cfg_.blocks; ++b) {
            const std::string bk = "block" + std::to_string(b);
            add_branch(bk + ".z", draw_branch(), true);
            const BranchDraw cond = draw_branch(); // one draw, two branches
            add_branch(bk + ".l", cond, false);
            add_branch(bk + ".r", cond, false);

            switch (cfg_.injection) {
                case InjectionKind::none:
                    break;
                case InjectionKind::plw: {
                    PLWParams plw = PLWParams::init(c, rng);
                    params_.add(bk + ".plw.w1", plw.w1);
                    params_.add(bk + ".plw.b1", plw.b1);
                    params_.add(bk + ".plw.w2", plw.w2);
                    params_.add(bk + ".plw.b2", plw.b2);
                    params_.add(bk + ".plw.w3", plw.w3);
                    params_.add(bk + ".plw.b3", plw.b3);
                    params_.add(bk + ".plw.zl.w", plw.zl_w);
                    params_.add(bk + ".plw.zl.b", plw.zl_b);
                    break;
                }
                case InjectionKind::variant_a:
                    params_.add(bk + ".inj.a.l.w", Tensor::zeros({c, c}));
                    params_.add(bk + ".inj.a.l.b", Tensor::zeros({c}));
                    params_.add(bk + ".inj.a.r.w", Tensor::zeros({c, c}));
                    params_.add(bk + ".inj.a.r.b", Tensor::zeros({c}));
                    break;
                case InjectionKind::variant_b:
                    params_.add(bk + ".inj.b.w", Tensor::zeros({c, c}));
                    params_.add(bk + ".inj.b.b", Tensor::zeros({c}));
                    break;
            }
        }

        params_.add("final.mod.w", Tensor::zeros({c, 2 * c}));
        params_.add("final.mod.b", Tensor::zeros({2 * c}));
        params_.add("head.w", Tensor::zeros({c, d}));
        params_.add("head.b", Tensor::zeros({d}));
    }

    ModelConfig cfg_;
    PatchGrid grid_;
    Tensor pos_;
    ParamStore params_;
};

inline DsDitModel build_model(const ModelConfig& cfg) { return DsDitModel(cfg); }

} // namespace dsdit
