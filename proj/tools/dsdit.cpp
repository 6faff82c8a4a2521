// dsdit: experiment CLI. Subcommands cover synthetic dataset generation,
// rectified-flow training, guided sampling, evaluation with masked metrics,
// the guidance-coefficient sweep, the injection ablation, a full-model
// gradient check, and oracle fixture emission.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>

#include "dsdit/checkpoint.hpp"
#include "dsdit/dtns.hpp"
#include "dsdit/grad_check.hpp"
#include "dsdit/harness.hpp"

using namespace dsdit;
namespace fs = std::filesystem;

namespace {

struct CliState {
    ExperimentConfig cfg;
    std::uint64_t seed = 0;
    bool guidance_off = false;
    std::string data_dir, eval_data_dir, out_path, report_path, sheet_path, loss_log_path;
    std::string ckpt_path, resume_path, lr_path, ref_path, trajectory_dir;
    std::string split = "train";
    std::string omegas_csv;
    std::string config_path;
};

// A config file is a flat key=value sheet shared across subcommands: its
// entries become implicit leading flags, so anything given explicitly on
// the command line wins. Keys a subcommand does not know are ignored.
void finish_subcommand(CLI::App* sub, std::string& config_path) {
    sub->add_option("--config", config_path, "flat key=value config file");
    for (CLI::Option* opt : sub->get_options())
        if (opt->get_expected() > 0 || opt->get_expected_min() == 0)
            opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
}

std::vector<std::string> inject_config_tokens(const CLI::App& app, std::vector<std::string> args) {
    const CLI::App* sub = nullptr;
    std::size_t sub_at = 0;
    for (std::size_t i = 0; i < args.size(); ++i) {
        for (const CLI::App* candidate : app.get_subcommands(nullptr))
            if (candidate->get_name() == args[i]) {
                sub = candidate;
                sub_at = i;
                break;
            }
        if (sub) break;
    }
    if (!sub) return args;

    std::string path;
    for (std::size_t i = sub_at + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
            break;
        }
    }
    if (path.empty()) return args;

    const KvMap kv = KvMap::from_file(path);
    std::vector<std::string> injected;
    for (const auto& [key, value] : kv) {
        if (key == "config") continue;
        if (sub->get_option_no_throw("--" + key) != nullptr)
            injected.push_back("--" + key + "=" + value);
    }
    args.insert(args.begin() + long(sub_at) + 1, injected.begin(), injected.end());
    return args;
}

void add_model_options(CLI::App* sub, ModelConfig& m) {
    sub->add_option("--image_size", m.image_size, "model/image resolution")->capture_default_str();
    sub->add_option("--patch", m.patch, "patch size")->capture_default_str();
    sub->add_option("--dim", m.dim, "token channel dim")->capture_default_str();
    sub->add_option("--heads", m.heads, "attention heads")->capture_default_str();
    sub->add_option("--blocks", m.blocks, "transformer blocks")->capture_default_str();
    sub->add_option("--time_embed_dim", m.time_embed_dim, "timestep embedding dim")
        ->capture_default_str();
    sub->add_option("--arch", [&m](const std::vector<std::string>& v) {
            m.arch = arch_from_string(v.back());
            return true;
        }, "architecture: dsdit|m3dit")
        ->default_str("dsdit");
    sub->add_option("--injection", [&m](const std::vector<std::string>& v) {
            m.injection = injection_from_string(v.back());
            return true;
        }, "injection: none|variant_a|variant_b|plw")
        ->default_str("plw");
    sub->add_flag("--qkv_bias", m.qkv_bias, "enable Q/K/V projection biases");
    sub->add_flag("--cond_time_modulation", m.cond_time_modulation,
                  "timestep-modulate conditioning branches");
    sub->add_flag("--lambda_gates_injection", m.lambda_gates_injection,
                  "weak condition also gates the Ref term inside injection");
}

void add_train_options(CLI::App* sub, TrainParams& t) {
    sub->add_option("--lr", t.lr, "peak learning rate")->capture_default_str();
    sub->add_option("--wd", t.weight_decay, "weight decay")->capture_default_str();
    sub->add_option("--lr_schedule", [&t](const std::vector<std::string>& v) {
            if (v.back() == "constant") t.lr_schedule = LrSchedule::constant;
            else if (v.back() == "cosine") t.lr_schedule = LrSchedule::cosine;
            else throw ContractError("unknown lr schedule '" + v.back() + "'");
            return true;
        }, "constant|cosine")
        ->default_str("cosine");
    sub->add_option("--schedule_total", t.schedule_total,
                    "cosine horizon in steps (0 = this run's end)")
        ->capture_default_str();
    sub->add_option("--steps", t.steps, "training steps")->capture_default_str();
    sub->add_option("--batch", t.batch, "batch size")->capture_default_str();
    sub->add_option("--log_every", t.log_every, "loss log interval")->capture_default_str();
    sub->add_option("--threads", t.threads, "worker threads (0 = hardware)")
        ->capture_default_str();
    sub->add_flag("--ref_noise", t.ref_noise, "replace Ref with noise (LR-only ablation)");
}

void add_sampler_options(CLI::App* sub, SamplerConfig& s, bool& guidance_off) {
    sub->add_option("--omega", s.omega, "guidance coefficient")->check(CLI::Range(0.0, 2.0))
        ->capture_default_str();
    sub->add_option("--lambda_weak", s.lambda_weak, "weak-pass lambda")
        ->check(CLI::Range(0.0, 1.0))->capture_default_str();
    sub->add_option("--sampler_steps", s.steps, "Euler steps")->capture_default_str();
    sub->add_flag("--no_guidance", guidance_off, "disable autoguidance");
}

void add_data_options(CLI::App* sub, DatasetParams& d) {
    sub->add_option("--count", d.count, "scene count")->capture_default_str();
    sub->add_option("--scale", d.scale, "downsampling factor")->capture_default_str();
    sub->add_option("--change_fraction_min", d.change_fraction_min, "changed-area fraction, low")
        ->capture_default_str();
    sub->add_option("--change_fraction_max", d.change_fraction_max, "changed-area fraction, high")
        ->capture_default_str();
    sub->add_option("--jitter", d.jitter, "photometric jitter magnitude")->capture_default_str();
}

KvMap experiment_echo(const CliState& st) {
    KvMap kv = st.cfg.model.to_kv();
    kv.set_u64("steps", st.cfg.train.steps);
    kv.set_u64("batch", st.cfg.train.batch);
    kv.set_double("lr", st.cfg.train.lr);
    kv.set_double("wd", st.cfg.train.weight_decay);
    kv.set_double("omega", st.cfg.sampler.omega);
    kv.set_double("lambda_weak", st.cfg.sampler.lambda_weak);
    kv.set_u64("sampler_steps", st.cfg.sampler.steps);
    kv.set_u64("seed", st.seed);
    return kv;
}

// master seed fans out into independent substreams
void apply_master_seed(CliState& st) {
    st.cfg.model.seed = derive_seed(st.seed, 501, 0);
    st.cfg.train.seed = derive_seed(st.seed, 502, 0);
    st.cfg.sampler.seed = derive_seed(st.seed, 503, 0);
    st.cfg.data.seed = st.seed;
    st.cfg.sampler.guidance = !st.guidance_off;
}

RasterImage load_condition_image(const std::string& path, std::size_t size) {
    RasterImage img = read_png(path);
    if (img.height == size && img.width == size) return img;
    return bicubic_resize(img, size, size); // LR inputs are upsampled to model resolution
}

int cmd_gen_data(CliState& st) {
    apply_master_seed(st);
    const std::uint64_t tag = st.split == "eval" ? kEvalSplitTag : kTrainSplitTag;
    const Dataset data = build_dataset(st.cfg.data, tag);
    KvMap echo;
    echo.set_u64("count", st.cfg.data.count);
    echo.set_u64("size", st.cfg.data.size);
    echo.set_u64("scale", st.cfg.data.scale);
    echo.set_double("change_fraction_min", st.cfg.data.change_fraction_min);
    echo.set_double("change_fraction_max", st.cfg.data.change_fraction_max);
    echo.set_double("jitter", st.cfg.data.jitter);
    echo.set_u64("seed", st.cfg.data.seed);
    echo.set("split", st.split);
    write_dataset_dir(st.data_dir, data, echo);
    std::cout << "wrote " << data.size() << " scenes to " << st.data_dir << "\n";
    return 0;
}

int cmd_train(CliState& st) {
    apply_master_seed(st);
    const Dataset data = read_dataset_dir(st.data_dir);
    if (!data.empty()) st.cfg.model.image_size = data.front().hr.height;
    st.cfg.data.size = st.cfg.model.image_size;

    std::optional<Checkpoint> resume;
    if (!st.resume_path.empty()) {
        resume = load_checkpoint(st.resume_path);
        st.cfg.model = resume->config;
    }

    std::ofstream loss_log;
    if (!st.loss_log_path.empty()) {
        loss_log.open(st.loss_log_path);
        if (!loss_log) throw IoError("cannot write loss log: " + st.loss_log_path);
        loss_log << "step,loss\n";
    }
    TrainCallbacks callbacks;
    callbacks.on_log = [&](std::size_t step, double loss) {
        std::cout << "step " << step << " loss " << loss << "\n";
        if (loss_log) loss_log << step << "," << format_metric(loss) << "\n";
    };

    const TrainResult result = train(st.cfg, data, callbacks, resume ? &*resume : nullptr);
    save_checkpoint(st.out_path, result.checkpoint);
    std::cout << "step0_loss " << result.step0_loss << "\n";
    std::cout << "final_loss " << result.loss_curve.back() << "\n";
    std::cout << "saved " << st.out_path << "\n";
    return 0;
}

int cmd_sample(CliState& st) {
    apply_master_seed(st);
    const Checkpoint ckpt = load_checkpoint(st.ckpt_path);
    const DsDitModel model = model_from_checkpoint(ckpt);
    const std::size_t s = model.config().image_size;

    const RasterImage lr_up = load_condition_image(st.lr_path, s);
    const RasterImage ref = load_condition_image(st.ref_path, s);

    SamplerConfig scfg = st.cfg.sampler;
    scfg.seed = st.seed;
    SeededRng noise_rng(derive_seed(scfg.seed, 99, 0));
    const Tensor x1 = noise_rng.normal_tensor({s, s, 3});

    StepObserver observer;
    if (!st.trajectory_dir.empty()) {
        fs::create_directories(st.trajectory_dir);
        observer = [&](std::size_t step, double, const Tensor& x, const Tensor& v) {
            std::ostringstream xa, va;
            xa << st.trajectory_dir << "/xt_" << std::setw(3) << std::setfill('0') << step
               << ".dtns";
            va << st.trajectory_dir << "/v_" << std::setw(3) << std::setfill('0') << step
               << ".dtns";
            write_dtns_file(xa.str(), x);
            write_dtns_file(va.str(), v);
        };
    }

    const Tensor x0 = euler_sample(model, x1, lr_up, ref, scfg, observer);
    RasterImage out = RasterImage::from_tensor(x0);
    out.clamp01();
    write_png(st.out_path, out);
    std::cout << "saved " << st.out_path << "\n";
    return 0;
}

int cmd_eval(CliState& st) {
    apply_master_seed(st);
    const Checkpoint ckpt = load_checkpoint(st.ckpt_path);
    const DsDitModel model = model_from_checkpoint(ckpt);
    const Dataset data = read_dataset_dir(st.data_dir);

    SamplerConfig scfg = st.cfg.sampler;
    scfg.seed = st.seed;
    MetricsReport report = evaluate(model, data, scfg, st.cfg.train.ref_noise,
                                    st.cfg.train.threads);
    st.cfg.model = model.config();
    report.config_echo = experiment_echo(st);
    write_report_csv(st.report_path, report);
    std::cout << "model mean psnr " << report.model_mean.psnr << " ssim "
              << report.model_mean.ssim << "\n";
    std::cout << "bicubic mean psnr " << report.bicubic_mean.psnr << "\n";
    std::cout << "saved " << st.report_path << "\n";
    return 0;
}

std::vector<double> parse_omegas(const std::string& csv) {
    if (csv.empty()) return default_omega_grid();
    std::vector<double> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
        const double omega = std::stod(item);
        if (omega < 0.0 || omega > 2.0) throw ContractError("omega out of [0,2]: " + item);
        out.push_back(omega);
    }
    if (out.empty()) throw ContractError("empty omega list");
    return out;
}

int cmd_sweep_omega(CliState& st) {
    apply_master_seed(st);
    const Checkpoint ckpt = load_checkpoint(st.ckpt_path);
    const DsDitModel model = model_from_checkpoint(ckpt);
    const Dataset data = read_dataset_dir(st.data_dir);
    const std::vector<double> omegas = parse_omegas(st.omegas_csv);

    SamplerConfig scfg = st.cfg.sampler;
    scfg.seed = st.seed;
    OmegaSweepReport report = sweep_omega(model, data, scfg, omegas, st.cfg.train.threads);
    st.cfg.model = model.config();
    report.config_echo = experiment_echo(st);
    write_sweep_csv(st.report_path, report);
    for (std::size_t i = 0; i < omegas.size(); ++i)
        std::cout << "omega " << omegas[i] << " psnr " << report.rows[i].psnr << " ssim "
                  << report.rows[i].ssim << "\n";
    if (!st.sheet_path.empty())
        write_png(st.sheet_path, omega_contact_sheet(model, data, scfg, omegas));
    std::cout << "saved " << st.report_path << "\n";
    return 0;
}

int cmd_ablate(CliState& st) {
    apply_master_seed(st);
    const Dataset train_data = read_dataset_dir(st.data_dir);
    const Dataset test_data = read_dataset_dir(st.eval_data_dir);
    if (!train_data.empty()) {
        st.cfg.model.image_size = train_data.front().hr.height;
        st.cfg.data.size = st.cfg.model.image_size;
    }

    TrainCallbacks callbacks;
    callbacks.on_log = [](std::size_t step, double loss) {
        std::cout << "  step " << step << " loss " << loss << "\n";
    };
    AblationReport report = ablate_injection(st.cfg, train_data, test_data, callbacks);
    report.config_echo = experiment_echo(st);
    write_ablation_csv(st.report_path, report);
    for (const AblationRow& row : report.rows)
        std::cout << to_string(row.injection) << " psnr " << row.metrics.psnr << " ssim "
                  << row.metrics.ssim << "\n";
    std::cout << "step0_outputs_identical "
              << (report.step0_outputs_identical ? "true" : "false") << "\n";
    std::cout << "saved " << st.report_path << "\n";
    return 0;
}

int cmd_grad_check(CliState& st, double h, double tol) {
    apply_master_seed(st);
    ModelConfig cfg = st.cfg.model;
    cfg.validate();
    DsDitModel model(cfg);
    SeededRng rng(derive_seed(st.seed, 601, 0));
    for (auto& [name, t] : model.params())
        for (std::size_t i = 0; i < t.size(); ++i) t[i] += rng.normal() * 0.03;

    const std::size_t s = cfg.image_size;
    const Tensor x0 = rng.uniform_tensor({s, s, 3});
    const Tensor x1 = rng.normal_tensor({s, s, 3});
    const double t = 0.35;
    const Tensor xt = interpolate(x0, x1, t);
    RasterImage lr(s, s), ref(s, s);
    for (double& v : lr.pixels) v = rng.uniform();
    for (double& v : ref.pixels) v = rng.uniform();
    Tensor v_target(x0.shape());
    for (std::size_t i = 0; i < v_target.size(); ++i) v_target[i] = x1[i] - x0[i];
    const Tensor target_tokens = patchify_tensor(v_target, cfg.patch);

    auto loss_of = [&](const ParamStore& ps, GradientMap* g) {
        DsDitModel probe(cfg, ps);
        Tape tape;
        BoundParams bound = bind_params(tape, probe.params());
        Value v = probe.forward_tokens(tape, bound, patchify_tensor(xt, cfg.patch), t,
                                       patchify_tensor(lr.to_tensor(), cfg.patch),
                                       patchify_tensor(ref.to_tensor(), cfg.patch), 1.0);
        Value loss = mse(v, tape.constant(target_tokens));
        if (g) *g = tape.backward(loss);
        return loss.val()[0];
    };

    GradientMap analytic;
    loss_of(model.params(), &analytic);
    const auto report = grad_check([&](const ParamStore& ps) { return loss_of(ps, nullptr); },
                                   model.params(), analytic, h);

    for (const auto& entry : report.entries)
        std::cout << std::left << std::setw(28) << entry.name << " rel "
                  << std::scientific << std::setprecision(3) << entry.max_rel_err << " abs "
                  << entry.max_abs_err << "\n";
    std::cout << "max_rel_err " << std::scientific << report.max_rel_err << " over "
              << model.params().scalar_count() << " parameters\n";
    if (report.max_rel_err > tol) {
        std::cerr << "error: gradient check failed, max_rel_err " << report.max_rel_err
                  << " > " << tol << "\n";
        return 1;
    }
    std::cout << "gradient check passed (tol " << tol << ")\n";
    return 0;
}

int cmd_fixtures(CliState& st) {
    fs::create_directories(st.out_path);
    SeededRng rng(st.seed);
    std::vector<std::pair<std::string, Tensor>> fixtures;

    {
        const Tensor a = rng.uniform_tensor({3, 3}, -1.0, 1.0);
        const Tensor b = rng.uniform_tensor({3, 3}, -1.0, 1.0);
        fixtures.emplace_back("matmul_a", a);
        fixtures.emplace_back("matmul_b", b);
        fixtures.emplace_back("matmul_c", matmul_plain(a, b));
    }
    {
        Tape tape;
        const Tensor in = rng.uniform_tensor({2, 5}, -3.0, 3.0);
        fixtures.emplace_back("softmax_in", in);
        fixtures.emplace_back("softmax_out", softmax_lastdim(tape.constant(in)).val());
    }
    {
        Tape tape;
        const Tensor in = rng.uniform_tensor({3, 8}, -1.0, 1.0);
        const Tensor gain = rng.uniform_tensor({8}, 0.5, 1.5);
        const Tensor bias = rng.uniform_tensor({8}, -0.5, 0.5);
        fixtures.emplace_back("layernorm_in", in);
        fixtures.emplace_back("layernorm_gain", gain);
        fixtures.emplace_back("layernorm_bias", bias);
        fixtures.emplace_back("layernorm_out",
                              layer_norm(tape.constant(in), tape.constant(gain),
                                         tape.constant(bias)).val());
    }
    {
        TokenSequence hz{rng.uniform_tensor({3, 4}, -1.0, 1.0), Modality::noisy, {}};
        TokenSequence hc{rng.uniform_tensor({3, 4}, -1.0, 1.0), Modality::lr, {}};
        BranchProjection pz{rng.uniform_tensor({4, 4}, -0.8, 0.8),
                            rng.uniform_tensor({4, 4}, -0.8, 0.8),
                            rng.uniform_tensor({4, 4}, -0.8, 0.8), {}, {}, {}, 1};
        BranchProjection pc{rng.uniform_tensor({4, 4}, -0.8, 0.8),
                            rng.uniform_tensor({4, 4}, -0.8, 0.8),
                            rng.uniform_tensor({4, 4}, -0.8, 0.8), {}, {}, {}, 1};
        const auto out = joint_attention(hz, hc, pz, pc);
        fixtures.emplace_back("attn_hz", hz.tokens);
        fixtures.emplace_back("attn_hc", hc.tokens);
        fixtures.emplace_back("attn_wq_z", pz.wq);
        fixtures.emplace_back("attn_wk_z", pz.wk);
        fixtures.emplace_back("attn_wv_z", pz.wv);
        fixtures.emplace_back("attn_wq_c", pc.wq);
        fixtures.emplace_back("attn_wk_c", pc.wk);
        fixtures.emplace_back("attn_wv_c", pc.wv);
        fixtures.emplace_back("attn_out_noisy", out.noisy);
        fixtures.emplace_back("attn_out_cond", out.cond);
    }
    {
        SeededRng prng(derive_seed(st.seed, 7, 0));
        PLWParams plw = PLWParams::init(8, prng);
        plw.zl_w = prng.uniform_tensor({8, 8}, -0.4, 0.4);
        plw.zl_b = prng.uniform_tensor({8}, -0.2, 0.2);
        const Tensor hl = prng.uniform_tensor({4, 8}, -1.0, 1.0);
        const Tensor hr = prng.uniform_tensor({4, 8}, -1.0, 1.0);
        const Tensor hz = prng.uniform_tensor({4, 8}, -1.0, 1.0);
        const PatchWeights w = compute_patch_weights(hl, hr, hz, plw);
        fixtures.emplace_back("plw_hl", hl);
        fixtures.emplace_back("plw_hr", hr);
        fixtures.emplace_back("plw_hz", hz);
        fixtures.emplace_back("plw_w1", plw.w1);
        fixtures.emplace_back("plw_w2", plw.w2);
        fixtures.emplace_back("plw_w3", plw.w3);
        fixtures.emplace_back("plw_zl_w", plw.zl_w);
        fixtures.emplace_back("plw_zl_b", plw.zl_b);
        fixtures.emplace_back("plw_weights_lr", w.lr);
        fixtures.emplace_back("plw_weights_ref", w.ref);
        fixtures.emplace_back("plw_out", inject_plw(hz, hl, hr, plw));
    }
    {
        // ramp image through the x8 up / x8 down path
        RasterImage ramp(4, 16);
        for (std::size_t y = 0; y < 4; ++y)
            for (std::size_t x = 0; x < 16; ++x)
                for (std::size_t c = 0; c < 3; ++c)
                    ramp.at(y, x, c) = 0.2 + 0.5 * double(x) / 15.0;
        fixtures.emplace_back("bicubic_in", ramp.to_tensor());
        fixtures.emplace_back("bicubic_up_x8", bicubic_resize(ramp, 4, 128).to_tensor());
    }

    std::ofstream manifest(st.out_path + "/manifest.txt");
    if (!manifest) throw IoError("cannot write fixtures manifest");
    manifest << "# dsdit oracle fixtures, seed " << st.seed << "\n";
    for (const auto& [name, tensor] : fixtures) {
        const std::string path = st.out_path + "/" + name + ".dtns";
        write_dtns_file(path, tensor);
        std::ifstream is(path, std::ios::binary);
        std::string bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
        manifest << name << ".dtns " << std::hex << std::setw(16) << std::setfill('0')
                 << fnv1a64(bytes.data(), bytes.size()) << std::dec << "\n";
    }
    std::cout << "wrote " << fixtures.size() << " fixtures to " << st.out_path << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"DS-DiT: decoupled siamese diffusion transformer, desk-scale harness"};
    app.require_subcommand(1);

    CliState st;
    int exit_code = 0;
    double gc_h = 1e-5, gc_tol = 1e-4;

    auto* gen = app.add_subcommand("gen-data", "generate a synthetic RefSR dataset directory");
    gen->add_option("--out", st.data_dir, "output directory")->required();
    gen->add_option("--image_size", st.cfg.data.size, "scene size")->capture_default_str();
    gen->add_option("--split", st.split, "train|eval stream")->capture_default_str();
    gen->add_option("--seed", st.seed, "master seed")->capture_default_str();
    add_data_options(gen, st.cfg.data);
    finish_subcommand(gen, st.config_path);
    gen->callback([&] { exit_code = cmd_gen_data(st); });

    auto* tr = app.add_subcommand("train", "train on a dataset directory");
    tr->add_option("--data", st.data_dir, "dataset directory")->required();
    tr->add_option("--out", st.out_path, "output checkpoint path")->required();
    tr->add_option("--loss_log", st.loss_log_path, "loss curve CSV path");
    tr->add_option("--resume", st.resume_path, "checkpoint to resume from");
    tr->add_option("--seed", st.seed, "master seed")->capture_default_str();
    add_model_options(tr, st.cfg.model);
    add_train_options(tr, st.cfg.train);
    finish_subcommand(tr, st.config_path);
    tr->callback([&] { exit_code = cmd_train(st); });

    auto* sa = app.add_subcommand("sample", "sample one reconstruction from LR + Ref PNGs");
    sa->add_option("--ckpt", st.ckpt_path, "checkpoint path")->required();
    sa->add_option("--lr", st.lr_path, "LR image (any size; bicubic-upsampled)")->required();
    sa->add_option("--ref", st.ref_path, "Ref image")->required();
    sa->add_option("--out", st.out_path, "output PNG")->required();
    sa->add_option("--seed", st.seed, "noise seed")->capture_default_str();
    sa->add_option("--dump_trajectory", st.trajectory_dir, "per-step DTNS dump directory");
    add_sampler_options(sa, st.cfg.sampler, st.guidance_off);
    finish_subcommand(sa, st.config_path);
    sa->callback([&] { exit_code = cmd_sample(st); });

    auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset directory");
    ev->add_option("--ckpt", st.ckpt_path, "checkpoint path")->required();
    ev->add_option("--data", st.data_dir, "dataset directory")->required();
    ev->add_option("--report", st.report_path, "output CSV")->required();
    ev->add_option("--seed", st.seed, "noise seed")->capture_default_str();
    ev->add_option("--threads", st.cfg.train.threads, "worker threads")->capture_default_str();
    ev->add_flag("--ref_noise", st.cfg.train.ref_noise, "replace Ref with noise");
    add_sampler_options(ev, st.cfg.sampler, st.guidance_off);
    finish_subcommand(ev, st.config_path);
    ev->callback([&] { exit_code = cmd_eval(st); });

    auto* sw = app.add_subcommand("sweep-omega", "evaluate a grid of guidance coefficients");
    sw->add_option("--ckpt", st.ckpt_path, "checkpoint path")->required();
    sw->add_option("--data", st.data_dir, "dataset directory")->required();
    sw->add_option("--report", st.report_path, "output CSV")->required();
    sw->add_option("--sheet", st.sheet_path, "contact sheet PNG");
    sw->add_option("--omegas", st.omegas_csv, "comma list (default 0,1.0,...,1.5)");
    sw->add_option("--seed", st.seed, "noise seed")->capture_default_str();
    sw->add_option("--threads", st.cfg.train.threads, "worker threads")->capture_default_str();
    sw->add_option("--sampler_steps", st.cfg.sampler.steps, "Euler steps")->capture_default_str();
    sw->add_option("--lambda_weak", st.cfg.sampler.lambda_weak, "weak-pass lambda")
        ->capture_default_str();
    finish_subcommand(sw, st.config_path);
    sw->callback([&] { exit_code = cmd_sweep_omega(st); });

    auto* ab = app.add_subcommand("ablate-injection", "train/evaluate all four injection rows");
    ab->add_option("--data", st.data_dir, "training dataset directory")->required();
    ab->add_option("--eval_data", st.eval_data_dir, "held-out dataset directory")->required();
    ab->add_option("--report", st.report_path, "output CSV")->required();
    ab->add_option("--seed", st.seed, "master seed")->capture_default_str();
    add_model_options(ab, st.cfg.model);
    add_train_options(ab, st.cfg.train);
    add_sampler_options(ab, st.cfg.sampler, st.guidance_off);
    finish_subcommand(ab, st.config_path);
    ab->callback([&] { exit_code = cmd_ablate(st); });

    auto* gc = app.add_subcommand("grad-check", "finite-difference check of the full model");
    gc->add_option("--seed", st.seed, "seed")->capture_default_str();
    gc->add_option("--fd_step", gc_h, "finite-difference step")->capture_default_str();
    gc->add_option("--tol", gc_tol, "max relative error")->capture_default_str();
    ModelConfig gc_model; // 2-block toy defaults, checkable in seconds
    gc_model.image_size = 8;
    gc_model.patch = 4;
    gc_model.dim = 8;
    gc_model.heads = 2;
    gc_model.blocks = 2;
    gc_model.time_embed_dim = 8;
    add_model_options(gc, gc_model);
    gc->callback([&] {
        st.cfg.model = gc_model;
        exit_code = cmd_grad_check(st, gc_h, gc_tol);
    });

    auto* fx = app.add_subcommand("fixtures", "emit DTNS oracle fixtures + digest manifest");
    fx->add_option("--out", st.out_path, "output directory")->required();
    fx->add_option("--seed", st.seed, "seed")->capture_default_str();
    fx->callback([&] { exit_code = cmd_fixtures(st); });

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        args = inject_config_tokens(app, std::move(args));
        std::reverse(args.begin(), args.end()); // parse(vector) expects reversed tokens
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return exit_code;
}
