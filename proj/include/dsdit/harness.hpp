// Experiment drivers: dataset materialization (in memory and as PNG
// directories), rectified-flow training, sampled evaluation with masked
// metrics, the omega sweep, and the injection ablation.
//
// Determinism contract: every random draw happens on the main thread in a
// fixed order; worker threads only fill preallocated per-sample slots and
// reductions run in index order, so results are bit-identical for any
// thread count.
#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <mutex>
#include <optional>
#include <sstream>
#include <thread>
#include <vector>

#include "dsdit/checkpoint.hpp"
#include "dsdit/flow.hpp"
#include "dsdit/metrics.hpp"
#include "dsdit/model.hpp"
#include "dsdit/optim.hpp"
#include "dsdit/png_io.hpp"
#include "dsdit/synthetic.hpp"

namespace dsdit {

struct DatasetParams {
    std::size_t count = 256;
    std::size_t size = 32;
    std::size_t scale = 8;
    double change_fraction_min = 0.05;
    double change_fraction_max = 0.25;
    double jitter = 1.0;
    std::uint64_t seed = 0;

    void validate() const {
        if (count == 0) throw ContractError("dataset: count must be positive");
        if (scale == 0 || size % scale != 0)
            throw ContractError("dataset: scale factor must divide image size");
        if (change_fraction_min < 0.0 || change_fraction_max > 1.0 ||
            change_fraction_min > change_fraction_max)
            throw ContractError("dataset: change_fraction range must be within [0,1]");
    }
};

enum class LrSchedule { constant, cosine };

struct TrainParams {
    std::size_t steps = 2000;
    std::size_t batch = 16;
    double lr = 2e-3;
    double weight_decay = 1e-3;
    LrSchedule lr_schedule = LrSchedule::cosine;
    std::size_t schedule_total = 0; // cosine horizon; 0 = this run's final step
    std::size_t log_every = 50;
    std::size_t threads = 0; // 0 = hardware concurrency
    bool ref_noise = false;  // LR-only ablation: Ref replaced by noise images
    std::uint64_t seed = 0;
};

struct ExperimentConfig {
    ModelConfig model;
    SamplerConfig sampler;
    DatasetParams data;
    TrainParams train;
};

struct SceneBundle {
    RasterImage hr, ref, lr_up;
    Tensor mask;
};

using Dataset = std::vector<SceneBundle>;

namespace detail {

inline std::size_t resolve_threads(std::size_t requested, std::size_t jobs) {
    std::size_t t = requested ? requested : std::max(1u, std::thread::hardware_concurrency());
    return std::max<std::size_t>(1, std::min(t, jobs));
}

template <class Fn>
inline void parallel_for(std::size_t n, std::size_t threads, Fn&& fn) {
    threads = resolve_threads(threads, n);
    if (threads <= 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::exception_ptr error;
    std::mutex error_mutex;
    for (std::size_t w = 0; w < threads; ++w)
        pool.emplace_back([&, w] {
            try {
                for (std::size_t i = w; i < n; i += threads) fn(i);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!error) error = std::current_exception();
            }
        });
    for (auto& th : pool) th.join();
    if (error) std::rethrow_exception(error);
}

// PNG quantization applied in memory so that the in-memory dataset equals a
// write-then-read round trip bit for bit.
inline void quantize_in_place(RasterImage& img) {
    for (double& v : img.pixels) v = double(quantize8(v)) / 255.0;
}

} // namespace detail

inline constexpr std::uint64_t kTrainSplitTag = 10;
inline constexpr std::uint64_t kEvalSplitTag = 20;

inline Dataset build_dataset(const DatasetParams& params, std::uint64_t split_tag) {
    params.validate();
    Dataset out(params.count);
    for (std::size_t i = 0; i < params.count; ++i) {
        const std::uint64_t scene_seed = derive_seed(params.seed, split_tag, i);
        SeededRng frac_rng(derive_seed(scene_seed, 5, 0));
        const double fraction =
            frac_rng.uniform(params.change_fraction_min, params.change_fraction_max);
        const SyntheticScene scene = generate_scene(scene_seed, params.size, fraction, params.jitter);
        ScenePair pair = make_pair(scene, params.scale);
        detail::quantize_in_place(pair.hr);
        detail::quantize_in_place(pair.ref);
        detail::quantize_in_place(pair.lr_up);
        out[i] = SceneBundle{std::move(pair.hr), std::move(pair.ref), std::move(pair.lr_up),
                             scene.mask};
    }
    return out;
}

// ---------------------------------------------------------------------------
// Dataset directories: hr_/ref_/lrup_/mask_ PNGs plus a manifest of pixel
// digests (digests are over the quantized RGB bytes, independent of the
// deflate encoder).

inline std::string index_name(const char* prefix, std::size_t i) {
    std::ostringstream os;
    os << prefix << "_" << std::setw(4) << std::setfill('0') << i << ".png";
    return os.str();
}

inline void write_dataset_dir(const std::string& dir, const Dataset& data, const KvMap& echo) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    std::ofstream manifest(dir + "/manifest.txt");
    if (!manifest) throw IoError("cannot write manifest in " + dir);
    manifest << "# dsdit dataset manifest\n";
    for (const auto& [k, v] : echo) manifest << "# " << k << " = " << v << "\n";
    manifest << "count = " << data.size() << "\n";
    for (std::size_t i = 0; i < data.size(); ++i) {
        const SceneBundle& b = data[i];
        RasterImage mask_img(b.hr.height, b.hr.width);
        for (std::size_t px = 0; px < b.mask.size(); ++px)
            for (std::size_t c = 0; c < 3; ++c) mask_img.pixels[px * 3 + c] = b.mask[px];
        const std::pair<std::string, const RasterImage*> files[] = {
            {index_name("hr", i), &b.hr},
            {index_name("ref", i), &b.ref},
            {index_name("lrup", i), &b.lr_up},
            {index_name("mask", i), &mask_img},
        };
        for (const auto& [name, img] : files) {
            write_png(dir + "/" + name, *img);
            const auto rgb = quantize_rgb8(*img);
            std::ostringstream digest;
            digest << std::hex << std::setw(16) << std::setfill('0')
                   << fnv1a64(rgb.data(), rgb.size());
            manifest << name << " " << digest.str() << "\n";
        }
    }
}

inline Dataset read_dataset_dir(const std::string& dir) {
    const KvMap manifest_kv = [&] {
        std::ifstream is(dir + "/manifest.txt");
        if (!is) throw IoError("missing manifest.txt in " + dir);
        std::stringstream ss;
        ss << is.rdbuf();
        // only the count line is key=value; digest lines have no '='
        KvMap kv;
        std::string line;
        std::istringstream ls(ss.str());
        while (std::getline(ls, line)) {
            if (line.rfind("count", 0) == 0) {
                kv = KvMap::from_text(line);
                break;
            }
        }
        return kv;
    }();
    const std::size_t count = manifest_kv.get_u64("count");

    Dataset out(count);
    for (std::size_t i = 0; i < count; ++i) {
        SceneBundle b;
        b.hr = read_png(dir + "/" + index_name("hr", i));
        b.ref = read_png(dir + "/" + index_name("ref", i));
        b.lr_up = read_png(dir + "/" + index_name("lrup", i));
        const RasterImage mask_img = read_png(dir + "/" + index_name("mask", i));
        b.mask = Tensor({mask_img.height, mask_img.width});
        for (std::size_t px = 0; px < b.mask.size(); ++px)
            b.mask[px] = mask_img.pixels[px * 3] >= 0.5 ? 1.0 : 0.0;
        out[i] = std::move(b);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Training

struct TrainResult {
    Checkpoint checkpoint;
    std::vector<double> loss_curve; // one entry per step
    double step0_loss = 0.0;
};

inline RasterImage noise_image(std::size_t size, std::uint64_t seed) {
    SeededRng rng(seed);
    RasterImage img(size, size);
    for (double& v : img.pixels) v = rng.uniform();
    return img;
}

struct TrainCallbacks {
    std::function<void(std::size_t step, double loss)> on_log;
};

inline TrainResult train(const ExperimentConfig& cfg, const Dataset& data,
                         const TrainCallbacks& callbacks = {},
                         const Checkpoint* resume = nullptr) {
    cfg.model.validate();
    cfg.data.validate();
    if (cfg.train.batch == 0) throw ContractError("train: batch must be positive");
    if (data.empty()) throw ContractError("train: empty dataset");
    for (const SceneBundle& b : data)
        if (b.hr.height != cfg.model.image_size || b.hr.width != cfg.model.image_size)
            throw ContractError("train: dataset resolution does not match model config");

    DsDitModel model = resume ? model_from_checkpoint(*resume) : DsDitModel(cfg.model);
    if (resume) require_resumable(*resume, cfg.model);

    AdamW opt(AdamWConfig{cfg.train.lr, 0.9, 0.999, 1e-8, cfg.train.weight_decay});
    SeededRng rng(cfg.train.seed);
    std::uint64_t start_step = 0;
    if (resume) {
        rng.restore_state(resume->rng_state);
        start_step = resume->train_step;
        if (resume->has_optimizer) opt.restore(resume->opt_step, resume->opt_m, resume->opt_v);
    }

    const std::size_t s = cfg.model.image_size;
    const std::size_t patch = cfg.model.patch;
    const std::size_t batch = cfg.train.batch;

    // Ref-noise ablation uses one fixed noise image per dataset index.
    std::vector<RasterImage> noise_refs;
    if (cfg.train.ref_noise) {
        noise_refs.reserve(data.size());
        for (std::size_t i = 0; i < data.size(); ++i)
            noise_refs.push_back(noise_image(s, derive_seed(cfg.train.seed, 77, i)));
    }

    struct Slot {
        std::size_t index = 0;
        double t = 0.0;
        Tensor x1;
        double loss = 0.0;
        GradientMap grads;
    };
    std::vector<Slot> slots(batch);

    TrainResult result;
    result.loss_curve.reserve(cfg.train.steps);

    for (std::size_t step = 0; step < cfg.train.steps; ++step) {
        for (Slot& slot : slots) {
            slot.index = rng.uniform_index(data.size());
            slot.t = sample_timestep(rng);
            slot.x1 = rng.normal_tensor({s, s, 3});
        }

        try {
            detail::parallel_for(batch, cfg.train.threads, [&](std::size_t i) {
                Slot& slot = slots[i];
                const SceneBundle& scene = data[slot.index];
                const RasterImage& ref_img =
                    cfg.train.ref_noise ? noise_refs[slot.index] : scene.ref;
                const Tensor x0 = scene.hr.to_tensor();
                const Tensor xt = interpolate(x0, slot.x1, slot.t);

                Tape tape;
                BoundParams bound = bind_params(tape, model.params());
                Value v_pred = model.forward_tokens(
                    tape, bound, patchify_tensor(xt, patch), slot.t,
                    patchify_tensor(scene.lr_up.to_tensor(), patch),
                    patchify_tensor(ref_img.to_tensor(), patch), 1.0);

                Tensor v_target(x0.shape());
                for (std::size_t j = 0; j < v_target.size(); ++j)
                    v_target[j] = slot.x1[j] - x0[j];
                Value loss = mse(v_pred, tape.constant(patchify_tensor(v_target, patch)));
                slot.loss = loss.val()[0];
                slot.grads = tape.backward(loss);
            });
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " (training step " +
                               std::to_string(start_step + step) + ")");
        }

        double batch_loss = 0.0;
        GradientMap mean_grads = std::move(slots[0].grads);
        batch_loss += slots[0].loss;
        for (std::size_t i = 1; i < batch; ++i) {
            batch_loss += slots[i].loss;
            for (auto& [name, g] : mean_grads) {
                const Tensor& gi = slots[i].grads.at(name);
                for (std::size_t j = 0; j < g.size(); ++j) g[j] += gi[j];
            }
        }
        batch_loss /= double(batch);
        for (auto& [name, g] : mean_grads)
            for (std::size_t j = 0; j < g.size(); ++j) g[j] /= double(batch);

        if (!std::isfinite(batch_loss))
            throw NumericError("train: non-finite loss at step " + std::to_string(start_step + step));

        if (step == 0) result.step0_loss = batch_loss;
        result.loss_curve.push_back(batch_loss);

        if (cfg.train.lr_schedule == LrSchedule::cosine) {
            const std::size_t horizon =
                cfg.train.schedule_total ? cfg.train.schedule_total : start_step + cfg.train.steps;
            const double phase = double(start_step + step) / double(horizon);
            opt.set_lr(0.5 * cfg.train.lr * (1.0 + std::cos(M_PI * std::min(1.0, phase))));
        }
        opt.step(model.params(), mean_grads);

        if (callbacks.on_log && (step % cfg.train.log_every == 0 || step + 1 == cfg.train.steps))
            callbacks.on_log(start_step + step, batch_loss);
    }

    result.checkpoint.config = cfg.model;
    result.checkpoint.params = model.params();
    result.checkpoint.train_step = start_step + cfg.train.steps;
    result.checkpoint.rng_state = rng.save_state();
    result.checkpoint.has_optimizer = true;
    result.checkpoint.opt_step = opt.step_count();
    result.checkpoint.opt_m = opt.moments_m();
    result.checkpoint.opt_v = opt.moments_v();
    return result;
}

// ---------------------------------------------------------------------------
// Evaluation

struct EvalRow {
    double psnr = 0.0;
    double ssim = 0.0;
    double psnr_unchanged = 0.0;
    double psnr_changed = 0.0;
};

struct MetricsReport {
    std::vector<EvalRow> model_rows;
    std::vector<EvalRow> bicubic_rows;
    EvalRow model_mean;
    EvalRow bicubic_mean;
    KvMap config_echo;
    double runtime_seconds = 0.0;
};

namespace detail {

inline EvalRow metrics_against(const RasterImage& out, const SceneBundle& scene) {
    EvalRow row;
    row.psnr = psnr(out, scene.hr);
    row.ssim = ssim(out, scene.hr);
    row.psnr_unchanged = psnr_masked(out, scene.hr, scene.mask, 0.0);
    row.psnr_changed = psnr_masked(out, scene.hr, scene.mask, 1.0);
    return row;
}

inline EvalRow mean_row(const std::vector<EvalRow>& rows) {
    EvalRow m;
    for (const EvalRow& r : rows) {
        m.psnr += r.psnr;
        m.ssim += r.ssim;
        m.psnr_unchanged += r.psnr_unchanged;
        m.psnr_changed += r.psnr_changed;
    }
    const double n = double(rows.size());
    m.psnr /= n;
    m.ssim /= n;
    m.psnr_unchanged /= n;
    m.psnr_changed /= n;
    return m;
}

} // namespace detail

// Per-scene noise is derived from the sampler seed and scene index, so a
// fixed (checkpoint, dataset, sampler) triple reproduces bit-identically.
inline RasterImage sample_scene(const VelocityModel& model, const SceneBundle& scene,
                                const SamplerConfig& scfg, std::size_t scene_index,
                                const RasterImage* ref_override = nullptr) {
    SeededRng noise_rng(derive_seed(scfg.seed, 99, scene_index));
    const Tensor x1 = noise_rng.normal_tensor({scene.hr.height, scene.hr.width, 3});
    const Tensor x0 = euler_sample(model, x1, scene.lr_up,
                                   ref_override ? *ref_override : scene.ref, scfg);
    RasterImage out = RasterImage::from_tensor(x0);
    out.clamp01(); // clamp only at image export, never inside the ODE loop
    return out;
}

inline MetricsReport evaluate(const VelocityModel& model, const Dataset& testset,
                              const SamplerConfig& scfg, bool ref_noise = false,
                              std::size_t threads = 0) {
    if (testset.empty()) throw ContractError("evaluate: empty dataset");
    const auto t_start = std::chrono::steady_clock::now();

    std::vector<RasterImage> noise_refs;
    if (ref_noise) {
        noise_refs.reserve(testset.size());
        for (std::size_t i = 0; i < testset.size(); ++i)
            noise_refs.push_back(noise_image(testset[i].hr.height, derive_seed(scfg.seed, 77, i)));
    }

    MetricsReport report;
    report.model_rows.resize(testset.size());
    report.bicubic_rows.resize(testset.size());
    detail::parallel_for(testset.size(), threads, [&](std::size_t i) {
        const SceneBundle& scene = testset[i];
        const RasterImage out =
            sample_scene(model, scene, scfg, i, ref_noise ? &noise_refs[i] : nullptr);
        report.model_rows[i] = detail::metrics_against(out, scene);
        report.bicubic_rows[i] = detail::metrics_against(scene.lr_up, scene);
    });
    report.model_mean = detail::mean_row(report.model_rows);
    report.bicubic_mean = detail::mean_row(report.bicubic_rows);
    report.runtime_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
    return report;
}

inline std::string format_metric(double v) {
    std::ostringstream os;
    if (std::isinf(v)) {
        os << (v > 0 ? "inf" : "-inf");
    } else {
        os << std::fixed << std::setprecision(6) << v;
    }
    return os.str();
}

inline void write_report_csv(const std::string& path, const MetricsReport& report) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write report: " + path);
    for (const auto& [k, v] : report.config_echo) os << "# " << k << " = " << v << "\n";
    os << "row,index,psnr,ssim,psnr_unchanged,psnr_changed\n";
    auto emit = [&](const char* tag, const std::string& idx, const EvalRow& r) {
        os << tag << "," << idx << "," << format_metric(r.psnr) << "," << format_metric(r.ssim)
           << "," << format_metric(r.psnr_unchanged) << "," << format_metric(r.psnr_changed)
           << "\n";
    };
    for (std::size_t i = 0; i < report.model_rows.size(); ++i)
        emit("model", std::to_string(i), report.model_rows[i]);
    emit("model", "mean", report.model_mean);
    for (std::size_t i = 0; i < report.bicubic_rows.size(); ++i)
        emit("bicubic", std::to_string(i), report.bicubic_rows[i]);
    emit("bicubic", "mean", report.bicubic_mean);
    os << "# runtime_seconds = " << report.runtime_seconds << "\n";
}

// ---------------------------------------------------------------------------
// Omega sweep (appendix procedure): evaluate the guidance grid, emit a CSV
// table and a PNG contact sheet of sampled outputs.

inline std::vector<double> default_omega_grid() {
    return {0.0, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5};
}

struct OmegaSweepReport {
    std::vector<double> omegas;
    std::vector<EvalRow> rows; // aggregate per omega
    KvMap config_echo;
};

inline OmegaSweepReport sweep_omega(const VelocityModel& model, const Dataset& testset,
                                    const SamplerConfig& base,
                                    const std::vector<double>& omegas = default_omega_grid(),
                                    std::size_t threads = 0) {
    OmegaSweepReport report;
    report.omegas = omegas;
    for (double omega : omegas) {
        SamplerConfig scfg = base;
        scfg.guidance = true;
        scfg.omega = omega;
        report.rows.push_back(evaluate(model, testset, scfg, false, threads).model_mean);
    }
    return report;
}

inline void write_sweep_csv(const std::string& path, const OmegaSweepReport& report) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write sweep report: " + path);
    for (const auto& [k, v] : report.config_echo) os << "# " << k << " = " << v << "\n";
    os << "omega,psnr,ssim,psnr_unchanged,psnr_changed\n";
    for (std::size_t i = 0; i < report.omegas.size(); ++i) {
        const EvalRow& r = report.rows[i];
        os << report.omegas[i] << "," << format_metric(r.psnr) << "," << format_metric(r.ssim)
           << "," << format_metric(r.psnr_unchanged) << "," << format_metric(r.psnr_changed)
           << "\n";
    }
}

// Row-major tiling of equally-sized images into one sheet.
inline RasterImage tile_images(const std::vector<std::vector<RasterImage>>& grid) {
    if (grid.empty() || grid[0].empty()) throw ContractError("tile_images: empty grid");
    const std::size_t h = grid[0][0].height, w = grid[0][0].width;
    const std::size_t rows = grid.size(), cols = grid[0].size();
    RasterImage sheet(rows * h, cols * w);
    for (std::size_t r = 0; r < rows; ++r) {
        if (grid[r].size() != cols) throw ContractError("tile_images: ragged grid");
        for (std::size_t c = 0; c < cols; ++c) {
            const RasterImage& img = grid[r][c];
            if (img.height != h || img.width != w) throw ShapeError("tile_images: size mismatch");
            for (std::size_t y = 0; y < h; ++y)
                for (std::size_t x = 0; x < w; ++x)
                    for (std::size_t ch = 0; ch < 3; ++ch)
                        sheet.at(r * h + y, c * w + x, ch) = img.at(y, x, ch);
        }
    }
    return sheet;
}

// Contact sheet: rows = first few scenes; columns = lr_up, one sample per
// omega, ref, hr.
inline RasterImage omega_contact_sheet(const VelocityModel& model, const Dataset& testset,
                                       const SamplerConfig& base, const std::vector<double>& omegas,
                                       std::size_t max_scenes = 4) {
    const std::size_t n = std::min(max_scenes, testset.size());
    std::vector<std::vector<RasterImage>> grid;
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<RasterImage> row;
        row.push_back(testset[i].lr_up);
        for (double omega : omegas) {
            SamplerConfig scfg = base;
            scfg.guidance = true;
            scfg.omega = omega;
            row.push_back(sample_scene(model, testset[i], scfg, i));
        }
        row.push_back(testset[i].ref);
        row.push_back(testset[i].hr);
        grid.push_back(std::move(row));
    }
    return tile_images(grid);
}

// ---------------------------------------------------------------------------
// Injection ablation: four configurations trained and evaluated from
// identical seeds.

struct AblationRow {
    InjectionKind injection;
    EvalRow metrics;
    double final_loss = 0.0;
};

struct AblationReport {
    std::vector<AblationRow> rows;
    bool step0_outputs_identical = false;
    KvMap config_echo;
};

inline AblationReport ablate_injection(const ExperimentConfig& base, const Dataset& train_data,
                                       const Dataset& test_data,
                                       const TrainCallbacks& callbacks = {}) {
    const InjectionKind kinds[] = {InjectionKind::none, InjectionKind::variant_a,
                                   InjectionKind::variant_b, InjectionKind::plw};

    // fresh models of every variant agree bit-for-bit on a probe input
    const SceneBundle& probe = train_data.front();
    SeededRng probe_rng(derive_seed(base.train.seed, 123, 0));
    const Tensor probe_noise = probe_rng.normal_tensor(
        {base.model.image_size, base.model.image_size, 3});
    const Tensor probe_xt = interpolate(probe.hr.to_tensor(), probe_noise, 0.5);

    AblationReport report;
    std::optional<Tensor> first_output;
    report.step0_outputs_identical = true;
    for (InjectionKind kind : kinds) {
        ModelConfig mc = base.model;
        mc.injection = kind;
        DsDitModel fresh(mc);
        const Tensor out = fresh.velocity(probe_xt, 0.5, probe.lr_up, probe.ref, 1.0);
        if (!first_output) {
            first_output = out;
        } else if (!first_output->equals(out)) {
            report.step0_outputs_identical = false;
        }
    }

    for (InjectionKind kind : kinds) {
        ExperimentConfig cfg = base;
        cfg.model.injection = kind;
        TrainResult tr = train(cfg, train_data, callbacks);
        const DsDitModel model = model_from_checkpoint(tr.checkpoint);
        MetricsReport mr = evaluate(model, test_data, cfg.sampler, false, cfg.train.threads);
        report.rows.push_back(AblationRow{kind, mr.model_mean, tr.loss_curve.back()});
    }
    return report;
}

inline void write_ablation_csv(const std::string& path, const AblationReport& report) {
    std::ofstream os(path);
    if (!os) throw IoError("cannot write ablation report: " + path);
    for (const auto& [k, v] : report.config_echo) os << "# " << k << " = " << v << "\n";
    os << "# step0_outputs_identical = " << (report.step0_outputs_identical ? "true" : "false")
       << "\n";
    os << "injection,psnr,ssim,psnr_unchanged,psnr_changed,final_loss\n";
    for (const AblationRow& row : report.rows)
        os << to_string(row.injection) << "," << format_metric(row.metrics.psnr) << ","
           << format_metric(row.metrics.ssim) << "," << format_metric(row.metrics.psnr_unchanged)
           << "," << format_metric(row.metrics.psnr_changed) << ","
           << format_metric(row.final_loss) << "\n";
}

} // namespace dsdit
