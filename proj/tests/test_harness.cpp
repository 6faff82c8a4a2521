#include <doctest.h>

#include <filesystem>

#include "dsdit/harness.hpp"

using namespace dsdit;

namespace {

// Small enough to train in seconds, big enough for SSIM's 11x11 window.
ExperimentConfig tiny_experiment() {
    ExperimentConfig cfg;
    cfg.model.image_size = 16;
    cfg.model.patch = 4;
    cfg.model.dim = 16;
    cfg.model.heads = 2;
    cfg.model.blocks = 1;
    cfg.model.time_embed_dim = 8;
    cfg.model.seed = 5;
    cfg.model.injection = InjectionKind::plw;
    cfg.data.count = 6;
    cfg.data.size = 16;
    cfg.data.scale = 4;
    cfg.data.seed = 9;
    cfg.train.steps = 8;
    cfg.train.batch = 3;
    cfg.train.lr = 1e-3;
    cfg.train.seed = 21;
    cfg.train.threads = 2;
    cfg.sampler.steps = 5;
    cfg.sampler.seed = 31;
    return cfg;
}

struct ForcedLambdaModel : VelocityModel {
    const VelocityModel* inner;
    double lambda;
    Tensor velocity(const Tensor& xt, double t, const RasterImage& lr, const RasterImage& ref,
                    double) const override {
        return inner->velocity(xt, t, lr, ref, lambda);
    }
};

} // namespace

TEST_CASE("scene generator honors its invariants") {
    // zero change, zero jitter: Ref is HR exactly
    const SyntheticScene clean = generate_scene(3, 32, 0.0, 0.0);
    CHECK(clean.ref.equals(clean.hr));
    CHECK(clean.mask.equals(Tensor::zeros({32, 32})));

    // full change: Ref decorrelates from HR inside the mask (Monte-Carlo over
    // seeds; a single low-frequency scene has few effective samples)
    double corr_sum = 0.0;
    const int scenes = 50;
    for (int s = 0; s < scenes; ++s) {
        const SyntheticScene changed = generate_scene(100 + std::uint64_t(s), 32, 1.0, 0.0);
        double ma = 0, mb = 0;
        const std::size_t n = changed.hr.pixels.size();
        for (std::size_t i = 0; i < n; ++i) {
            ma += changed.hr.pixels[i];
            mb += changed.ref.pixels[i];
        }
        ma /= double(n);
        mb /= double(n);
        double cov = 0, va = 0, vb = 0;
        for (std::size_t i = 0; i < n; ++i) {
            const double da = changed.hr.pixels[i] - ma;
            const double db = changed.ref.pixels[i] - mb;
            cov += da * db;
            va += da * da;
            vb += db * db;
        }
        corr_sum += cov / std::sqrt(va * vb);
    }
    CHECK(std::abs(corr_sum / scenes) <= 0.1);

    // jitter stays within the declared per-channel affine envelope
    const SyntheticScene jittered = generate_scene(5, 32, 0.0, 1.0);
    for (std::size_t i = 0; i < jittered.hr.pixels.size(); ++i) {
        const double hr = jittered.hr.pixels[i];
        const double lo = std::clamp(0.9 * hr - 0.05, 0.0, 1.0);
        const double hi = std::clamp(1.1 * hr + 0.05, 0.0, 1.0);
        CHECK(jittered.ref.pixels[i] >= lo - 1e-12);
        CHECK(jittered.ref.pixels[i] <= hi + 1e-12);
    }

    CHECK_THROWS_AS(generate_scene(1, 32, 1.5, 0.0), ContractError);
}

TEST_CASE("mask area tracks the requested fraction across seeds") {
    for (std::uint64_t seed = 0; seed < 100; ++seed) {
        const double fraction = 0.3;
        const SyntheticScene scene = generate_scene(seed, 32, fraction, 0.0);
        std::size_t area = 0;
        for (std::size_t i = 0; i < scene.mask.size(); ++i) area += scene.mask[i] == 1.0;
        const double got = double(area) / double(scene.mask.size());
        CHECK(std::abs(got - fraction) <= 0.05 * fraction + 1.0 / (32.0 * 32.0));
    }
}

TEST_CASE("make_pair: unit scale passes through, degradation factors work") {
    const SyntheticScene scene = generate_scene(7, 32, 0.2, 1.0);
    const ScenePair unit = make_pair(scene, 1);
    CHECK(unit.lr_up.equals(scene.hr));

    for (std::size_t scale : {8u, 16u}) {
        const ScenePair pair = make_pair(scene, scale);
        CHECK(pair.lr_up.height == 32);
        const double p = psnr(pair.lr_up, pair.hr);
        CHECK(std::isfinite(p));
        CHECK(p > 5.0);
        CHECK(p < 100.0);
    }
    CHECK_THROWS_AS(make_pair(scene, 5), ContractError);
}

TEST_CASE("dataset directory round-trips the in-memory dataset bit-exactly") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dsdit_dataset_test").string();
    fs::remove_all(dir);

    DatasetParams params;
    params.count = 3;
    params.size = 16;
    params.scale = 4;
    params.seed = 11;
    const Dataset data = build_dataset(params, kTrainSplitTag);
    write_dataset_dir(dir, data, KvMap{});
    const Dataset back = read_dataset_dir(dir);

    REQUIRE(back.size() == data.size());
    for (std::size_t i = 0; i < data.size(); ++i) {
        CHECK(back[i].hr.equals(data[i].hr));
        CHECK(back[i].ref.equals(data[i].ref));
        CHECK(back[i].lr_up.equals(data[i].lr_up));
        CHECK(back[i].mask.equals(data[i].mask));
    }

    // splits draw from distinct streams
    const Dataset eval = build_dataset(params, kEvalSplitTag);
    CHECK_FALSE(eval[0].hr.equals(data[0].hr));
}

TEST_CASE("step-0 loss equals the replayed mean ||x1 - x0||^2 of the first batch") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.train.steps = 1;
    const Dataset data = build_dataset(cfg.data, kTrainSplitTag);
    const TrainResult result = train(cfg, data);

    // replay the documented draw order: per slot, index then t then x1
    SeededRng rng(cfg.train.seed);
    double expected = 0.0;
    for (std::size_t slot = 0; slot < cfg.train.batch; ++slot) {
        const std::size_t idx = rng.uniform_index(data.size());
        (void)rng.uniform(); // t does not enter the target
        const Tensor x1 = rng.normal_tensor({16, 16, 3});
        const Tensor x0 = data[idx].hr.to_tensor();
        Tensor v(x0.shape());
        for (std::size_t i = 0; i < v.size(); ++i) v[i] = x1[i] - x0[i];
        const Tensor tokens = patchify_tensor(v, cfg.model.patch);
        double s = 0.0;
        for (std::size_t i = 0; i < tokens.size(); ++i) s += tokens[i] * tokens[i];
        expected += s / double(tokens.size());
    }
    expected /= double(cfg.train.batch);
    CHECK(result.step0_loss == expected);
    CHECK(result.step0_loss == result.loss_curve[0]);
}

TEST_CASE("training is bit-reproducible for fixed seeds and any thread count") {
    ExperimentConfig cfg = tiny_experiment();
    const Dataset data = build_dataset(cfg.data, kTrainSplitTag);

    cfg.train.threads = 1;
    const TrainResult a = train(cfg, data);
    cfg.train.threads = 2;
    const TrainResult b = train(cfg, data);

    REQUIRE(a.loss_curve.size() == b.loss_curve.size());
    for (std::size_t i = 0; i < a.loss_curve.size(); ++i) CHECK(a.loss_curve[i] == b.loss_curve[i]);
    for (const auto& [name, t] : a.checkpoint.params)
        CHECK(t.equals(b.checkpoint.params.at(name)));
}

TEST_CASE("resuming from a checkpoint continues the exact same trajectory") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dsdit_resume_test").string();
    fs::create_directories(dir);

    ExperimentConfig cfg = tiny_experiment();
    cfg.train.schedule_total = 8; // one cosine horizon across the split runs
    const Dataset data = build_dataset(cfg.data, kTrainSplitTag);

    ExperimentConfig full = cfg;
    full.train.steps = 8;
    const TrainResult whole = train(full, data);

    ExperimentConfig first = cfg;
    first.train.steps = 5;
    const TrainResult head = train(first, data);
    save_checkpoint(dir + "/head.dsck", head.checkpoint);
    const Checkpoint loaded = load_checkpoint(dir + "/head.dsck");

    ExperimentConfig rest = cfg;
    rest.train.steps = 3;
    const TrainResult tail = train(rest, data, {}, &loaded);

    CHECK(tail.checkpoint.train_step == 8);
    for (const auto& [name, t] : whole.checkpoint.params)
        CHECK(t.equals(tail.checkpoint.params.at(name)));
    for (std::size_t i = 0; i < 3; ++i) CHECK(tail.loss_curve[i] == whole.loss_curve[5 + i]);

    // resuming under a different model config is refused
    ExperimentConfig other = cfg;
    other.model.blocks = 2;
    CHECK_THROWS_AS(train(other, data, {}, &loaded), ContractError);
}

TEST_CASE("evaluation report: aggregates are means, bicubic baseline is model-free") {
    ExperimentConfig cfg = tiny_experiment();
    const Dataset train_data = build_dataset(cfg.data, kTrainSplitTag);
    DatasetParams eval_params = cfg.data;
    eval_params.count = 3;
    const Dataset test_data = build_dataset(eval_params, kEvalSplitTag);

    const TrainResult tr = train(cfg, train_data);
    const DsDitModel model = model_from_checkpoint(tr.checkpoint);
    const MetricsReport report = evaluate(model, test_data, cfg.sampler, false, 2);

    REQUIRE(report.model_rows.size() == 3);
    double mean_psnr = 0.0, mean_ssim = 0.0;
    for (const EvalRow& r : report.model_rows) {
        mean_psnr += r.psnr;
        mean_ssim += r.ssim;
        CHECK(std::isfinite(r.psnr));
    }
    CHECK(report.model_mean.psnr == doctest::Approx(mean_psnr / 3.0).epsilon(1e-12));
    CHECK(report.model_mean.ssim == doctest::Approx(mean_ssim / 3.0).epsilon(1e-12));

    // a different checkpoint leaves the bicubic rows untouched
    ExperimentConfig cfg2 = cfg;
    cfg2.train.seed = 404;
    const TrainResult tr2 = train(cfg2, train_data);
    const MetricsReport report2 =
        evaluate(model_from_checkpoint(tr2.checkpoint), test_data, cfg.sampler, false, 2);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(report.bicubic_rows[i].psnr == report2.bicubic_rows[i].psnr);
        CHECK(report.bicubic_rows[i].ssim == report2.bicubic_rows[i].ssim);
    }

    // masked metrics decompose the full MSE by area on every row
    for (std::size_t i = 0; i < 3; ++i) {
        const SceneBundle& scene = test_data[i];
        std::size_t changed = 0;
        for (std::size_t j = 0; j < scene.mask.size(); ++j) changed += scene.mask[j] == 1.0;
        const double wc = double(changed) / double(scene.mask.size());
        const double mse_full = std::pow(10.0, -report.bicubic_rows[i].psnr / 10.0);
        const double mse_u = std::pow(10.0, -report.bicubic_rows[i].psnr_unchanged / 10.0);
        const double mse_c = std::pow(10.0, -report.bicubic_rows[i].psnr_changed / 10.0);
        CHECK(std::abs((1.0 - wc) * mse_u + wc * mse_c - mse_full) <= 1e-9);
    }
}

TEST_CASE("sampling is bit-reproducible and csv writers emit the documented headers") {
    namespace fs = std::filesystem;
    const std::string dir = (fs::temp_directory_path() / "dsdit_report_test").string();
    fs::create_directories(dir);

    ExperimentConfig cfg = tiny_experiment();
    const Dataset data = build_dataset(cfg.data, kTrainSplitTag);
    const TrainResult tr = train(cfg, data);
    const DsDitModel model = model_from_checkpoint(tr.checkpoint);

    const RasterImage s1 = sample_scene(model, data[0], cfg.sampler, 0);
    const RasterImage s2 = sample_scene(model, data[0], cfg.sampler, 0);
    CHECK(s1.equals(s2));

    MetricsReport report = evaluate(model, data, cfg.sampler, false, 2);
    report.config_echo.set("arch", "dsdit");
    write_report_csv(dir + "/report.csv", report);
    std::ifstream is(dir + "/report.csv");
    std::string line;
    bool saw_header = false;
    while (std::getline(is, line))
        if (line == "row,index,psnr,ssim,psnr_unchanged,psnr_changed") saw_header = true;
    CHECK(saw_header);
}

TEST_CASE("omega sweep: grid default, omega=1 equals unguided, omega=0 equals the weak run") {
    ExperimentConfig cfg = tiny_experiment();
    const Dataset data = build_dataset(cfg.data, kTrainSplitTag);
    DatasetParams eval_params = cfg.data;
    eval_params.count = 2;
    const Dataset test_data = build_dataset(eval_params, kEvalSplitTag);

    CHECK(default_omega_grid() == std::vector<double>{0.0, 1.0, 1.1, 1.2, 1.3, 1.4, 1.5});

    const TrainResult tr = train(cfg, data);
    const DsDitModel model = model_from_checkpoint(tr.checkpoint);

    const OmegaSweepReport sweep =
        sweep_omega(model, test_data, cfg.sampler, {0.0, 1.0, 1.2}, 2);
    REQUIRE(sweep.rows.size() == 3);

    SamplerConfig unguided = cfg.sampler;
    unguided.guidance = false;
    const EvalRow plain = evaluate(model, test_data, unguided, false, 2).model_mean;
    CHECK(sweep.rows[1].psnr == plain.psnr); // omega = 1 row
    CHECK(sweep.rows[1].ssim == plain.ssim);

    // omega = 0 equals sampling with the weak condition forced everywhere
    ForcedLambdaModel weak{};
    weak.inner = &model;
    weak.lambda = 0.0;
    const EvalRow weak_row = evaluate(weak, test_data, unguided, false, 2).model_mean;
    CHECK(sweep.rows[0].psnr == weak_row.psnr);
    CHECK(sweep.rows[0].ssim == weak_row.ssim);
}

TEST_CASE("injection ablation: four rows, identical step-0 forwards, reproducible") {
    ExperimentConfig cfg = tiny_experiment();
    cfg.train.steps = 4;
    const Dataset data = build_dataset(cfg.data, kTrainSplitTag);
    DatasetParams eval_params = cfg.data;
    eval_params.count = 2;
    const Dataset test_data = build_dataset(eval_params, kEvalSplitTag);

    const AblationReport a = ablate_injection(cfg, data, test_data);
    REQUIRE(a.rows.size() == 4);
    CHECK(a.step0_outputs_identical);
    CHECK(a.rows[0].injection == InjectionKind::none);
    CHECK(a.rows[3].injection == InjectionKind::plw);

    const AblationReport b = ablate_injection(cfg, data, test_data);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(a.rows[i].metrics.psnr == b.rows[i].metrics.psnr);
        CHECK(a.rows[i].final_loss == b.rows[i].final_loss);
    }
}

TEST_CASE("evaluate handles the ref-noise ablation deterministically") {
    ExperimentConfig cfg = tiny_experiment();
    const Dataset data = build_dataset(cfg.data, kTrainSplitTag);
    const TrainResult tr = train(cfg, data);
    const DsDitModel model = model_from_checkpoint(tr.checkpoint);

    const MetricsReport a = evaluate(model, data, cfg.sampler, true, 2);
    const MetricsReport b = evaluate(model, data, cfg.sampler, true, 2);
    for (std::size_t i = 0; i < data.size(); ++i)
        CHECK(a.model_rows[i].psnr == b.model_rows[i].psnr);
}
