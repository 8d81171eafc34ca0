#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>

#include "csra/checkpoint.hpp"
#include "csra/config.hpp"
#include "csra/dataset.hpp"
#include "csra/error.hpp"
#include "csra/metrics.hpp"
#include "csra/optim.hpp"
#include "csra/trainer.hpp"
#include "support.hpp"

using namespace csra;
using csra::testing::random_mat;
using csra::testing::TempDir;

namespace {

const CohortDataset& small_cohort() {
    static const CohortDataset ds = generate_synthetic_cohort(3, 60, 20, SystemSchema::default_nine(2));
    return ds;
}

TrainConfig small_config(Task task = Task::Regression, BackboneKind kind = BackboneKind::Linear) {
    TrainConfig c;
    c.task = task;
    c.backbone = kind;
    c.hidden = 8;
    c.heads = 2;
    c.system_dim = 4;
    c.global_dim = 4;
    c.controller_hidden = 8;
    c.batch_size = 32;
    c.max_epochs = 3;
    c.max_steps_per_epoch = 4;
    c.seed = 11;
    return c;
}

std::vector<LossBreakdown> collect_steps(Trainer& t) {
    auto steps = std::make_shared<std::vector<LossBreakdown>>();
    t.on_step([steps](const StepRecord& r) { steps->push_back(r.loss); });
    t.fit();
    return *steps;
}

// Pairwise concordance over every positive/negative pair, ties count one half.
double pairwise_auroc(const std::vector<double>& s, const std::vector<int>& y) {
    double hits = 0.0, pairs = 0.0;
    for (std::size_t i = 0; i < s.size(); ++i)
        for (std::size_t j = 0; j < s.size(); ++j)
            if (y[i] == 1 && y[j] == 0) {
                pairs += 1.0;
                hits += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
            }
    return hits / pairs;
}

}  // namespace

TEST_SUITE("pipeline") {

// ---- generator --------------------------------------------------------------------

TEST_CASE("generator is deterministic per seed") {
    const auto schema = SystemSchema::default_nine(2);
    const auto a = generate_synthetic_cohort(5, 30, 20, schema);
    const auto b = generate_synthetic_cohort(5, 30, 20, schema);
    const auto c = generate_synthetic_cohort(6, 30, 20, schema);
    CHECK(a.values == b.values);
    CHECK(a.labels == b.labels);
    CHECK(a.events == b.events);
    CHECK(a.values != c.values);
    CHECK(generate_synthetic_cohort(std::uint64_t{1} << 40, 5, 20, schema).values !=
          generate_synthetic_cohort(0, 5, 20, schema).values);
    CHECK_NOTHROW(a.validate());
    CHECK(a.n_variables == 18);
    CHECK(a.variable_names.front() == "DP_0");
    CHECK(a.variable_index("IO_1") == 17);
    CHECK_THROWS_AS(a.variable_index("XX_0"), UsageError);
}

TEST_CASE("generator rejects invalid shapes") {
    const auto schema = SystemSchema::default_nine(2);
    CHECK_THROWS_AS(generate_synthetic_cohort(0, 0, 40, schema), UsageError);
    CHECK_THROWS_AS(generate_synthetic_cohort(0, 10, 12, schema), UsageError);
}

TEST_CASE("generator calibration hits the target positive rate") {
    const auto schema = SystemSchema::default_nine(2);
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ds = generate_synthetic_cohort(seed, 2000, 40, schema);
        const double rate =
            std::accumulate(ds.labels.begin(), ds.labels.end(), 0.0) / static_cast<double>(ds.labels.size());
        INFO("seed " << seed << " rate " << rate);
        CHECK(rate >= 0.15);
        CHECK(rate <= 0.25);
    }
}

TEST_CASE("uncoupled cohorts carry no signal") {
    GeneratorOptions opts;
    opts.coupling_scale = 0.0;
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        const auto ds = generate_synthetic_cohort(seed, 2000, 40, SystemSchema::default_nine(2), opts);
        auto c = small_config(Task::Classification);
        c.seed = seed;
        c.max_epochs = 2;
        c.max_steps_per_epoch = 30;
        const auto m = train_and_validate(c, ds);
        REQUIRE(m.auroc.has_value());
        INFO("seed " << seed << " auroc " << *m.auroc);
        CHECK(*m.auroc >= 0.45);
        CHECK(*m.auroc <= 0.55);
    }
}

// ---- windows, splits, normalisation -----------------------------------------------

TEST_CASE("window counts follow the horizon arithmetic") {
    WindowSpec spec;
    spec.need_cls = false;
    CHECK(windows_per_trajectory(spec.window + spec.h_reg, spec) == 1);
    CHECK(windows_per_trajectory(spec.window + spec.h_reg - 1, spec) == 0);
    spec.need_cls = true;
    int previous = windows_per_trajectory(40, spec);
    for (int h = 7; h <= 12; ++h) {
        spec.h_cls = h;
        const int n = windows_per_trajectory(40, spec);
        CHECK(n <= previous);
        previous = n;
    }
    const auto& ds = small_cohort();
    WindowSpec reg;
    reg.need_cls = false;
    reg.h_reg = 14;
    const auto z = fit_zscore(ds, {0, 1, 2});
    const auto w = window_samples(ds, {0, 1}, reg, z);
    CHECK(w.size() == 2);
    reg.h_reg = 15;
    const auto none = window_samples(ds, {0, 1}, reg, z);
    CHECK(none.size() == 0);
    CHECK(none.skipped_trajectories == 2);
}

TEST_CASE("window contents and labels follow their definitions") {
    const auto& ds = small_cohort();
    const auto z = fit_zscore(ds, {0, 1, 2, 3});
    WindowSpec spec;
    spec.h_reg = 2;
    spec.h_cls = 4;
    const auto w = window_samples(ds, {4, 7}, spec, z);
    REQUIRE(w.size() == 2 * windows_per_trajectory(20, spec));
    for (Eigen::Index s = 0; s < w.size(); ++s) {
        const int i = w.trajectory_id[static_cast<std::size_t>(s)];
        const int start = w.window_start[static_cast<std::size_t>(s)];
        for (int t = 0; t < 6; ++t)
            for (int v = 0; v < 18; ++v)
                CHECK(w.x(s * 6 + t, v) == doctest::Approx((ds.value(i, start + t, v) - z.mean(v)) / z.stddev(v)));
        CHECK(w.y_reg(s, 3) == doctest::Approx((ds.value(i, start + 6 + 2 - 1, 3) - z.mean(3)) / z.stddev(3)));
        bool event = false;
        for (int t = start + 6; t < start + 10; ++t) event = event || ds.event(i, t, 0);
        CHECK(w.y_cls(s, 0) == (event ? 1.0 : 0.0));
    }
    const auto picked = w.select({3, 0});
    CHECK(picked.x.topRows(6) == w.x.middleRows(18, 6));
    CHECK(picked.trajectory_id[1] == w.trajectory_id[0]);
}

TEST_CASE("trajectory splits are disjoint, complete and seeded") {
    const auto s = split_trajectories(200, 9);
    CHECK(s.train.size() == 140);
    CHECK(s.val.size() == 30);
    CHECK(s.test.size() == 30);
    std::set<int> all;
    for (const auto* part : {&s.train, &s.val, &s.test}) {
        CHECK(std::is_sorted(part->begin(), part->end()));
        all.insert(part->begin(), part->end());
    }
    CHECK(all.size() == 200);
    const auto again = split_trajectories(200, 9);
    CHECK(again.train == s.train);
    CHECK(split_trajectories(200, 10).train != s.train);
    CHECK_THROWS_AS(split_trajectories(10, 0, 0.9, 0.2), ValidationError);
}

TEST_CASE("data ratio subsamples training trajectories") {
    std::vector<int> ids(100);
    std::iota(ids.begin(), ids.end(), 0);
    const auto half = subsample(ids, 0.5, 4);
    CHECK(half.size() == 50);
    CHECK(half == subsample(ids, 0.5, 4));
    CHECK(std::includes(ids.begin(), ids.end(), half.begin(), half.end()));
    CHECK(subsample(ids, 1.0, 4) == ids);
    CHECK(subsample(ids, 0.001, 4).size() == 1);
    CHECK_THROWS_AS(subsample(ids, 0.0, 4), ValidationError);
    CHECK_THROWS_AS(subsample(ids, 1.5, 4), ValidationError);
}

TEST_CASE("z-score statistics come from the training split only") {
    const auto& ds = small_cohort();
    const auto trainer = Trainer(small_config(), ds);
    const auto& ids = trainer.train_ids();
    for (int v : {0, 9, 17}) {
        double sum = 0.0, count = 0.0;
        for (int i : ids)
            for (int t = 0; t < ds.n_timesteps; ++t) sum += ds.value(i, t, v), count += 1.0;
        const double mean = sum / count;
        double ss = 0.0;
        for (int i : ids)
            for (int t = 0; t < ds.n_timesteps; ++t) ss += std::pow(ds.value(i, t, v) - mean, 2);
        CHECK(trainer.zscore().mean(v) == doctest::Approx(mean).epsilon(1e-12));
        CHECK(trainer.zscore().stddev(v) == doctest::Approx(std::sqrt(ss / count)).epsilon(1e-12));
    }
    std::set<int> train(ids.begin(), ids.end());
    for (int i : trainer.splits().val) CHECK(train.count(i) == 0);
    for (int i : trainer.splits().test) CHECK(train.count(i) == 0);

    CohortDataset flat = ds;
    for (int i = 0; i < flat.n_trajectories; ++i)
        for (int t = 0; t < flat.n_timesteps; ++t)
            flat.values[(static_cast<std::size_t>(i) * flat.n_timesteps + t) * flat.n_variables + 2] = 3.0f;
    const auto z = fit_zscore(flat, {0, 1});
    CHECK(z.stddev(2) == 1.0);
    CHECK(z.mean(2) == 3.0);
    const auto back = ZScore::from_json(z.to_json());
    CHECK(back.mean == z.mean);
    CHECK(back.stddev == z.stddev);
}

// ---- metrics ----------------------------------------------------------------------

TEST_CASE("metric examples") {
    CHECK(*metrics::auroc({0.1, 0.4, 0.35, 0.8}, {0, 0, 1, 1}) == doctest::Approx(0.75));
    CHECK(*metrics::auroc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    CHECK(*metrics::auprc({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1}) == 1.0);
    std::vector<double> constant(100, 0.3);
    std::vector<int> labels(100, 0);
    for (int i = 0; i < 20; ++i) labels[static_cast<std::size_t>(i * 5)] = 1;
    CHECK(std::abs(*metrics::auprc(constant, labels) - 0.2) < 0.01);
    CHECK(*metrics::auroc(constant, labels) == 0.5);
    CHECK_FALSE(metrics::auroc({0.1, 0.2}, {1, 1}).has_value());
    CHECK_FALSE(metrics::auprc({0.1, 0.2}, {0, 0}).has_value());
    const Mat p = (Mat(2, 2) << 1, 2, 3, 4).finished(), t = (Mat(2, 2) << 0, 2, 5, 4).finished();
    CHECK(metrics::mse(p, t) == doctest::Approx(1.25));
    CHECK(metrics::mae(p, t) == doctest::Approx(0.75));
}

TEST_CASE("rank AUROC equals the pairwise oracle") {
    std::mt19937_64 rng(80);
    std::uniform_int_distribution<int> coarse(0, 6), len(4, 30);
    for (int trial = 0; trial < 100; ++trial) {
        const int n = len(rng);
        std::vector<double> s(static_cast<std::size_t>(n));
        std::vector<int> y(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            s[static_cast<std::size_t>(i)] = coarse(rng) / 6.0;
            y[static_cast<std::size_t>(i)] = i % 3 == 0 ? 1 : (coarse(rng) > 4);
        }
        y[0] = 1;
        y[1] = 0;
        CHECK(*metrics::auroc(s, y) == doctest::Approx(pairwise_auroc(s, y)).epsilon(1e-15));
    }
}

TEST_CASE("AUPRC matches a threshold sweep oracle") {
    std::mt19937_64 rng(81);
    std::uniform_int_distribution<int> coarse(0, 9);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<double> s(25);
        std::vector<int> y(25);
        for (std::size_t i = 0; i < 25; ++i) s[i] = coarse(rng), y[i] = coarse(rng) < 3;
        y[0] = 1;
        y[1] = 0;
        std::vector<double> thresholds(s);
        std::sort(thresholds.rbegin(), thresholds.rend());
        thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
        const double positives = std::accumulate(y.begin(), y.end(), 0.0);
        double ap = 0.0, prev_recall = 0.0;
        for (double th : thresholds) {
            double tp = 0.0, predicted = 0.0;
            for (std::size_t i = 0; i < 25; ++i)
                if (s[i] >= th) predicted += 1.0, tp += y[i];
            const double recall = tp / positives;
            ap += (recall - prev_recall) * tp / predicted;
            prev_recall = recall;
        }
        CHECK(*metrics::auprc(s, y) == doctest::Approx(ap).epsilon(1e-12));
    }
}

TEST_CASE("regression metrics ignore sample order") {
    std::mt19937_64 rng(82);
    const Mat p = random_mat(10, 3, rng), t = random_mat(10, 3, rng);
    const Mat pr = p.colwise().reverse(), tr = t.colwise().reverse();
    CHECK(metrics::mse(pr, tr) == doctest::Approx(metrics::mse(p, t)).epsilon(1e-15));
    CHECK(metrics::mae(pr, tr) == doctest::Approx(metrics::mae(p, t)).epsilon(1e-15));
}

// ---- persistence ------------------------------------------------------------------

TEST_CASE("dataset directory round trip is bit-exact") {
    TempDir dir("dataset");
    const auto& ds = small_cohort();
    save_dataset(ds, dir / "d");
    const auto back = load_dataset(dir / "d");
    CHECK(back.values == ds.values);
    CHECK(back.labels == ds.labels);
    CHECK(back.events == ds.events);
    CHECK(back.variable_names == ds.variable_names);
    CHECK(back.schema == ds.schema);
    CHECK(back.resolution_hours == ds.resolution_hours);
    CHECK(std::filesystem::file_size(dir / "d" / "values.bin") == ds.values.size() * 4);
    CHECK(std::filesystem::file_size(dir / "d" / "labels.bin") == ds.labels.size());

    std::ifstream meta_in(dir / "d" / "meta.json");
    const auto meta = nlohmann::json::parse(meta_in);
    CHECK(meta.at("format_version") == 1);
    CHECK(meta.at("dtype") == "f32");
    CHECK(meta.at("byte_order") == "little");
    CHECK(meta.at("layout") == "row_major_NTD");
    CHECK(meta.at("n_variables") == 18);

    const auto fp = dataset_fingerprint(dir / "d");
    CHECK(fp.size() == 64);
    save_dataset(ds, dir / "e");
    CHECK(dataset_fingerprint(dir / "e") == fp);
    CHECK_THROWS_AS(save_dataset(ds, dir / "d"), UsageError);
    CHECK_NOTHROW(save_dataset(ds, dir / "d", true));

    std::filesystem::resize_file(dir / "e" / "values.bin", 100);
    CHECK(dataset_fingerprint(dir / "e") != fp);
    CHECK_THROWS_AS(load_dataset(dir / "e"), DataError);
    CHECK_THROWS_AS(load_dataset(dir / "missing"), DataError);
}

TEST_CASE("configuration JSON round trip and validation") {
    TrainConfig c = small_config(Task::Classification, BackboneKind::Transformer);
    c.ablation = Ablation::NoSpectral;
    c.inter_norm = InterNorm::Raw;
    c.seed = (std::uint64_t{1} << 63) + 5;
    const auto back = TrainConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.seed == c.seed);
    CHECK(c.to_json().size() == TrainConfig::keys().size());

    try {
        TrainConfig::from_json({{"bogus", 1}});
        FAIL("expected UsageError");
    } catch (const UsageError& e) {
        CHECK(std::string(e.what()).find("bogus") != std::string::npos);
    }
    TrainConfig bad;
    bad.lr = -1.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = TrainConfig{};
    bad.train_frac = 0.8;
    CHECK_THROWS_AS(bad.validate(), UsageError);
    bad = TrainConfig{};
    bad.data_ratio = 0.0;
    CHECK_THROWS_AS(bad.validate(), UsageError);

    TrainConfig o;
    apply_override(o, "lambda_cons", "0.25");
    apply_override(o, "backbone", "lstm");
    apply_override(o, "clamp_beta_zero", "true");
    CHECK(o.lambda_cons == 0.25);
    CHECK(o.backbone == BackboneKind::Lstm);
    CHECK(o.clamp_beta_zero);
    CHECK_THROWS_AS(apply_override(o, "nope", "1"), UsageError);
    CHECK_THROWS_AS(apply_override(o, "window", "\"six\""), UsageError);
}

TEST_CASE("configuration has the documented defaults") {
    const TrainConfig c;
    CHECK(c.window == 6);
    CHECK(c.lr == 1e-3);
    CHECK(c.weight_decay == 1e-4);
    CHECK(c.dropout == 0.1);
    CHECK(c.batch_size == 64);
    CHECK(c.max_epochs == 100);
    CHECK(c.patience == 10);
    CHECK(c.train_frac == 0.7);
    CHECK(c.val_frac == 0.15);
    CHECK(c.test_frac == 0.15);
    CHECK(c.lambda_cons == 0.5);
    CHECK(c.lambda_ctrl == 0.1);
    CHECK(c.lambda_inter == 1.0);
    CHECK(c.lambda_intra == 0.1);
    CHECK(c.tau == 0.5);
    CHECK(c.eps == 1e-6);
    CHECK(c.hidden == 128);
    CHECK(c.heads == 4);
    CHECK(c.lstm_layers == 2);
    CHECK(c.aug_task_loss_weight == 0.0);
}

TEST_CASE("ablations map onto the right components") {
    TrainConfig c;
    c.ablation = Ablation::NoCompositeLoss;
    const auto w = c.loss_weights();
    CHECK(w.lambda_cons == 0.0);
    CHECK(w.lambda_ctrl == 0.0);
    CHECK(w.aug_task_weight > 0.0);
    c.ablation = Ablation::NoSpectral;
    CHECK_FALSE(c.augmentor_config().spectral);
    c.ablation = Ablation::NoMultisystem;
    const auto s = c.effective_schema(SystemSchema::default_nine(2));
    CHECK(s.system_count() == 1);
    CHECK(s[0].variable_indices.size() == 18);
    c.ablation = Ablation::None;
    CHECK(c.effective_schema(SystemSchema::default_nine(2)).system_count() == 9);
    CHECK(ablation_from_string("no_spectral") == Ablation::NoSpectral);
    CHECK_THROWS_AS(ablation_from_string("no_everything"), UsageError);
    CHECK_THROWS_AS(run_ablation(small_config(), Ablation::None, small_cohort()), UsageError);
}

TEST_CASE("checkpoint round trip and error reporting") {
    TempDir dir("ckpt");
    ad::ParameterSet ps;
    std::mt19937_64 rng(83);
    ps.add("w", 3, 4).value = random_mat(3, 4, rng);
    ps.add("b", 1, 4).value = random_mat(1, 4, rng);
    Checkpoint c;
    c.header = {{"kind", "test"}, {"n", 3}};
    c.add("p.", ps);
    c.save(dir / "a.ckpt");
    const auto back = Checkpoint::load(dir / "a.ckpt");
    CHECK(back.header == c.header);
    CHECK(back.at("p.w") == ps.at("w").value);
    CHECK(back.has_prefix("p."));
    CHECK_FALSE(back.has_prefix("q."));

    ad::ParameterSet target;
    target.add("w", 3, 4);
    target.add("b", 1, 4);
    back.restore("p.", target);
    CHECK(target.at("b").value == ps.at("b").value);
    ad::ParameterSet wrong;
    wrong.add("w", 4, 3);
    CHECK_THROWS_AS(back.restore("p.", wrong), DataError);
    ad::ParameterSet missing;
    missing.add("z", 1, 1);
    CHECK_THROWS_AS(back.restore("p.", missing), DataError);

    {
        std::ofstream junk(dir / "junk.ckpt", std::ios::binary);
        junk << "NOTACKPT";
    }
    CHECK_THROWS_AS(Checkpoint::load(dir / "junk.ckpt"), DataError);
    CHECK_THROWS_AS(Checkpoint::load(dir / "none.ckpt"), DataError);
}

TEST_CASE("Adam follows the bias-corrected update") {
    ad::ParameterSet ps;
    auto& p = ps.add("x", 1, 2);
    p.value << 1.0, -2.0;
    AdamOptions o;
    o.lr = 0.1;
    o.weight_decay = 0.01;
    Adam adam(o);
    adam.add("", ps);
    double m[2] = {0, 0}, v[2] = {0, 0}, x[2] = {1.0, -2.0};
    for (int step = 1; step <= 3; ++step) {
        const double g_raw[2] = {0.5 * step, -1.5};
        p.grad = (Mat(1, 2) << g_raw[0], g_raw[1]).finished();
        adam.step();
        for (int i = 0; i < 2; ++i) {
            const double g = g_raw[i] + o.weight_decay * x[i];
            m[i] = 0.9 * m[i] + 0.1 * g;
            v[i] = 0.999 * v[i] + 0.001 * g * g;
            const double mh = m[i] / (1 - std::pow(0.9, step)), vh = v[i] / (1 - std::pow(0.999, step));
            x[i] -= o.lr * mh / (std::sqrt(vh) + 1e-8);
            CHECK(p.value(0, i) == doctest::Approx(x[i]).epsilon(1e-14));
        }
    }
    CHECK(adam.steps() == 3);
}

TEST_CASE("Adam state survives a checkpoint") {
    auto run = [](bool interrupt) {
        ad::ParameterSet ps;
        ps.add("x", 1, 1).value(0, 0) = 1.0;
        Adam adam(AdamOptions{});
        adam.add("p.", ps);
        for (int step = 0; step < 6; ++step) {
            if (interrupt && step == 3) {
                Checkpoint c;
                adam.save(c);
                ad::ParameterSet fresh;
                fresh.add("x", 1, 1).value = ps.at("x").value;
                Adam resumed(AdamOptions{});
                resumed.add("p.", fresh);
                resumed.load(c, adam.steps());
                for (int k = step; k < 6; ++k) {
                    fresh.at("x").grad = Mat::Constant(1, 1, std::sin(k));
                    resumed.step();
                }
                return fresh.at("x").value(0, 0);
            }
            ps.at("x").grad = Mat::Constant(1, 1, std::sin(step));
            adam.step();
        }
        return ps.at("x").value(0, 0);
    };
    CHECK(run(true) == run(false));
}

// ---- training ---------------------------------------------------------------------

TEST_CASE("training is deterministic") {
    for (auto kind : {BackboneKind::Linear, BackboneKind::Transformer}) {
        auto c = small_config(Task::Regression, kind);
        Trainer a(c, small_cohort()), b(c, small_cohort());
        const auto sa = collect_steps(a), sb = collect_steps(b);
        REQUIRE(sa.size() == sb.size());
        for (std::size_t i = 0; i < sa.size(); ++i) CHECK(sa[i].to_json() == sb[i].to_json());
        CHECK(a.history().to_json() == b.history().to_json());
    }
}

TEST_CASE("identity augmentation reproduces the baseline") {
    for (auto kind : {BackboneKind::Linear, BackboneKind::Lstm, BackboneKind::Transformer}) {
        auto base = small_config(Task::Regression, kind);
        base.method = Method::NoAug;
        auto clamped = base;
        clamped.method = Method::Csra;
        clamped.clamp_beta_zero = true;
        clamped.lambda_ctrl = 0.0;
        Trainer a(base, small_cohort()), b(clamped, small_cohort());
        CHECK(a.augmentor() == nullptr);
        CHECK(b.augmentor() != nullptr);
        const auto sa = collect_steps(a), sb = collect_steps(b);
        REQUIRE(sa.size() == sb.size());
        double worst = 0.0;
        for (std::size_t i = 0; i < sa.size(); ++i) worst = std::max(worst, std::abs(sa[i].l_orig - sb[i].l_orig));
        INFO(to_string(kind));
        CHECK(worst < 1e-6);
    }
}

TEST_CASE("early stopping honours patience and restores the best epoch") {
    auto c = small_config();
    c.max_epochs = 60;
    c.patience = 2;
    c.lr = 0.05;
    Trainer t(c, small_cohort());
    const auto& h = t.fit();
    REQUIRE(h.best_epoch >= 0);
    CHECK(static_cast<int>(h.epochs.size()) - 1 - h.best_epoch <= c.patience);
    if (h.stopped_early) CHECK(static_cast<int>(h.epochs.size()) - 1 - h.best_epoch == c.patience);
    double best = std::numeric_limits<double>::infinity();
    for (const auto& e : h.epochs) best = std::min(best, e.val.loss);
    CHECK(h.best_val_loss == best);
    CHECK(t.evaluate_split("val").loss == doctest::Approx(best).epsilon(1e-12));
    CHECK_THROWS_AS(t.run_epoch(), UsageError);
    CHECK_THROWS_AS(t.windows("holdout"), UsageError);
}

TEST_CASE("resuming from a checkpoint continues the same run") {
    TempDir dir("resume");
    auto c = small_config();
    c.max_epochs = 4;
    Trainer full(c, small_cohort());
    const auto full_steps = collect_steps(full);

    Trainer first(c, small_cohort());
    auto steps = std::make_shared<std::vector<LossBreakdown>>();
    first.on_step([steps](const StepRecord& r) { steps->push_back(r.loss); });
    first.run_epoch();
    first.run_epoch();
    first.checkpoint().save(dir / "last.ckpt");
    auto resumed = Trainer::resume(Checkpoint::load(dir / "last.ckpt"), small_cohort());
    resumed->on_step([steps](const StepRecord& r) { steps->push_back(r.loss); });
    resumed->fit();
    REQUIRE(steps->size() == full_steps.size());
    for (std::size_t i = 0; i < steps->size(); ++i)
        CHECK(std::abs((*steps)[i].l_total - full_steps[i].l_total) < 1e-6);
    CHECK(resumed->history().to_json() == full.history().to_json());
    CHECK(resumed->global_step() == full.global_step());
}

TEST_CASE("divergence aborts the epoch and restores the last good parameters") {
    auto c = small_config();
    c.lr = 1e300;
    c.max_steps_per_epoch = 20;
    Trainer t(c, small_cohort());
    std::vector<Mat> before;
    for (auto& p : t.model().params()) before.push_back(p->value);
    CHECK_THROWS_AS(t.run_epoch(), DivergenceError);
    std::size_t i = 0;
    for (auto& p : t.model().params()) CHECK(p->value == before[i++]);
}

TEST_CASE("ablated runs expose their structural changes") {
    auto c = small_config();
    c.max_epochs = 1;
    c.ablation = Ablation::NoCompositeLoss;
    Trainer composite(c, small_cohort());
    CHECK(composite.loss_weights().lambda_cons == 0.0);
    CHECK(composite.loss_weights().lambda_ctrl == 0.0);
    for (const auto& s : collect_steps(composite)) {
        CHECK(std::abs(s.l_total - (s.l_orig + s.l_aug_task)) < 1e-12);
        CHECK(s.l_aug_task > 0.0);
    }
    const auto json = step_json(StepRecord{0, 1, LossBreakdown{}}, composite.loss_weights());
    CHECK(json.at("lambda_cons") == 0.0);
    CHECK(json.at("lambda_ctrl") == 0.0);

    c.ablation = Ablation::NoMultisystem;
    Trainer single(c, small_cohort());
    REQUIRE(single.augmentor());
    CHECK(single.augmentor()->schema().system_count() == 1);
    CHECK(single.augmentor()->schema()[0].variable_indices.size() == 18);

    c.ablation = Ablation::NoSpectral;
    Trainer time_domain(c, small_cohort());
    CHECK(time_domain.augmentor()->band_count() == 1);
    CHECK(std::isfinite(run_ablation(small_config(), Ablation::NoSpectral, small_cohort()).loss));
}

TEST_CASE("classification evaluation reports ranking metrics") {
    auto c = small_config(Task::Classification, BackboneKind::Lstm);
    c.max_epochs = 1;
    Trainer t(c, small_cohort());
    t.fit();
    const auto m = t.evaluate_split("val");
    CHECK(m.samples == static_cast<std::size_t>(t.windows("val").size()));
    CHECK_FALSE(m.mse.has_value());
    if (m.auroc) {
        CHECK(*m.auroc >= 0.0);
        CHECK(*m.auroc <= 1.0);
        CHECK(m.auprc.has_value());
    }
    const auto back = EvalMetrics::from_json(m.to_json());
    CHECK(back.to_json() == m.to_json());
}

}  // TEST_SUITE
