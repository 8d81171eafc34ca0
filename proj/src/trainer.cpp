#include "csra/trainer.hpp"

#include <algorithm>
#include <iostream>
#include <numeric>
#include <sstream>

#include "csra/error.hpp"
#include "csra/metrics.hpp"

namespace csra {

namespace {

std::string rng_state(const std::mt19937_64& rng) {
    std::ostringstream out;
    out << rng;
    return out.str();
}

void set_rng_state(std::mt19937_64& rng, const std::string& state) {
    std::istringstream in(state);
    in >> rng;
    if (!in) throw DataError("checkpoint: malformed generator state");
}

nlohmann::json optional_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(); }

std::optional<double> optional_from(const nlohmann::json& j, const char* key) {
    if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
    return j.at(key).get<double>();
}

LossBreakdown breakdown_from_json(const nlohmann::json& j) {
    LossBreakdown b;
    b.l_orig = j.at("l_orig").get<double>();
    b.l_cons = j.at("l_cons").get<double>();
    b.l_inter = j.at("l_inter").get<double>();
    b.l_intra = j.at("l_intra").get<double>();
    b.l_ctrl = j.at("l_ctrl").get<double>();
    b.l_aug_task = j.at("l_aug_task").get<double>();
    b.l_total = j.at("l_total").get<double>();
    return b;
}

void accumulate(LossBreakdown& acc, const LossBreakdown& b) {
    acc.l_orig += b.l_orig;
    acc.l_cons += b.l_cons;
    acc.l_inter += b.l_inter;
    acc.l_intra += b.l_intra;
    acc.l_ctrl += b.l_ctrl;
    acc.l_aug_task += b.l_aug_task;
    acc.l_total += b.l_total;
}

LossBreakdown scaled(LossBreakdown b, double s) {
    b.l_orig *= s;
    b.l_cons *= s;
    b.l_inter *= s;
    b.l_intra *= s;
    b.l_ctrl *= s;
    b.l_aug_task *= s;
    b.l_total *= s;
    return b;
}

constexpr Eigen::Index kEvalChunk = 1024;

}  // namespace

// ---- records ----------------------------------------------------------------------------

nlohmann::json EvalMetrics::to_json() const {
    return {{"samples", samples}, {"loss", loss},           {"mse", optional_json(mse)},
            {"mae", optional_json(mae)}, {"auroc", optional_json(auroc)}, {"auprc", optional_json(auprc)}};
}

EvalMetrics EvalMetrics::from_json(const nlohmann::json& j) {
    EvalMetrics m;
    m.samples = j.at("samples").get<std::size_t>();
    m.loss = j.at("loss").get<double>();
    m.mse = optional_from(j, "mse");
    m.mae = optional_from(j, "mae");
    m.auroc = optional_from(j, "auroc");
    m.auprc = optional_from(j, "auprc");
    return m;
}

nlohmann::json EpochRecord::to_json() const {
    return {{"epoch", epoch}, {"steps", steps}, {"train", train.to_json()}, {"val", val.to_json()}, {"improved", improved}};
}

EpochRecord EpochRecord::from_json(const nlohmann::json& j) {
    EpochRecord r;
    r.epoch = j.at("epoch").get<int>();
    r.steps = j.at("steps").get<long>();
    r.train = breakdown_from_json(j.at("train"));
    r.val = EvalMetrics::from_json(j.at("val"));
    r.improved = j.at("improved").get<bool>();
    return r;
}

nlohmann::json History::to_json() const {
    nlohmann::json e = nlohmann::json::array();
    for (const auto& r : epochs) e.push_back(r.to_json());
    return {{"epochs", e},
            {"best_epoch", best_epoch},
            {"best_val_loss", best_epoch >= 0 ? nlohmann::json(best_val_loss) : nlohmann::json()},
            {"epochs_since_best", epochs_since_best},
            {"stopped_early", stopped_early}};
}

History History::from_json(const nlohmann::json& j) {
    History h;
    for (const auto& e : j.at("epochs")) h.epochs.push_back(EpochRecord::from_json(e));
    h.best_epoch = j.at("best_epoch").get<int>();
    if (!j.at("best_val_loss").is_null()) h.best_val_loss = j.at("best_val_loss").get<double>();
    h.epochs_since_best = j.at("epochs_since_best").get<int>();
    h.stopped_early = j.at("stopped_early").get<bool>();
    return h;
}

nlohmann::json step_json(const StepRecord& r, const LossWeights& w) {
    nlohmann::json j = r.loss.to_json();
    j["step"] = r.step;
    j["epoch"] = r.epoch;
    j["lambda_cons"] = w.lambda_cons;
    j["lambda_ctrl"] = w.lambda_ctrl;
    j["lambda_inter"] = w.lambda_inter;
    j["lambda_intra"] = w.lambda_intra;
    return j;
}

// ---- Trainer ----------------------------------------------------------------------------

Trainer::Trainer(const TrainConfig& config, const CohortDataset& data)
    : config_(config),
      weights_(config.loss_weights()),
      schema_(config.effective_schema(data.schema)),
      variable_names_(data.variable_names),
      adam_(AdamOptions{config.lr, 0.9, 0.999, 1e-8, config.weight_decay}),
      shuffle_rng_(rng_stream(config.seed, 3)),
      dropout_rng_(rng_stream(config.seed, 4)),
      noise_rng_(rng_stream(config.seed, 7)) {
    config_.validate();
    if (config_.outcome >= data.outcome_count()) throw UsageError("config key 'outcome' exceeds the dataset's outcomes");

    splits_ = split_trajectories(data.n_trajectories, config_.seed, config_.train_frac, config_.val_frac);
    train_ids_ = subsample(splits_.train, config_.data_ratio, config_.seed);
    zscore_ = fit_zscore(data, train_ids_);

    WindowSpec spec;
    spec.window = config_.window;
    spec.h_reg = config_.h_reg;
    spec.h_cls = config_.h_cls;
    spec.need_reg = config_.task == Task::Regression;
    spec.need_cls = config_.task == Task::Classification;
    spec.outcome = config_.outcome;
    train_ = window_samples(data, train_ids_, spec, zscore_);
    val_ = window_samples(data, splits_.val, spec, zscore_);
    test_ = window_samples(data, splits_.test, spec, zscore_);
    if (train_.size() == 0) throw DataError("no training windows: trajectories too short for the window and horizon");
    if (val_.size() == 0) throw DataError("no validation windows");

    model_ = Predictor::create(config_.backbone_config(data.n_variables));
    auto theta_rng = rng_stream(config_.seed, 1);
    model_->init(theta_rng);
    adam_.add("model.", model_->params());
    if (config_.method == Method::Csra) {
        augmentor_.emplace(schema_, config_.augmentor_config());
        auto phi_rng = rng_stream(config_.seed, 2);
        augmentor_->init(phi_rng);
        adam_.add("aug.", augmentor_->params());
    }
    best_ = snapshot();
}

std::vector<Mat> Trainer::snapshot() const {
    std::vector<Mat> out;
    for (const auto& p : model_->params()) out.push_back(p->value);
    if (augmentor_)
        for (const auto& p : augmentor_->params()) out.push_back(p->value);
    return out;
}

void Trainer::load_snapshot(const std::vector<Mat>& values) {
    std::size_t i = 0;
    for (auto& p : model_->params()) p->value = values.at(i++);
    if (augmentor_)
        for (auto& p : augmentor_->params()) p->value = values.at(i++);
}

bool Trainer::done() const {
    return history_.stopped_early || epochs_completed() >= config_.max_epochs;
}

EpochRecord Trainer::run_epoch() {
    if (done()) throw UsageError("training already finished");
    const int epoch = epochs_completed();
    const auto last_good = snapshot();

    std::vector<Eigen::Index> order(static_cast<std::size_t>(train_.size()));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::shuffle(order.begin(), order.end(), shuffle_rng_);

    const auto batch = static_cast<std::size_t>(config_.batch_size);
    std::size_t n_steps = (order.size() + batch - 1) / batch;
    if (config_.max_steps_per_epoch > 0) n_steps = std::min(n_steps, static_cast<std::size_t>(config_.max_steps_per_epoch));

    DropoutContext dropout(dropout_rng_, config_.dropout);
    ad::Tape tape;
    EpochRecord rec;
    rec.epoch = epoch;
    for (std::size_t s = 0; s < n_steps; ++s) {
        const auto begin = s * batch;
        const auto end = std::min(order.size(), begin + batch);
        const WindowSet w = train_.select(std::vector<Eigen::Index>(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                                                    order.begin() + static_cast<std::ptrdiff_t>(end)));
        Batch b{w.x, w.y_reg, w.y_cls, config_.window};

        tape.clear();
        model_->params().zero_grad();
        if (augmentor_) augmentor_->params().zero_grad();
        try {
            auto graph = total_loss(tape, b, config_.task, *model_, augmentor_ ? &*augmentor_ : nullptr, weights_,
                                    config_.dropout > 0.0 ? &dropout : nullptr, &noise_rng_);
            tape.backward(graph.total);
            for (const auto& p : model_->params())
                if (!p->grad.allFinite()) throw DivergenceError("non-finite gradient in " + p->name);
            adam_.step();
            ++global_step_;
            accumulate(rec.train, graph.breakdown);
            if (step_cb_) step_cb_(StepRecord{epoch, global_step_, graph.breakdown});
        } catch (const DivergenceError& e) {
            load_snapshot(last_good);
            throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ", step " +
                                  std::to_string(global_step_) + "); parameters reset to the start of the epoch");
        }
        rec.steps += 1;
    }
    rec.train = scaled(rec.train, 1.0 / static_cast<double>(std::max<long>(rec.steps, 1)));
    rec.val = evaluate(val_);

    if (rec.val.loss < history_.best_val_loss) {
        history_.best_val_loss = rec.val.loss;
        history_.best_epoch = epoch;
        history_.epochs_since_best = 0;
        best_ = snapshot();
        rec.improved = true;
    } else {
        ++history_.epochs_since_best;
        if (history_.epochs_since_best >= config_.patience) history_.stopped_early = true;
    }
    history_.epochs.push_back(rec);
    return rec;
}

const History& Trainer::fit(const std::function<void(const EpochRecord&)>& on_epoch) {
    while (!done()) {
        const auto rec = run_epoch();
        if (on_epoch) on_epoch(rec);
    }
    restore_best();
    return history_;
}

void Trainer::restore_best() { load_snapshot(best_); }

EvalMetrics Trainer::evaluate(const WindowSet& windows) {
    EvalMetrics m;
    m.samples = static_cast<std::size_t>(windows.size());
    if (windows.size() == 0) return m;
    const int w = config_.window;
    Mat reg(windows.size(), model_->config().target_dim);
    Mat logit(windows.size(), 1);
    for (Eigen::Index start = 0; start < windows.size(); start += kEvalChunk) {
        const Eigen::Index n = std::min(kEvalChunk, windows.size() - start);
        auto [r, l] = model_->predict_batch(windows.x.middleRows(start * w, n * w));
        reg.middleRows(start, n) = r;
        logit.middleRows(start, n) = l;
    }
    if (config_.task == Task::Regression) {
        m.mse = metrics::mse(reg, windows.y_reg);
        m.mae = metrics::mae(reg, windows.y_reg);
        m.loss = *m.mse;
    } else {
        m.loss = task_loss(logit, windows.y_cls, Task::Classification);
        std::vector<double> scores(logit.data(), logit.data() + logit.size());
        std::vector<int> labels(static_cast<std::size_t>(windows.size()));
        for (Eigen::Index i = 0; i < windows.size(); ++i) labels[static_cast<std::size_t>(i)] = windows.y_cls(i, 0) > 0.5;
        m.auroc = metrics::auroc(scores, labels);
        m.auprc = metrics::auprc(scores, labels);
        if (!m.auroc) std::cerr << "warning: evaluation split has a single class; AUROC/AUPRC reported as null\n";
    }
    return m;
}

const WindowSet& Trainer::windows(const std::string& split) const {
    if (split == "train") return train_;
    if (split == "val") return val_;
    if (split == "test") return test_;
    throw UsageError("unknown split '" + split + "' (expected train, val or test)");
}

EvalMetrics Trainer::evaluate_split(const std::string& split) { return evaluate(windows(split)); }

Checkpoint Trainer::checkpoint() const {
    Checkpoint c;
    c.header = {{"kind", "csra-checkpoint"},
                {"config", config_.to_json()},
                {"epoch", epochs_completed()},
                {"metric", {{"best_val_loss", history_.best_epoch >= 0 ? nlohmann::json(history_.best_val_loss)
                                                                          : nlohmann::json()},
                            {"best_epoch", history_.best_epoch}}},
                {"history", history_.to_json()},
                {"zscore", zscore_.to_json()},
                {"schema", schema_.to_json()},
                {"variable_names", variable_names_},
                {"global_step", global_step_},
                {"adam_steps", adam_.steps()},
                {"rng", {{"shuffle", rng_state(shuffle_rng_)},
                         {"dropout", rng_state(dropout_rng_)},
                         {"noise", rng_state(noise_rng_)}}}};
    c.add("model.", model_->params());
    if (augmentor_) c.add("aug.", augmentor_->params());
    std::size_t i = 0;
    for (const auto& p : model_->params()) c.blocks.emplace_back("best.model." + p->name, best_.at(i++));
    if (augmentor_)
        for (const auto& p : augmentor_->params()) c.blocks.emplace_back("best.aug." + p->name, best_.at(i++));
    adam_.save(c);
    return c;
}

std::unique_ptr<Trainer> Trainer::resume(const Checkpoint& ckpt, const CohortDataset& data) {
    if (ckpt.header.value("kind", "") != "csra-checkpoint") throw DataError("not a training checkpoint");
    const auto config = TrainConfig::from_json(ckpt.header.at("config"));
    if (ckpt.header.contains("variable_names") &&
        ckpt.header.at("variable_names").get<std::vector<std::string>>() != data.variable_names)
        throw DataError("checkpoint was trained on different variables than the dataset");
    auto t = std::make_unique<Trainer>(config, data);
    ckpt.restore("model.", t->model_->params());
    if (t->augmentor_) ckpt.restore("aug.", t->augmentor_->params());
    std::vector<Mat> best;
    for (const auto& p : t->model_->params()) best.push_back(ckpt.at("best.model." + p->name));
    if (t->augmentor_)
        for (const auto& p : t->augmentor_->params()) best.push_back(ckpt.at("best.aug." + p->name));
    t->best_ = std::move(best);
    t->adam_.load(ckpt, ckpt.header.at("adam_steps").get<long>());
    t->history_ = History::from_json(ckpt.header.at("history"));
    t->global_step_ = ckpt.header.at("global_step").get<long>();
    const auto& rng = ckpt.header.at("rng");
    set_rng_state(t->shuffle_rng_, rng.at("shuffle").get<std::string>());
    set_rng_state(t->dropout_rng_, rng.at("dropout").get<std::string>());
    set_rng_state(t->noise_rng_, rng.at("noise").get<std::string>());
    return t;
}

EvalMetrics train_and_validate(const TrainConfig& config, const CohortDataset& data) {
    Trainer t(config, data);
    t.fit();
    return t.evaluate_split("val");
}

EvalMetrics run_ablation(TrainConfig config, Ablation variant, const CohortDataset& data) {
    if (variant == Ablation::None) throw UsageError("ablation variant must be no_multisystem, no_spectral or no_composite_loss");
    config.method = Method::Csra;
    config.ablation = variant;
    return train_and_validate(config, data);
}

}  // namespace csra
