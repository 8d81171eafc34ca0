#pragma once

// Joint training of the predictor and (optionally) the augmentor, with
// early stopping on validation task loss and exact-resume checkpoints.

#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csra/augmentor.hpp"
#include "csra/backbones.hpp"
#include "csra/checkpoint.hpp"
#include "csra/config.hpp"
#include "csra/dataset.hpp"
#include "csra/objectives.hpp"
#include "csra/optim.hpp"

namespace csra {

struct EvalMetrics {
    std::size_t samples = 0;
    /// Mean task loss on the original inputs.
    double loss = 0.0;
    std::optional<double> mse;
    std::optional<double> mae;
    std::optional<double> auroc;
    std::optional<double> auprc;

    nlohmann::json to_json() const;
    static EvalMetrics from_json(const nlohmann::json& j);
};

struct StepRecord {
    int epoch = 0;
    long step = 0;
    LossBreakdown loss;
};

struct EpochRecord {
    int epoch = 0;
    long steps = 0;
    /// Per-field mean over the epoch's steps.
    LossBreakdown train;
    EvalMetrics val;
    bool improved = false;

    nlohmann::json to_json() const;
    static EpochRecord from_json(const nlohmann::json& j);
};

struct History {
    std::vector<EpochRecord> epochs;
    int best_epoch = -1;
    double best_val_loss = std::numeric_limits<double>::infinity();
    int epochs_since_best = 0;
    bool stopped_early = false;

    nlohmann::json to_json() const;
    static History from_json(const nlohmann::json& j);
};

/// Per-step JSON record for the metrics log.
nlohmann::json step_json(const StepRecord& r, const LossWeights& w);

class Trainer {
public:
    /// Splits, normalises and windows `data`, builds and seeds the models.
    Trainer(const TrainConfig& config, const CohortDataset& data);

    /// Rebuilds a trainer from a checkpoint written by checkpoint(); training
    /// continues exactly where it stopped.
    static std::unique_ptr<Trainer> resume(const Checkpoint& ckpt, const CohortDataset& data);

    using StepCallback = std::function<void(const StepRecord&)>;
    void on_step(StepCallback cb) { step_cb_ = std::move(cb); }

    /// One pass over the training windows followed by validation.
    EpochRecord run_epoch();
    bool done() const;
    /// Runs epochs until done(), then restores the best-validation parameters.
    const History& fit(const std::function<void(const EpochRecord&)>& on_epoch = {});
    void restore_best();

    EvalMetrics evaluate(const WindowSet& windows);
    /// "train", "val" or "test".
    EvalMetrics evaluate_split(const std::string& split);
    const WindowSet& windows(const std::string& split) const;

    Checkpoint checkpoint() const;

    const TrainConfig& config() const { return config_; }
    const History& history() const { return history_; }
    Predictor& model() { return *model_; }
    Augmentor* augmentor() { return augmentor_ ? &*augmentor_ : nullptr; }
    const SystemSchema& schema() const { return schema_; }
    const ZScore& zscore() const { return zscore_; }
    const SplitIndices& splits() const { return splits_; }
    const std::vector<int>& train_ids() const { return train_ids_; }
    LossWeights loss_weights() const { return weights_; }
    int epochs_completed() const { return static_cast<int>(history_.epochs.size()); }
    long global_step() const { return global_step_; }

private:
    std::vector<Mat> snapshot() const;
    void load_snapshot(const std::vector<Mat>& values);

    TrainConfig config_;
    LossWeights weights_;
    SystemSchema schema_;
    std::vector<std::string> variable_names_;
    SplitIndices splits_;
    std::vector<int> train_ids_;
    ZScore zscore_;
    WindowSet train_, val_, test_;

    std::unique_ptr<Predictor> model_;
    std::optional<Augmentor> augmentor_;
    Adam adam_;

    std::mt19937_64 shuffle_rng_;
    std::mt19937_64 dropout_rng_;
    std::mt19937_64 noise_rng_;

    History history_;
    std::vector<Mat> best_;
    long global_step_ = 0;
    StepCallback step_cb_;
};

/// Convenience: train a fresh model and return validation metrics of the best epoch.
EvalMetrics train_and_validate(const TrainConfig& config, const CohortDataset& data);

/// Trains `config` with the given ablation applied.
EvalMetrics run_ablation(TrainConfig config, Ablation variant, const CohortDataset& data);

}  // namespace csra
