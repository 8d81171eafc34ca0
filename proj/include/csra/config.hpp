#pragma once

// Every hyperparameter of one run. Serialised as flat JSON whose keys are the
// field names below.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "csra/augmentor.hpp"
#include "csra/backbones.hpp"
#include "csra/objectives.hpp"
#include "csra/systems.hpp"

namespace csra {

enum class Method { Csra, NoAug };
enum class Ablation { None, NoMultisystem, NoSpectral, NoCompositeLoss };

std::string to_string(Method m);
Method method_from_string(const std::string& s);
std::string to_string(Ablation a);
Ablation ablation_from_string(const std::string& s);

struct TrainConfig {
    Task task = Task::Regression;
    BackboneKind backbone = BackboneKind::Linear;
    Method method = Method::Csra;
    Ablation ablation = Ablation::None;

    int window = 6;
    int h_reg = 1;
    int h_cls = 6;
    int outcome = 0;

    double lr = 1e-3;
    double weight_decay = 1e-4;
    double dropout = 0.1;
    int batch_size = 64;
    int max_epochs = 100;
    int patience = 10;
    /// 0 means every training window is visited each epoch.
    int max_steps_per_epoch = 0;

    double train_frac = 0.7;
    double val_frac = 0.15;
    double test_frac = 0.15;
    double data_ratio = 1.0;
    std::uint64_t seed = 0;

    double lambda_cons = 0.5;
    double lambda_ctrl = 0.1;
    double lambda_inter = 1.0;
    double lambda_intra = 0.1;
    double tau = 0.5;
    double eps = 1e-6;
    double aug_task_loss_weight = 0.0;
    InterNorm inter_norm = InterNorm::Mean;

    int hidden = 128;
    int heads = 4;
    int lstm_layers = 2;
    bool position_encoding = true;

    int system_dim = 32;
    int global_dim = 64;
    int controller_hidden = 64;
    bool clamp_beta_zero = false;
    double residual_noise_std = 0.0;

    /// Throws UsageError naming the offending key.
    void validate() const;

    nlohmann::json to_json() const;
    /// Starts from `base` and overrides every key present in `j`. Unknown keys
    /// and ill-typed values throw UsageError naming the key.
    static TrainConfig from_json(const nlohmann::json& j, const TrainConfig& base);
    static TrainConfig from_json(const nlohmann::json& j);
    static std::vector<std::string> keys();

    /// Loss weights after applying the ablation.
    LossWeights loss_weights() const;
    AugmentorConfig augmentor_config() const;
    BackboneConfig backbone_config(int variables) const;
    /// Single-system schema under the no-multisystem ablation, else `data_schema`.
    SystemSchema effective_schema(const SystemSchema& data_schema) const;
};

/// Applies one "key=value" override (value parsed as JSON, falling back to a bare string).
void apply_override(TrainConfig& config, const std::string& key, const std::string& value);

}  // namespace csra
