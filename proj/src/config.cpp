#include "csra/config.hpp"

#include <cmath>
#include <functional>

#include "csra/error.hpp"

namespace csra {

std::string to_string(Method m) { return m == Method::Csra ? "csra" : "noaug"; }

Method method_from_string(const std::string& s) {
    if (s == "csra") return Method::Csra;
    if (s == "noaug") return Method::NoAug;
    throw UsageError("unknown method '" + s + "' (expected csra or noaug)");
}

std::string to_string(Ablation a) {
    switch (a) {
        case Ablation::None: return "none";
        case Ablation::NoMultisystem: return "no_multisystem";
        case Ablation::NoSpectral: return "no_spectral";
        case Ablation::NoCompositeLoss: return "no_composite_loss";
    }
    return "?";
}

Ablation ablation_from_string(const std::string& s) {
    if (s == "none") return Ablation::None;
    if (s == "no_multisystem") return Ablation::NoMultisystem;
    if (s == "no_spectral") return Ablation::NoSpectral;
    if (s == "no_composite_loss") return Ablation::NoCompositeLoss;
    throw UsageError("unknown ablation '" + s + "' (expected no_multisystem, no_spectral or no_composite_loss)");
}

namespace {

struct Field {
    const char* key;
    std::function<nlohmann::json(const TrainConfig&)> get;
    std::function<void(TrainConfig&, const nlohmann::json&)> set;
};

template <typename T>
Field plain(const char* key, T TrainConfig::*member) {
    return {key, [member](const TrainConfig& c) { return nlohmann::json(c.*member); },
            [member](TrainConfig& c, const nlohmann::json& j) {
                if constexpr (std::is_same_v<T, bool>) {
                    if (!j.is_boolean()) throw std::invalid_argument("expected a boolean");
                } else if constexpr (std::is_integral_v<T>) {
                    if (!j.is_number_integer()) throw std::invalid_argument("expected an integer");
                    if constexpr (std::is_unsigned_v<T>)
                        if (j.is_number_integer() && !j.is_number_unsigned() && j.get<long long>() < 0)
                            throw std::invalid_argument("expected a non-negative integer");
                } else {
                    if (!j.is_number()) throw std::invalid_argument("expected a number");
                }
                c.*member = j.get<T>();
            }};
}

template <typename E>
Field enumerated(const char* key, E TrainConfig::*member, E (*parse)(const std::string&)) {
    return {key, [member](const TrainConfig& c) { return nlohmann::json(to_string(c.*member)); },
            [member, parse](TrainConfig& c, const nlohmann::json& j) {
                if (!j.is_string()) throw std::invalid_argument("expected a string");
                c.*member = parse(j.get<std::string>());
            }};
}

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        enumerated("task", &TrainConfig::task, &task_from_string),
        enumerated("backbone", &TrainConfig::backbone, &backbone_from_string),
        enumerated("method", &TrainConfig::method, &method_from_string),
        enumerated("ablation", &TrainConfig::ablation, &ablation_from_string),
        plain("window", &TrainConfig::window),
        plain("h_reg", &TrainConfig::h_reg),
        plain("h_cls", &TrainConfig::h_cls),
        plain("outcome", &TrainConfig::outcome),
        plain("lr", &TrainConfig::lr),
        plain("weight_decay", &TrainConfig::weight_decay),
        plain("dropout", &TrainConfig::dropout),
        plain("batch_size", &TrainConfig::batch_size),
        plain("max_epochs", &TrainConfig::max_epochs),
        plain("patience", &TrainConfig::patience),
        plain("max_steps_per_epoch", &TrainConfig::max_steps_per_epoch),
        plain("train_frac", &TrainConfig::train_frac),
        plain("val_frac", &TrainConfig::val_frac),
        plain("test_frac", &TrainConfig::test_frac),
        plain("data_ratio", &TrainConfig::data_ratio),
        plain("seed", &TrainConfig::seed),
        plain("lambda_cons", &TrainConfig::lambda_cons),
        plain("lambda_ctrl", &TrainConfig::lambda_ctrl),
        plain("lambda_inter", &TrainConfig::lambda_inter),
        plain("lambda_intra", &TrainConfig::lambda_intra),
        plain("tau", &TrainConfig::tau),
        plain("eps", &TrainConfig::eps),
        plain("aug_task_loss_weight", &TrainConfig::aug_task_loss_weight),
        enumerated("inter_norm", &TrainConfig::inter_norm, &inter_norm_from_string),
        plain("hidden", &TrainConfig::hidden),
        plain("heads", &TrainConfig::heads),
        plain("lstm_layers", &TrainConfig::lstm_layers),
        plain("position_encoding", &TrainConfig::position_encoding),
        plain("system_dim", &TrainConfig::system_dim),
        plain("global_dim", &TrainConfig::global_dim),
        plain("controller_hidden", &TrainConfig::controller_hidden),
        plain("clamp_beta_zero", &TrainConfig::clamp_beta_zero),
        plain("residual_noise_std", &TrainConfig::residual_noise_std),
    };
    return table;
}

const Field* find_field(const std::string& key) {
    for (const auto& f : fields())
        if (key == f.key) return &f;
    return nullptr;
}

void set_field(TrainConfig& c, const std::string& key, const nlohmann::json& value) {
    const Field* f = find_field(key);
    if (!f) throw UsageError("unknown config key '" + key + "'");
    try {
        f->set(c, value);
    } catch (const std::exception& e) {
        throw UsageError("config key '" + key + "': " + e.what());
    }
}

void require(bool ok, const char* key, const char* what) {
    if (!ok) throw UsageError(std::string("config key '") + key + "' " + what);
}

}  // namespace

void TrainConfig::validate() const {
    require(window >= 1, "window", "must be >= 1");
    if (method == Method::Csra && ablation != Ablation::NoSpectral)
        require(window >= 3, "window", "must be >= 3 for the spectral augmentor");
    require(h_reg >= 1, "h_reg", "must be >= 1");
    require(h_cls >= 1, "h_cls", "must be >= 1");
    require(outcome >= 0, "outcome", "must be >= 0");
    require(lr > 0.0, "lr", "must be positive");
    require(weight_decay >= 0.0, "weight_decay", "must be non-negative");
    require(dropout >= 0.0 && dropout < 1.0, "dropout", "must be in [0, 1)");
    require(batch_size >= 1, "batch_size", "must be >= 1");
    require(max_epochs >= 1, "max_epochs", "must be >= 1");
    require(patience >= 1, "patience", "must be >= 1");
    require(max_steps_per_epoch >= 0, "max_steps_per_epoch", "must be non-negative");
    require(train_frac > 0.0, "train_frac", "must be positive");
    require(val_frac > 0.0, "val_frac", "must be positive");
    require(test_frac >= 0.0, "test_frac", "must be non-negative");
    require(std::abs(train_frac + val_frac + test_frac - 1.0) < 1e-9, "train_frac", "with val_frac and test_frac must sum to 1");
    require(data_ratio > 0.0 && data_ratio <= 1.0, "data_ratio", "must be in (0, 1]");
    for (auto [v, k] : {std::pair{lambda_cons, "lambda_cons"}, {lambda_ctrl, "lambda_ctrl"},
                        {lambda_inter, "lambda_inter"}, {lambda_intra, "lambda_intra"},
                        {aug_task_loss_weight, "aug_task_loss_weight"}, {residual_noise_std, "residual_noise_std"}})
        require(v >= 0.0 && std::isfinite(v), k, "must be finite and non-negative");
    require(tau >= 0.0, "tau", "must be non-negative");
    require(eps > 0.0, "eps", "must be positive");
    require(hidden >= 1, "hidden", "must be >= 1");
    require(heads >= 1 && hidden % heads == 0, "heads", "must divide hidden");
    require(lstm_layers >= 1, "lstm_layers", "must be >= 1");
    require(system_dim >= 1, "system_dim", "must be >= 1");
    require(global_dim >= 1, "global_dim", "must be >= 1");
    require(controller_hidden >= 1, "controller_hidden", "must be >= 1");
}

nlohmann::json TrainConfig::to_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& f : fields()) j[f.key] = f.get(*this);
    return j;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j, const TrainConfig& base) {
    if (!j.is_object()) throw UsageError("config must be a JSON object");
    TrainConfig c = base;
    for (const auto& [key, value] : j.items()) set_field(c, key, value);
    return c;
}

TrainConfig TrainConfig::from_json(const nlohmann::json& j) { return from_json(j, TrainConfig{}); }

std::vector<std::string> TrainConfig::keys() {
    std::vector<std::string> out;
    for (const auto& f : fields()) out.emplace_back(f.key);
    return out;
}

void apply_override(TrainConfig& config, const std::string& key, const std::string& value) {
    nlohmann::json parsed;
    try {
        parsed = nlohmann::json::parse(value);
    } catch (const nlohmann::json::exception&) {
        parsed = value;
    }
    set_field(config, key, parsed);
}

LossWeights TrainConfig::loss_weights() const {
    LossWeights w;
    w.lambda_cons = lambda_cons;
    w.lambda_ctrl = lambda_ctrl;
    w.lambda_inter = lambda_inter;
    w.lambda_intra = lambda_intra;
    w.tau = tau;
    w.eps = eps;
    w.aug_task_weight = aug_task_loss_weight;
    if (ablation == Ablation::NoCompositeLoss) {
        w.lambda_cons = 0.0;
        w.lambda_ctrl = 0.0;
        // The augmentor would otherwise receive no gradient at all.
        w.aug_task_weight = 1.0;
    }
    return w;
}

AugmentorConfig TrainConfig::augmentor_config() const {
    AugmentorConfig a;
    a.window = window;
    a.system_dim = system_dim;
    a.global_dim = global_dim;
    a.controller_hidden = controller_hidden;
    a.spectral = ablation != Ablation::NoSpectral;
    a.clamp_beta_zero = clamp_beta_zero;
    a.residual_noise_std = residual_noise_std;
    a.inter_norm = inter_norm;
    return a;
}

BackboneConfig TrainConfig::backbone_config(int variables) const {
    BackboneConfig b;
    b.kind = backbone;
    b.window = window;
    b.input_dim = variables;
    b.target_dim = variables;
    b.hidden = hidden;
    b.heads = heads;
    b.lstm_layers = lstm_layers;
    b.dropout = dropout;
    b.position_encoding = position_encoding;
    return b;
}

SystemSchema TrainConfig::effective_schema(const SystemSchema& data_schema) const {
    if (ablation == Ablation::NoMultisystem) return SystemSchema::single(data_schema.variable_count());
    return data_schema;
}

}  // namespace csra
