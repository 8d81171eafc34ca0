#include "csra/augmentor.hpp"

#include <cmath>

#include "csra/encoder.hpp"
#include "csra/error.hpp"
#include "csra/objectives.hpp"

namespace csra {

std::string to_string(InterNorm n) { return n == InterNorm::Mean ? "mean" : "raw"; }

InterNorm inter_norm_from_string(const std::string& s) {
    if (s == "mean") return InterNorm::Mean;
    if (s == "raw") return InterNorm::Raw;
    throw UsageError("inter_norm must be 'mean' or 'raw', got '" + s + "'");
}

// ---- value-level ----------------------------------------------------------------

spectral::Spectrum reweight_bands(const spectral::BandComponents& bands, const Vec& alpha) {
    if (alpha.size() != spectral::kBandCount) throw ValidationError("reweight_bands: alpha must have 3 entries");
    return {alpha(0) * bands.delta_low + alpha(1) * bands.delta_mid + alpha(2) * bands.delta_high};
}

namespace {

void check_signals(const Mat& x_s, const controller::ControlSignals& s, Eigen::Index bands) {
    if (s.alpha.size() != bands)
        throw ValidationError("augment_system: alpha has " + std::to_string(s.alpha.size()) + " entries, expected " +
                              std::to_string(bands));
    if (s.gate.size() != x_s.rows())
        throw ValidationError("augment_system: gate length " + std::to_string(s.gate.size()) +
                              " does not match window " + std::to_string(x_s.rows()));
}

Mat apply_gate(const Mat& x_s, const Mat& residual, const controller::ControlSignals& s) {
    Mat scaled = residual.array().colwise() * s.gate.array();
    return x_s + s.beta * scaled;
}

}  // namespace

SystemAugmentResult augment_system(const Mat& x_s, const controller::ControlSignals& signals,
                                   const spectral::BandPartition& partition, InterNorm norm) {
    check_signals(x_s, signals, spectral::kBandCount);
    const auto spectrum = spectral::dct_forward(x_s);
    auto bands = spectral::band_components(spectrum, partition);
    Mat residual = spectral::dct_inverse(reweight_bands(bands, signals.alpha));

    SystemAugmentResult out;
    out.augmented = apply_gate(x_s, residual, signals);
    out.diagnostics.u = modulation_strength(signals.beta, signals.alpha, bands, norm);
    out.diagnostics.u_raw = modulation_strength(signals.beta, signals.alpha, bands, InterNorm::Raw);
    out.diagnostics.bands = std::move(bands);
    out.diagnostics.residual = std::move(residual);
    out.diagnostics.signals = signals;
    return out;
}

SystemAugmentResult augment_system_time_domain(const Mat& x_s, const controller::ControlSignals& signals,
                                               InterNorm norm) {
    check_signals(x_s, signals, 1);
    spectral::require_finite(x_s, "augment_system");
    SystemAugmentResult out;
    out.diagnostics.residual = signals.alpha(0) * x_s;
    out.augmented = apply_gate(x_s, out.diagnostics.residual, signals);
    const double l1 = x_s.cwiseAbs().sum();
    const double n = static_cast<double>(x_s.size());
    out.diagnostics.u_raw = Vec::Constant(1, signals.beta * signals.alpha(0) * l1);
    out.diagnostics.u = norm == InterNorm::Mean ? Vec(out.diagnostics.u_raw / n) : out.diagnostics.u_raw;
    out.diagnostics.signals = signals;
    return out;
}

// ---- Augmentor ----------------------------------------------------------------------

Augmentor::Augmentor(SystemSchema schema, AugmentorConfig config)
    : schema_(std::move(schema)), config_(config) {
    if (config_.window < 2) throw ValidationError("augmentor: window must be at least 2");
    if (config_.system_dim < 1 || config_.global_dim < 1 || config_.controller_hidden < 1)
        throw ValidationError("augmentor: layer widths must be positive");
    if (config_.residual_noise_std < 0) throw ValidationError("augmentor: residual_noise_std must be >= 0");
    const int w = config_.window;
    const int k = band_count();
    dct_ = spectral::dct_matrix(w);
    if (config_.spectral) {
        partition_ = spectral::band_partition(w);
        band_indicator_ = Mat::Zero(w, k);
        const auto bands = partition_.coefficient_bands();
        for (int r = 0; r < w; ++r) band_indicator_(r, bands[static_cast<std::size_t>(r)]) = 1.0;
    }

    const int s_count = schema_.system_count();
    for (const auto& sys : schema_.systems()) {
        const auto ds = static_cast<Eigen::Index>(sys.variable_indices.size());
        params_.add("enc." + sys.id + ".weight", ds, config_.system_dim);
        params_.add("enc." + sys.id + ".bias", 1, config_.system_dim);
    }
    params_.add("global.weight", static_cast<Eigen::Index>(s_count) * config_.system_dim, config_.global_dim);
    params_.add("global.bias", 1, config_.global_dim);
    const int ctrl_in = config_.system_dim + config_.global_dim;
    const int hc = config_.controller_hidden;
    for (const auto& sys : schema_.systems()) {
        const std::string p = "ctrl." + sys.id + ".";
        params_.add(p + "hidden.weight", ctrl_in, hc);
        params_.add(p + "hidden.bias", 1, hc);
        params_.add(p + "alpha.weight", hc, k);
        params_.add(p + "alpha.bias", 1, k);
        params_.add(p + "gate.weight", hc, w);
        params_.add(p + "gate.bias", 1, w);
        params_.add(p + "beta.weight", hc, 1);
        params_.add(p + "beta.bias", 1, 1);
    }
}

void Augmentor::init(std::mt19937_64& rng) {
    // fan_in is the row count of the matching weight matrix.
    for (auto& p : params_) {
        const std::string& name = p->name;
        Eigen::Index fan_in = p->value.rows();
        if (name.size() > 5 && name.compare(name.size() - 5, 5, ".bias") == 0) {
            fan_in = params_.at(name.substr(0, name.size() - 5) + ".weight").value.rows();
        }
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = dist(rng);
    }
}

void Augmentor::zero() {
    for (auto& p : params_) p->value.setZero();
}

AugmentVars Augmentor::forward(ad::Tape& tape, ad::Var x, std::mt19937_64* noise_rng) {
    const int w = config_.window;
    if (x.cols() != schema_.variable_count())
        throw SchemaError("augmentor: input has " + std::to_string(x.cols()) + " columns, schema expects " +
                          std::to_string(schema_.variable_count()));
    if (x.rows() % w != 0) throw SchemaError("augmentor: batch rows not a multiple of the window");
    const Eigen::Index batch = x.rows() / w;
    const auto idx = schema_.index_lists();
    const auto coefficient_bands = config_.spectral ? partition_.coefficient_bands() : std::vector<int>{};

    std::vector<ad::Var> parts;
    std::vector<ad::Var> z_local;
    for (std::size_t s = 0; s < idx.size(); ++s) {
        const auto& id = schema_.systems()[s].id;
        parts.push_back(ad::gather_cols(x, idx[s]));
        z_local.push_back(encoder::encode_system(parts.back(), tape.param(params_.at("enc." + id + ".weight")),
                                                 tape.param(params_.at("enc." + id + ".bias")), w));
    }
    auto z_global =
        encoder::encode_global(z_local, tape.param(params_.at("global.weight")), tape.param(params_.at("global.bias")));

    AugmentVars out;
    std::vector<ad::Var> augmented_parts;
    for (std::size_t s = 0; s < idx.size(); ++s) {
        const std::string p = "ctrl." + schema_.systems()[s].id + ".";
        auto bind = [&](const std::string& n) { return tape.param(params_.at(p + n)); };
        const controller::WeightVars weights{bind("hidden.weight"), bind("hidden.bias"), bind("alpha.weight"),
                                             bind("alpha.bias"),    bind("gate.weight"),   bind("gate.bias"),
                                             bind("beta.weight"),   bind("beta.bias")};
        auto signals = controller::control(z_local[s], z_global, weights);
        SystemAugmentVars sv;
        sv.alpha = signals.alpha;
        sv.gate = signals.gate;
        sv.beta = config_.clamp_beta_zero ? tape.constant(Mat::Zero(batch, 1)) : signals.beta;

        const ad::Var& xs = parts[s];
        const auto ds = static_cast<double>(xs.cols());
        ad::Var l1;
        if (config_.spectral) {
            auto spec = ad::time_transform(xs, dct_);
            auto reweighted = ad::mul_col(spec, ad::spread_columns(sv.alpha, coefficient_bands));
            if (config_.residual_noise_std > 0.0) {
                if (!noise_rng) throw ValidationError("augmentor: residual noise requested without an RNG");
                std::normal_distribution<double> dist(0.0, config_.residual_noise_std);
                Mat noise(reweighted.rows(), reweighted.cols());
                for (Eigen::Index i = 0; i < noise.size(); ++i) noise.data()[i] = dist(*noise_rng);
                reweighted = ad::add(reweighted, tape.constant(std::move(noise)));
            }
            sv.residual = ad::time_transform(reweighted, dct_.transpose());
            l1 = ad::matmul(ad::reshape(ad::row_sum(ad::abs(spec)), batch, w), tape.constant(band_indicator_));
        } else {
            sv.residual = ad::mul_col(xs, ad::repeat_rows(sv.alpha, w));
            l1 = ad::row_sum(ad::reshape(ad::row_sum(ad::abs(xs)), batch, w));
        }
        const double norm = config_.inter_norm == InterNorm::Mean ? 1.0 / (w * ds) : 1.0;
        sv.u = ad::mul_col(ad::mul(sv.alpha, ad::scale(l1, norm)), sv.beta);

        auto step_scale = ad::mul(ad::repeat_rows(sv.beta, w), ad::reshape(sv.gate, batch * w, 1));
        sv.scaled_residual = ad::mul_col(sv.residual, step_scale);
        augmented_parts.push_back(ad::add(xs, sv.scaled_residual));
        out.systems.push_back(sv);
    }
    out.augmented = ad::scatter_cols(augmented_parts, idx, schema_.variable_count());
    return out;
}

std::vector<std::vector<AugmentationDiagnostics>> Augmentor::diagnose(const Mat& batch) {
    const int w = config_.window;
    ad::Tape tape;
    tape.set_grad_enabled(false);
    std::mt19937_64 noise_rng(0);
    auto vars = forward(tape, tape.constant(batch), &noise_rng);
    const Eigen::Index n = batch.rows() / w;
    std::vector<std::vector<AugmentationDiagnostics>> out(static_cast<std::size_t>(n));
    for (Eigen::Index b = 0; b < n; ++b) {
        const Mat sample = batch.middleRows(b * w, w);
        const auto parts = split(sample, schema_);
        for (std::size_t s = 0; s < vars.systems.size(); ++s) {
            const auto& sv = vars.systems[s];
            AugmentationDiagnostics d;
            d.system_id = schema_.systems()[s].id;
            if (config_.spectral) d.bands = spectral::band_components(spectral::dct_forward(parts[s]), partition_);
            d.residual = sv.residual.value().middleRows(b * w, w);
            d.signals.alpha = sv.alpha.value().row(b).transpose();
            d.signals.gate = sv.gate.value().row(b).transpose();
            d.signals.beta = sv.beta.value()(b, 0);
            d.u = sv.u.value().row(b).transpose();
            const double count = static_cast<double>(w * parts[s].cols());
            d.u_raw = config_.inter_norm == InterNorm::Mean ? Vec(d.u * count) : d.u;
            out[static_cast<std::size_t>(b)].push_back(std::move(d));
        }
    }
    return out;
}

std::pair<Mat, std::vector<AugmentationDiagnostics>> Augmentor::augment(const Mat& x) {
    if (x.rows() != config_.window)
        throw SchemaError("augment: sample has " + std::to_string(x.rows()) + " rows, window is " +
                          std::to_string(config_.window));
    spectral::require_finite(x, "augment");
    ad::Tape tape;
    tape.set_grad_enabled(false);
    std::mt19937_64 noise_rng(0);
    auto vars = forward(tape, tape.constant(x), &noise_rng);
    Mat augmented = vars.augmented.value();
    auto diags = diagnose(x);
    return {std::move(augmented), std::move(diags.front())};
}

controller::WeightValues Augmentor::controller_weights(int system) const {
    const std::string p = "ctrl." + schema_[system].id + ".";
    auto v = [&](const std::string& n) { return params_.find(p + n)->value; };
    return {v("hidden.weight"), v("hidden.bias"), v("alpha.weight"), v("alpha.bias"),
            v("gate.weight"),   v("gate.bias"),   v("beta.weight"),  v("beta.bias")};
}

Mat Augmentor::encoder_weight(int system) const { return params_.find("enc." + schema_[system].id + ".weight")->value; }
Mat Augmentor::encoder_bias(int system) const { return params_.find("enc." + schema_[system].id + ".bias")->value; }
Mat Augmentor::global_weight() const { return params_.find("global.weight")->value; }
Mat Augmentor::global_bias() const { return params_.find("global.bias")->value; }

}  // namespace csra
