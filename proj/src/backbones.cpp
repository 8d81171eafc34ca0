#include "csra/backbones.hpp"

#include <cmath>

#include "csra/error.hpp"

namespace csra {

std::string to_string(BackboneKind k) {
    switch (k) {
        case BackboneKind::Linear: return "linear";
        case BackboneKind::Lstm: return "lstm";
        case BackboneKind::Transformer: return "transformer";
    }
    return "?";
}

BackboneKind backbone_from_string(const std::string& s) {
    if (s == "linear") return BackboneKind::Linear;
    if (s == "lstm") return BackboneKind::Lstm;
    if (s == "transformer") return BackboneKind::Transformer;
    throw UsageError("unknown backbone '" + s + "' (expected linear, lstm or transformer)");
}

// ---- DropoutContext -------------------------------------------------------------------

DropoutContext::DropoutContext(std::mt19937_64& rng, double rate) : rng_(&rng), rate_(rate) {
    if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout rate must be in [0, 1)");
}

void DropoutContext::record() {
    replaying_ = false;
    cursor_ = 0;
    masks_.clear();
}

void DropoutContext::replay() {
    replaying_ = true;
    cursor_ = 0;
}

const Mat& DropoutContext::mask(Eigen::Index rows, Eigen::Index cols) {
    if (replaying_) {
        if (cursor_ >= masks_.size()) throw ValidationError("dropout replay requested more masks than recorded");
        const Mat& m = masks_[cursor_++];
        if (m.rows() != rows || m.cols() != cols) throw ValidationError("dropout replay shape mismatch");
        return m;
    }
    const double keep = 1.0 - rate_;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(*rng_) < keep ? 1.0 / keep : 0.0;
    masks_.push_back(std::move(m));
    return masks_.back();
}

// ---- Predictor ---------------------------------------------------------------------------

Predictor::Predictor(BackboneConfig config) : config_(config) {
    if (config_.window < 1 || config_.input_dim < 1 || config_.target_dim < 1 || config_.hidden < 1)
        throw ValidationError("backbone: dimensions must be positive");
    if (config_.dropout < 0.0 || config_.dropout >= 1.0) throw ValidationError("backbone: dropout must be in [0, 1)");
}

std::unique_ptr<Predictor> Predictor::create(const BackboneConfig& config) {
    switch (config.kind) {
        case BackboneKind::Linear: return std::make_unique<LinearPredictor>(config);
        case BackboneKind::Lstm: return std::make_unique<LstmPredictor>(config);
        case BackboneKind::Transformer: return std::make_unique<TransformerPredictor>(config);
    }
    throw UsageError("unknown backbone");
}

void Predictor::init(std::mt19937_64& rng) {
    for (auto& p : params_) {
        const std::string& name = p->name;
        auto ends_with = [&](const char* suffix) {
            const std::string s(suffix);
            return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
        };
        if (ends_with(".gamma")) {
            p->value.setOnes();
            continue;
        }
        if (ends_with(".beta")) {
            p->value.setZero();
            continue;
        }
        Eigen::Index fan_in = p->value.rows();
        if (ends_with(".bias"))
            if (const auto* w = params_.find(name.substr(0, name.size() - 5) + ".weight")) fan_in = w->value.rows();
        const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<Eigen::Index>(fan_in, 1)));
        std::uniform_real_distribution<double> dist(-bound, bound);
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = dist(rng);
    }
}

ad::Var Predictor::maybe_dropout(ad::Var v, DropoutContext* dropout) {
    if (!dropout || dropout->rate() <= 0.0) return v;
    return ad::dropout(v, dropout->mask(v.rows(), v.cols()));
}

PredictorVars Predictor::heads(ad::Tape& tape, ad::Var features) {
    auto reg = ad::add_row(ad::matmul(features, tape.param(params_.at("head.reg.weight"))),
                           tape.param(params_.at("head.reg.bias")));
    auto cls = ad::add_row(ad::matmul(features, tape.param(params_.at("head.cls.weight"))),
                           tape.param(params_.at("head.cls.bias")));
    return {reg, cls};
}

PredictorOutput Predictor::predict(const Mat& x) {
    auto [reg, logit] = predict_batch(x);
    return {reg.row(0).transpose(), logit(0, 0)};
}

std::pair<Mat, Mat> Predictor::predict_batch(const Mat& x) {
    if (x.cols() != config_.input_dim || x.rows() % config_.window != 0)
        throw SchemaError("predict: input shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                          " incompatible with window " + std::to_string(config_.window) + " and " +
                          std::to_string(config_.input_dim) + " variables");
    ad::Tape tape;
    tape.set_grad_enabled(false);
    auto out = forward(tape, tape.constant(x), nullptr);
    return {out.reg.value(), out.cls_logit.value()};
}

namespace {

void add_heads(ad::ParameterSet& p, int width, int target_dim) {
    p.add("head.reg.weight", width, target_dim);
    p.add("head.reg.bias", 1, target_dim);
    p.add("head.cls.weight", width, 1);
    p.add("head.cls.bias", 1, 1);
}

void check_input(ad::Var x, const BackboneConfig& c) {
    if (x.cols() != c.input_dim || x.rows() % c.window != 0)
        throw SchemaError("backbone: input shape " + std::to_string(x.rows()) + "x" + std::to_string(x.cols()) +
                          " incompatible with window " + std::to_string(c.window) + " and " +
                          std::to_string(c.input_dim) + " variables");
}

}  // namespace

// ---- Linear ------------------------------------------------------------------------------

LinearPredictor::LinearPredictor(BackboneConfig config) : Predictor(config) {
    params_.add("hidden.weight", static_cast<Eigen::Index>(config_.window) * config_.input_dim, config_.hidden);
    params_.add("hidden.bias", 1, config_.hidden);
    add_heads(params_, config_.hidden, config_.target_dim);
}

PredictorVars LinearPredictor::forward(ad::Tape& tape, ad::Var x, DropoutContext* dropout) {
    check_input(x, config_);
    const Eigen::Index batch = x.rows() / config_.window;
    auto flat = ad::reshape(x, batch, static_cast<Eigen::Index>(config_.window) * config_.input_dim);
    auto h = ad::tanh(ad::add_row(ad::matmul(flat, tape.param(params_.at("hidden.weight"))),
                                  tape.param(params_.at("hidden.bias"))));
    return heads(tape, maybe_dropout(h, dropout));
}

// ---- LSTM --------------------------------------------------------------------------------

LstmPredictor::LstmPredictor(BackboneConfig config) : Predictor(config) {
    if (config_.lstm_layers < 1) throw ValidationError("lstm: need at least one layer");
    const int h = config_.hidden;
    for (int l = 0; l < config_.lstm_layers; ++l) {
        const std::string p = "lstm" + std::to_string(l) + ".";
        params_.add(p + "input.weight", l == 0 ? config_.input_dim : h, 4 * h);
        params_.add(p + "hidden.weight", h, 4 * h);
        params_.add(p + "bias", 1, 4 * h);
    }
    add_heads(params_, h, config_.target_dim);
}

void LstmPredictor::init(std::mt19937_64& rng) {
    Predictor::init(rng);
    // Recurrent weights use the hidden width as fan-in regardless of layer input width.
    const double bound = 1.0 / std::sqrt(static_cast<double>(config_.hidden));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (int l = 0; l < config_.lstm_layers; ++l) {
        const std::string p = "lstm" + std::to_string(l) + ".";
        for (const char* n : {"input.weight", "hidden.weight", "bias"}) {
            auto& v = params_.at(p + n).value;
            for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = dist(rng);
        }
    }
}

PredictorVars LstmPredictor::forward(ad::Tape& tape, ad::Var x, DropoutContext* dropout) {
    check_input(x, config_);
    ad::Var seq = x;
    for (int l = 0; l < config_.lstm_layers; ++l) {
        const std::string p = "lstm" + std::to_string(l) + ".";
        if (l > 0) seq = maybe_dropout(seq, dropout);
        seq = ad::lstm(seq, tape.param(params_.at(p + "input.weight")), tape.param(params_.at(p + "hidden.weight")),
                       tape.param(params_.at(p + "bias")), config_.window);
    }
    auto last = ad::select_rows_stride(seq, config_.window, config_.window - 1);
    return heads(tape, maybe_dropout(last, dropout));
}

// ---- Transformer ------------------------------------------------------------------------

Mat sinusoidal_positions(int window, int width) {
    Mat pe(window, width);
    for (int t = 0; t < window; ++t)
        for (int i = 0; i < width; ++i) {
            const double freq = std::pow(10000.0, -static_cast<double>(2 * (i / 2)) / width);
            pe(t, i) = (i % 2 == 0) ? std::sin(t * freq) : std::cos(t * freq);
        }
    return pe;
}

TransformerPredictor::TransformerPredictor(BackboneConfig config) : Predictor(config) {
    const int h = config_.hidden;
    if (config_.heads < 1 || h % config_.heads != 0)
        throw ValidationError("transformer: hidden width must be divisible by the head count");
    const int ffn = config_.ffn > 0 ? config_.ffn : 2 * h;
    params_.add("embed.weight", config_.input_dim, h);
    params_.add("embed.bias", 1, h);
    for (const char* n : {"attn.q", "attn.k", "attn.v", "attn.out"}) {
        params_.add(std::string(n) + ".weight", h, h);
        params_.add(std::string(n) + ".bias", 1, h);
    }
    params_.add("norm1.gamma", 1, h);
    params_.add("norm1.beta", 1, h);
    params_.add("ffn.in.weight", h, ffn);
    params_.add("ffn.in.bias", 1, ffn);
    params_.add("ffn.out.weight", ffn, h);
    params_.add("ffn.out.bias", 1, h);
    params_.add("norm2.gamma", 1, h);
    params_.add("norm2.beta", 1, h);
    add_heads(params_, h, config_.target_dim);
    positions_ = sinusoidal_positions(config_.window, h);
}

PredictorVars TransformerPredictor::forward(ad::Tape& tape, ad::Var x, DropoutContext* dropout) {
    check_input(x, config_);
    const int w = config_.window;
    const Eigen::Index batch = x.rows() / w;
    auto affine = [&](ad::Var in, const std::string& name) {
        return ad::add_row(ad::matmul(in, tape.param(params_.at(name + ".weight"))),
                           tape.param(params_.at(name + ".bias")));
    };

    auto h = affine(x, "embed");
    if (config_.position_encoding) h = ad::add(h, tape.constant(positions_.replicate(batch, 1)));

    auto attn = ad::multi_head_attention(affine(h, "attn.q"), affine(h, "attn.k"), affine(h, "attn.v"), w,
                                         config_.heads, &attention_);
    attn = maybe_dropout(affine(attn, "attn.out"), dropout);
    auto h1 = ad::layer_norm(ad::add(h, attn), tape.param(params_.at("norm1.gamma")),
                             tape.param(params_.at("norm1.beta")));

    auto ff = affine(ad::relu(affine(h1, "ffn.in")), "ffn.out");
    ff = maybe_dropout(ff, dropout);
    auto h2 = ad::layer_norm(ad::add(h1, ff), tape.param(params_.at("norm2.gamma")),
                             tape.param(params_.at("norm2.beta")));

    return heads(tape, ad::segment_mean(h2, w));
}

}  // namespace csra
