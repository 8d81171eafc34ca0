#pragma once

// Downstream predictors f_theta with a regression head and a classification head.

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "csra/autodiff.hpp"

namespace csra {

enum class BackboneKind { Linear, Lstm, Transformer };

std::string to_string(BackboneKind k);
BackboneKind backbone_from_string(const std::string& s);

struct BackboneConfig {
    BackboneKind kind = BackboneKind::Linear;
    int window = 6;
    int input_dim = 18;
    int target_dim = 18;
    int hidden = 128;
    int heads = 4;
    /// Transformer feed-forward width; 0 means 2 * hidden.
    int ffn = 0;
    int lstm_layers = 2;
    double dropout = 0.1;
    bool position_encoding = true;
};

/// Supplies dropout masks during training. The first branch of a step records
/// its masks; a second branch on the same batch can replay them in order, so
/// paired forward passes see identical dropout.
class DropoutContext {
public:
    DropoutContext(std::mt19937_64& rng, double rate);

    void record();
    void replay();

    double rate() const { return rate_; }
    /// Rescaled keep-mask (entries 0 or 1/(1-rate)).
    const Mat& mask(Eigen::Index rows, Eigen::Index cols);

private:
    std::mt19937_64* rng_;
    double rate_;
    bool replaying_ = false;
    std::size_t cursor_ = 0;
    std::vector<Mat> masks_;
};

/// Graph handles for a batch: reg [B x target_dim], cls_logit [B x 1].
struct PredictorVars {
    ad::Var reg;
    ad::Var cls_logit;
};

/// Value-level output for one window.
struct PredictorOutput {
    Vec reg;
    double cls_logit = 0.0;
};

class Predictor {
public:
    virtual ~Predictor() = default;

    static std::unique_ptr<Predictor> create(const BackboneConfig& config);

    /// x is [B*W x D]. A null dropout context means evaluation mode.
    virtual PredictorVars forward(ad::Tape& tape, ad::Var x, DropoutContext* dropout) = 0;

    /// Evaluation-mode prediction for one window [W x D].
    PredictorOutput predict(const Mat& x);
    /// Evaluation-mode prediction for a batch [B*W x D]: returns (reg [B x target], logits [B x 1]).
    std::pair<Mat, Mat> predict_batch(const Mat& x);

    /// Default initialisation: uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)), layer-norm gains 1.
    virtual void init(std::mt19937_64& rng);

    ad::ParameterSet& params() { return params_; }
    const ad::ParameterSet& params() const { return params_; }
    const BackboneConfig& config() const { return config_; }

protected:
    explicit Predictor(BackboneConfig config);

    ad::Var maybe_dropout(ad::Var v, DropoutContext* dropout);
    PredictorVars heads(ad::Tape& tape, ad::Var features);

    BackboneConfig config_;
    ad::ParameterSet params_;
};

/// Flatten the window, one tanh hidden layer, two heads.
class LinearPredictor final : public Predictor {
public:
    explicit LinearPredictor(BackboneConfig config);
    PredictorVars forward(ad::Tape& tape, ad::Var x, DropoutContext* dropout) override;
};

/// Stacked gated recurrent layers; heads read the last hidden state.
class LstmPredictor final : public Predictor {
public:
    explicit LstmPredictor(BackboneConfig config);
    PredictorVars forward(ad::Tape& tape, ad::Var x, DropoutContext* dropout) override;
    void init(std::mt19937_64& rng) override;
};

/// Embedding + sinusoidal positions, one post-norm encoder layer, mean pool, two heads.
class TransformerPredictor final : public Predictor {
public:
    explicit TransformerPredictor(BackboneConfig config);
    PredictorVars forward(ad::Tape& tape, ad::Var x, DropoutContext* dropout) override;

    /// Attention weights of the last forward pass, stacked [(B*heads)*W x W].
    const Mat& last_attention() const { return attention_; }

private:
    Mat positions_;  // [W x hidden]
    Mat attention_;
};

/// Sinusoidal position table [window x width].
Mat sinusoidal_positions(int window, int width);

}  // namespace csra
