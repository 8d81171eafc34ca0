#pragma once

// Minimal tape-based reverse-mode differentiation over dense row-major
// matrices. A Tape records every operation of one forward pass; backward()
// walks it in reverse and accumulates gradients into leaf Parameters.
//
// Batched sequences use the layout [B*W x F]: row b*W + t holds sample b at
// time step t.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "csra/matrix.hpp"

namespace csra::ad {

/// A named trainable matrix with its accumulated gradient.
struct Parameter {
    std::string name;
    Mat value;
    Mat grad;

    void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Ordered collection of parameters with stable addresses.
class ParameterSet {
public:
    Parameter& add(const std::string& name, Eigen::Index rows, Eigen::Index cols);

    Parameter* find(const std::string& name);
    const Parameter* find(const std::string& name) const;
    Parameter& at(const std::string& name);

    std::size_t size() const { return params_.size(); }
    std::size_t scalar_count() const;

    void zero_grad();

    /// Moves all parameters of `other` into this set, prefixing their names.
    void absorb(ParameterSet&& other, const std::string& prefix);

    auto begin() { return params_.begin(); }
    auto end() { return params_.end(); }
    auto begin() const { return params_.begin(); }
    auto end() const { return params_.end(); }

private:
    std::vector<std::unique_ptr<Parameter>> params_;
};

class Tape;

/// Handle to a node on a Tape. Cheap to copy; valid until the tape is cleared.
class Var {
public:
    Var() = default;
    Var(Tape* tape, int id) : tape_(tape), id_(id) {}

    const Mat& value() const;
    Eigen::Index rows() const { return value().rows(); }
    Eigen::Index cols() const { return value().cols(); }
    double scalar() const { return value()(0, 0); }
    bool requires_grad() const;

    Tape& tape() const { return *tape_; }
    int id() const { return id_; }
    bool valid() const { return tape_ != nullptr; }

private:
    Tape* tape_ = nullptr;
    int id_ = -1;
};

class Tape {
public:
    using Backward = std::function<void(Tape&, const Mat& grad_out, const Mat& out_value)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    /// Leaf that never receives a gradient.
    Var constant(Mat value);
    /// Leaf whose gradient is kept on the node (see grad()).
    Var variable(Mat value);
    /// Leaf bound to a Parameter; gradients accumulate into `p.grad`.
    Var param(Parameter& p);

    /// Seeds d(root)/d(root) = 1 and propagates. Root must be 1x1.
    void backward(Var root);

    /// Gradient stored on a non-parameter node after backward(); empty if unreached.
    const Mat& grad(Var v) const;

    void clear();
    std::size_t size() const { return nodes_.size(); }

    /// When disabled, new nodes never require gradients (inference mode).
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const { return grad_enabled_; }

    // Used by op implementations.
    Var push(Mat value, std::initializer_list<Var> inputs, Backward backward);
    Var push(Mat value, const std::vector<Var>& inputs, Backward backward);
    const Mat& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value_ref(); }
    bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
    template <typename Expr>
    void accumulate(Var v, const Expr& g) {
        auto& n = nodes_[static_cast<std::size_t>(v.id())];
        if (!n.requires_grad) return;
        Mat& target = n.param ? n.param->grad : n.grad;
        if (target.rows() != n.value_ref().rows() || target.cols() != n.value_ref().cols()) {
            target.setZero(n.value_ref().rows(), n.value_ref().cols());
        }
        target.array() += g.array();
    }

private:
    struct Node {
        Mat value;
        Mat grad;
        Parameter* param = nullptr;
        bool requires_grad = false;
        Backward backward;
        const Mat& value_ref() const { return param ? param->value : value; }
    };

    std::vector<Node> nodes_;
    bool grad_enabled_ = true;
};

// ---- elementwise and linear algebra -------------------------------------

Var matmul(Var a, Var b);
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
/// a [n x m] + b [1 x m] broadcast over rows.
Var add_row(Var a, Var b);
/// a [n x m] with row i scaled by c(i, 0); c is [n x 1].
Var mul_col(Var a, Var c);
/// a [n x m] with row i divided by c(i, 0).
Var div_col(Var a, Var c);

Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
/// ln(1 + e^x), evaluated stably.
Var softplus(Var a);
Var exp(Var a);
/// ln(a + eps).
Var log_eps(Var a, double eps);
Var square(Var a);
Var abs(Var a);

// ---- reductions and reshaping -------------------------------------------

Var sum(Var a);
Var mean(Var a);
/// [n x m] -> [n x 1]
Var row_sum(Var a);
/// Mean over consecutive groups of `group` rows: [B*W x m] -> [B x m].
Var segment_mean(Var a, int group);
/// Repeat every row `times` times consecutively: [B x m] -> [B*times x m].
Var repeat_rows(Var a, int times);
Var reshape(Var a, Eigen::Index rows, Eigen::Index cols);
Var gather_cols(Var a, const std::vector<int>& cols);
/// Inverse of gather_cols over a partition: part i lands in columns idx[i].
Var scatter_cols(const std::vector<Var>& parts, const std::vector<std::vector<int>>& idx,
                 Eigen::Index total_cols);
Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var a, Eigen::Index first, Eigen::Index count);
/// Rows offset, offset+stride, ...: picks one time step from a [B*W x m] batch.
Var select_rows_stride(Var a, int stride, int offset);
/// a [B x K] -> [B*W x 1] with out(b*W + t) = a(b, step_to_col[t]).
Var spread_columns(Var a, const std::vector<int>& step_to_col);
/// Per-sample left multiplication: out_b = M * a_b for each [W x m] block.
Var time_transform(Var a, const Mat& m);
/// Constant-valued copy that blocks gradient flow.
Var detach(Var a);
/// a .* mask with a precomputed (already rescaled) mask.
Var dropout(Var a, const Mat& mask);

// ---- fused layers --------------------------------------------------------

/// Row-wise layer normalisation with affine gamma/beta [1 x m].
Var layer_norm(Var a, Var gamma, Var beta, double eps = 1e-5);

/// Multi-head scaled dot-product self attention over per-sample blocks of W
/// rows. q, k, v are [B*W x Dm]. If `weights` is non-null it receives the
/// attention matrices stacked as [(B*heads)*W x W].
Var multi_head_attention(Var q, Var k, Var v, int window, int heads, Mat* weights = nullptr);

/// One recurrent layer with input/forget/cell/output gates (column blocks of
/// the 4H-wide weights, in that order). x is [B*W x In]; returns the hidden
/// sequence [B*W x H]. Initial state is zero.
Var lstm(Var x, Var w_input, Var w_hidden, Var bias, int window);

// ---- losses (all return 1x1) ---------------------------------------------

/// Mean squared error against a constant target.
Var mse_loss(Var pred, const Mat& target);
/// Binary cross-entropy on logits against constant {0,1} labels, mean over entries.
Var bce_with_logits(Var logits, const Mat& labels);
/// SmoothL1 with transition point 1, mean over entries.
Var smooth_l1(Var a, Var b);

}  // namespace csra::ad
