#include "csra/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "csra/error.hpp"

namespace csra::ad {

namespace {

void require(bool ok, const char* what) {
    if (!ok) throw SchemaError(std::string("autodiff: ") + what);
}

using StridedMap = Eigen::Map<Mat, 0, Eigen::OuterStride<>>;
using ConstStridedMap = Eigen::Map<const Mat, 0, Eigen::OuterStride<>>;

// Rows t, t+W, t+2W, ... of a [B*W x m] matrix as a [B x m] view.
ConstStridedMap step_rows(const Mat& a, int window, int t) {
    return {a.data() + static_cast<Eigen::Index>(t) * a.cols(), a.rows() / window, a.cols(),
            Eigen::OuterStride<>(window * a.cols())};
}
StridedMap step_rows(Mat& a, int window, int t) {
    return {a.data() + static_cast<Eigen::Index>(t) * a.cols(), a.rows() / window, a.cols(),
            Eigen::OuterStride<>(window * a.cols())};
}

double sigmoid_scalar(double x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const double e = std::exp(x);
    return e / (1.0 + e);
}

double softplus_scalar(double x) {
    return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x)));
}

}  // namespace

// ---- ParameterSet ---------------------------------------------------------

Parameter& ParameterSet::add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
    if (find(name)) throw SchemaError("duplicate parameter name '" + name + "'");
    auto p = std::make_unique<Parameter>();
    p->name = name;
    p->value.setZero(rows, cols);
    p->grad.setZero(rows, cols);
    params_.push_back(std::move(p));
    return *params_.back();
}

Parameter* ParameterSet::find(const std::string& name) {
    for (auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

const Parameter* ParameterSet::find(const std::string& name) const {
    for (const auto& p : params_)
        if (p->name == name) return p.get();
    return nullptr;
}

Parameter& ParameterSet::at(const std::string& name) {
    if (auto* p = find(name)) return *p;
    throw SchemaError("unknown parameter '" + name + "'");
}

std::size_t ParameterSet::scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p->value.size());
    return n;
}

void ParameterSet::zero_grad() {
    for (auto& p : params_) p->zero_grad();
}

void ParameterSet::absorb(ParameterSet&& other, const std::string& prefix) {
    for (auto& p : other.params_) {
        p->name = prefix + p->name;
        if (find(p->name)) throw SchemaError("duplicate parameter name '" + p->name + "'");
        params_.push_back(std::move(p));
    }
    other.params_.clear();
}

// ---- Var / Tape -----------------------------------------------------------

const Mat& Var::value() const { return tape_->value(id_); }
bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::constant(Mat value) {
    Node n;
    n.value = std::move(value);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::variable(Mat value) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::param(Parameter& p) {
    Node n;
    n.param = &p;
    n.requires_grad = grad_enabled_;
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Mat value, std::initializer_list<Var> inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
        for (const Var& v : inputs) needs = needs || requires_grad(v.id());
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

Var Tape::push(Mat value, const std::vector<Var>& inputs, Backward backward) {
    bool needs = false;
    if (grad_enabled_)
        for (const Var& v : inputs) needs = needs || requires_grad(v.id());
    Node n;
    n.value = std::move(value);
    n.requires_grad = needs;
    if (needs) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return {this, static_cast<int>(nodes_.size()) - 1};
}

void Tape::backward(Var root) {
    require(root.rows() == 1 && root.cols() == 1, "backward root must be a scalar");
    auto& r = nodes_[static_cast<std::size_t>(root.id())];
    if (!r.requires_grad) return;
    accumulate(root, Mat::Ones(1, 1));
    for (int i = root.id(); i >= 0; --i) {
        auto& n = nodes_[static_cast<std::size_t>(i)];
        if (!n.backward || n.grad.size() == 0) continue;
        n.backward(*this, n.grad, n.value_ref());
    }
}

const Mat& Tape::grad(Var v) const { return nodes_[static_cast<std::size_t>(v.id())].grad; }

void Tape::clear() { nodes_.clear(); }

// ---- elementwise ------------------------------------------------------------

Var matmul(Var a, Var b) {
    require(a.cols() == b.rows(), "matmul shape mismatch");
    Mat out = a.value() * b.value();
    return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
        if (a.requires_grad()) t.accumulate(a, g * b.value().transpose());
        if (b.requires_grad()) t.accumulate(b, a.value().transpose() * g);
    });
}

Var add(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "add shape mismatch");
    Mat out = a.value() + b.value();
    return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g);
        t.accumulate(b, g);
    });
}

Var sub(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "sub shape mismatch");
    Mat out = a.value() - b.value();
    return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g);
        t.accumulate(b, -g);
    });
}

Var mul(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "mul shape mismatch");
    Mat out = a.value().cwiseProduct(b.value());
    return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
        if (a.requires_grad()) t.accumulate(a, g.cwiseProduct(b.value()));
        if (b.requires_grad()) t.accumulate(b, g.cwiseProduct(a.value()));
    });
}

Var scale(Var a, double c) {
    Mat out = a.value() * c;
    return a.tape().push(std::move(out), {a},
                         [a, c](Tape& t, const Mat& g, const Mat&) { t.accumulate(a, g * c); });
}

Var add_scalar(Var a, double c) {
    Mat out = a.value().array() + c;
    return a.tape().push(std::move(out), {a},
                         [a](Tape& t, const Mat& g, const Mat&) { t.accumulate(a, g); });
}

Var add_row(Var a, Var b) {
    require(b.rows() == 1 && b.cols() == a.cols(), "add_row shape mismatch");
    Mat out = a.value().rowwise() + b.value().row(0);
    return a.tape().push(std::move(out), {a, b}, [a, b](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g);
        if (b.requires_grad()) t.accumulate(b, g.colwise().sum());
    });
}

Var mul_col(Var a, Var c) {
    require(c.cols() == 1 && c.rows() == a.rows(), "mul_col shape mismatch");
    Mat out = a.value().array().colwise() * c.value().col(0).array();
    return a.tape().push(std::move(out), {a, c}, [a, c](Tape& t, const Mat& g, const Mat&) {
        if (a.requires_grad()) {
            Mat ga = g.array().colwise() * c.value().col(0).array();
            t.accumulate(a, ga);
        }
        if (c.requires_grad()) t.accumulate(c, g.cwiseProduct(a.value()).rowwise().sum());
    });
}

Var div_col(Var a, Var c) {
    require(c.cols() == 1 && c.rows() == a.rows(), "div_col shape mismatch");
    Mat out = a.value().array().colwise() / c.value().col(0).array();
    return a.tape().push(std::move(out), {a, c}, [a, c](Tape& t, const Mat& g, const Mat&) {
        const auto cv = c.value().col(0).array();
        if (a.requires_grad()) {
            Mat ga = g.array().colwise() / cv;
            t.accumulate(a, ga);
        }
        if (c.requires_grad()) {
            Mat gc = -(g.cwiseProduct(a.value()).rowwise().sum().array() / cv.square()).matrix();
            t.accumulate(c, gc);
        }
    });
}

Var tanh(Var a) {
    Mat out = a.value().array().tanh();
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat& y) {
        t.accumulate(a, g.array() * (1.0 - y.array().square()));
    });
}

Var sigmoid(Var a) {
    Mat out = a.value().unaryExpr([](double x) { return sigmoid_scalar(x); });
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat& y) {
        t.accumulate(a, g.array() * y.array() * (1.0 - y.array()));
    });
}

Var relu(Var a) {
    Mat out = a.value().cwiseMax(0.0);
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, (a.value().array() > 0.0).select(g, 0.0));
    });
}

Var softplus(Var a) {
    Mat out = a.value().unaryExpr([](double x) { return softplus_scalar(x); });
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g.array() * a.value().unaryExpr([](double x) { return sigmoid_scalar(x); }).array());
    });
}

Var exp(Var a) {
    Mat out = a.value().array().exp();
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat& y) {
        t.accumulate(a, g.cwiseProduct(y));
    });
}

Var log_eps(Var a, double eps) {
    Mat out = (a.value().array() + eps).log();
    return a.tape().push(std::move(out), {a}, [a, eps](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g.array() / (a.value().array() + eps));
    });
}

Var square(Var a) {
    Mat out = a.value().array().square();
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, 2.0 * g.cwiseProduct(a.value()));
    });
}

Var abs(Var a) {
    Mat out = a.value().cwiseAbs();
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g.cwiseProduct(a.value().unaryExpr([](double x) {
            return static_cast<double>((x > 0.0) - (x < 0.0));
        })));
    });
}

// ---- reductions and reshaping ----------------------------------------------

Var sum(Var a) {
    Mat out(1, 1);
    out(0, 0) = a.value().sum();
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0)));
    });
}

Var mean(Var a) {
    Mat out(1, 1);
    const auto n = static_cast<double>(a.value().size());
    out(0, 0) = a.value().sum() / n;
    return a.tape().push(std::move(out), {a}, [a, n](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, Mat::Constant(a.rows(), a.cols(), g(0, 0) / n));
    });
}

Var row_sum(Var a) {
    Mat out = a.value().rowwise().sum();
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g.col(0).replicate(1, a.cols()));
    });
}

Var segment_mean(Var a, int group) {
    require(group > 0 && a.rows() % group == 0, "segment_mean: rows not divisible by group");
    const Eigen::Index n = a.rows() / group;
    Mat out = Mat::Zero(n, a.cols());
    for (Eigen::Index i = 0; i < n; ++i) out.row(i) = a.value().middleRows(i * group, group).colwise().mean();
    return a.tape().push(std::move(out), {a}, [a, group, n](Tape& t, const Mat& g, const Mat&) {
        Mat ga(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < n; ++i)
            ga.middleRows(i * group, group) = (g.row(i) / static_cast<double>(group)).replicate(group, 1);
        t.accumulate(a, ga);
    });
}

Var repeat_rows(Var a, int times) {
    require(times > 0, "repeat_rows: times must be positive");
    Mat out(a.rows() * times, a.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i) out.middleRows(i * times, times) = a.value().row(i).replicate(times, 1);
    return a.tape().push(std::move(out), {a}, [a, times](Tape& t, const Mat& g, const Mat&) {
        Mat ga(a.rows(), a.cols());
        for (Eigen::Index i = 0; i < a.rows(); ++i) ga.row(i) = g.middleRows(i * times, times).colwise().sum();
        t.accumulate(a, ga);
    });
}

Var reshape(Var a, Eigen::Index rows, Eigen::Index cols) {
    require(rows * cols == a.value().size(), "reshape size mismatch");
    Mat out = Eigen::Map<const Mat>(a.value().data(), rows, cols);
    return a.tape().push(std::move(out), {a}, [a](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, Eigen::Map<const Mat>(g.data(), a.rows(), a.cols()));
    });
}

Var gather_cols(Var a, const std::vector<int>& cols) {
    Mat out(a.rows(), static_cast<Eigen::Index>(cols.size()));
    for (std::size_t j = 0; j < cols.size(); ++j) {
        require(cols[j] >= 0 && cols[j] < a.cols(), "gather_cols index out of range");
        out.col(static_cast<Eigen::Index>(j)) = a.value().col(cols[j]);
    }
    return a.tape().push(std::move(out), {a}, [a, cols](Tape& t, const Mat& g, const Mat&) {
        Mat ga = Mat::Zero(a.rows(), a.cols());
        for (std::size_t j = 0; j < cols.size(); ++j) ga.col(cols[j]) += g.col(static_cast<Eigen::Index>(j));
        t.accumulate(a, ga);
    });
}

Var scatter_cols(const std::vector<Var>& parts, const std::vector<std::vector<int>>& idx,
                 Eigen::Index total_cols) {
    require(!parts.empty() && parts.size() == idx.size(), "scatter_cols: parts/idx mismatch");
    const Eigen::Index rows = parts.front().rows();
    Mat out = Mat::Zero(rows, total_cols);
    for (std::size_t p = 0; p < parts.size(); ++p) {
        require(parts[p].rows() == rows && parts[p].cols() == static_cast<Eigen::Index>(idx[p].size()),
                "scatter_cols: part shape mismatch");
        for (std::size_t j = 0; j < idx[p].size(); ++j) {
            require(idx[p][j] >= 0 && idx[p][j] < total_cols, "scatter_cols index out of range");
            out.col(idx[p][j]) = parts[p].value().col(static_cast<Eigen::Index>(j));
        }
    }
    return parts.front().tape().push(std::move(out), parts, [parts, idx](Tape& t, const Mat& g, const Mat&) {
        for (std::size_t p = 0; p < parts.size(); ++p) {
            if (!parts[p].requires_grad()) continue;
            Mat gp(g.rows(), static_cast<Eigen::Index>(idx[p].size()));
            for (std::size_t j = 0; j < idx[p].size(); ++j) gp.col(static_cast<Eigen::Index>(j)) = g.col(idx[p][j]);
            t.accumulate(parts[p], gp);
        }
    });
}

Var concat_cols(const std::vector<Var>& parts) {
    require(!parts.empty(), "concat_cols: no parts");
    const Eigen::Index rows = parts.front().rows();
    Eigen::Index cols = 0;
    for (const Var& p : parts) {
        require(p.rows() == rows, "concat_cols row mismatch");
        cols += p.cols();
    }
    Mat out(rows, cols);
    Eigen::Index c = 0;
    for (const Var& p : parts) {
        out.middleCols(c, p.cols()) = p.value();
        c += p.cols();
    }
    return parts.front().tape().push(std::move(out), parts, [parts](Tape& t, const Mat& g, const Mat&) {
        Eigen::Index c0 = 0;
        for (const Var& p : parts) {
            if (p.requires_grad()) t.accumulate(p, g.middleCols(c0, p.cols()));
            c0 += p.cols();
        }
    });
}

Var slice_cols(Var a, Eigen::Index first, Eigen::Index count) {
    require(first >= 0 && count >= 0 && first + count <= a.cols(), "slice_cols out of range");
    Mat out = a.value().middleCols(first, count);
    return a.tape().push(std::move(out), {a}, [a, first, count](Tape& t, const Mat& g, const Mat&) {
        Mat ga = Mat::Zero(a.rows(), a.cols());
        ga.middleCols(first, count) = g;
        t.accumulate(a, ga);
    });
}

Var select_rows_stride(Var a, int stride, int offset) {
    require(stride > 0 && offset >= 0 && offset < stride && a.rows() % stride == 0,
            "select_rows_stride: bad stride/offset");
    Mat out = step_rows(a.value(), stride, offset);
    return a.tape().push(std::move(out), {a}, [a, stride, offset](Tape& t, const Mat& g, const Mat&) {
        Mat ga = Mat::Zero(a.rows(), a.cols());
        step_rows(ga, stride, offset) = g;
        t.accumulate(a, ga);
    });
}

Var spread_columns(Var a, const std::vector<int>& step_to_col) {
    const auto w = static_cast<Eigen::Index>(step_to_col.size());
    require(w > 0, "spread_columns: empty map");
    Mat out(a.rows() * w, 1);
    for (Eigen::Index b = 0; b < a.rows(); ++b)
        for (Eigen::Index t = 0; t < w; ++t) {
            require(step_to_col[t] >= 0 && step_to_col[t] < a.cols(), "spread_columns index out of range");
            out(b * w + t, 0) = a.value()(b, step_to_col[t]);
        }
    return a.tape().push(std::move(out), {a}, [a, step_to_col, w](Tape& t, const Mat& g, const Mat&) {
        Mat ga = Mat::Zero(a.rows(), a.cols());
        for (Eigen::Index b = 0; b < a.rows(); ++b)
            for (Eigen::Index s = 0; s < w; ++s) ga(b, step_to_col[s]) += g(b * w + s, 0);
        t.accumulate(a, ga);
    });
}

Var time_transform(Var a, const Mat& m) {
    const Eigen::Index w = m.rows();
    require(m.cols() == w && w > 0 && a.rows() % w == 0, "time_transform shape mismatch");
    const Eigen::Index n = a.rows() / w;
    Mat out(a.rows(), a.cols());
    for (Eigen::Index b = 0; b < n; ++b) out.middleRows(b * w, w).noalias() = m * a.value().middleRows(b * w, w);
    return a.tape().push(std::move(out), {a}, [a, m, w, n](Tape& t, const Mat& g, const Mat&) {
        Mat ga(a.rows(), a.cols());
        for (Eigen::Index b = 0; b < n; ++b) ga.middleRows(b * w, w).noalias() = m.transpose() * g.middleRows(b * w, w);
        t.accumulate(a, ga);
    });
}

Var detach(Var a) { return a.tape().constant(a.value()); }

Var dropout(Var a, const Mat& mask) {
    require(mask.rows() == a.rows() && mask.cols() == a.cols(), "dropout mask shape mismatch");
    Mat out = a.value().cwiseProduct(mask);
    return a.tape().push(std::move(out), {a}, [a, mask](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(a, g.cwiseProduct(mask));
    });
}

// ---- fused layers ------------------------------------------------------------

Var layer_norm(Var a, Var gamma, Var beta, double eps) {
    const Eigen::Index m = a.cols();
    require(gamma.rows() == 1 && gamma.cols() == m && beta.rows() == 1 && beta.cols() == m,
            "layer_norm affine shape mismatch");
    const Mat& x = a.value();
    auto xhat = std::make_shared<Mat>(x.rows(), m);
    auto inv_std = std::make_shared<Vec>(x.rows());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        (*inv_std)(i) = 1.0 / std::sqrt(var + eps);
        xhat->row(i) = (x.row(i).array() - mu) * (*inv_std)(i);
    }
    Mat out = (xhat->array().rowwise() * gamma.value().row(0).array()).rowwise() + beta.value().row(0).array();
    return a.tape().push(std::move(out), {a, gamma, beta},
                         [a, gamma, beta, xhat, inv_std, m](Tape& t, const Mat& g, const Mat&) {
        if (gamma.requires_grad()) t.accumulate(gamma, g.cwiseProduct(*xhat).colwise().sum());
        if (beta.requires_grad()) t.accumulate(beta, g.colwise().sum());
        if (!a.requires_grad()) return;
        Mat dxhat = g.array().rowwise() * gamma.value().row(0).array();
        Mat ga(g.rows(), m);
        const auto md = static_cast<double>(m);
        for (Eigen::Index i = 0; i < g.rows(); ++i) {
            const double s1 = dxhat.row(i).sum();
            const double s2 = dxhat.row(i).dot(xhat->row(i));
            ga.row(i) = ((*inv_std)(i) / md) * (md * dxhat.row(i).array() - s1 - xhat->row(i).array() * s2);
        }
        t.accumulate(a, ga);
    });
}

Var multi_head_attention(Var q, Var k, Var v, int window, int heads, Mat* weights) {
    const Eigen::Index dm = q.cols();
    require(k.cols() == dm && v.cols() == dm && q.rows() == k.rows() && q.rows() == v.rows(),
            "attention q/k/v shape mismatch");
    require(heads > 0 && dm % heads == 0, "attention: model width not divisible by heads");
    require(window > 0 && q.rows() % window == 0, "attention: rows not divisible by window");
    const Eigen::Index w = window;
    const Eigen::Index n = q.rows() / w;
    const Eigen::Index dk = dm / heads;
    const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dk));

    // attn(b, h) stored at rows (b*heads + h)*W of a stacked matrix.
    auto attn = std::make_shared<Mat>(n * heads * w, w);
    Mat out(q.rows(), dm);
    for (Eigen::Index b = 0; b < n; ++b) {
        for (Eigen::Index h = 0; h < heads; ++h) {
            const auto qb = q.value().block(b * w, h * dk, w, dk);
            const auto kb = k.value().block(b * w, h * dk, w, dk);
            const auto vb = v.value().block(b * w, h * dk, w, dk);
            Mat s = (qb * kb.transpose()) * inv_sqrt;
            for (Eigen::Index r = 0; r < w; ++r) {
                const double mx = s.row(r).maxCoeff();
                s.row(r) = (s.row(r).array() - mx).exp();
                s.row(r) /= s.row(r).sum();
            }
            attn->middleRows((b * heads + h) * w, w) = s;
            out.block(b * w, h * dk, w, dk).noalias() = s * vb;
        }
    }
    if (weights) *weights = *attn;
    return q.tape().push(std::move(out), {q, k, v},
                         [q, k, v, attn, w, n, dk, heads, inv_sqrt](Tape& t, const Mat& g, const Mat&) {
        Mat gq = Mat::Zero(q.rows(), q.cols());
        Mat gk = Mat::Zero(k.rows(), k.cols());
        Mat gv = Mat::Zero(v.rows(), v.cols());
        for (Eigen::Index b = 0; b < n; ++b) {
            for (Eigen::Index h = 0; h < heads; ++h) {
                const auto a = attn->middleRows((b * heads + h) * w, w);
                const auto qb = q.value().block(b * w, h * dk, w, dk);
                const auto kb = k.value().block(b * w, h * dk, w, dk);
                const auto vb = v.value().block(b * w, h * dk, w, dk);
                const auto go = g.block(b * w, h * dk, w, dk);
                Mat da = go * vb.transpose();
                gv.block(b * w, h * dk, w, dk).noalias() = a.transpose() * go;
                Mat ds(w, w);
                for (Eigen::Index r = 0; r < w; ++r) {
                    const double dot = da.row(r).dot(a.row(r));
                    ds.row(r) = a.row(r).array() * (da.row(r).array() - dot);
                }
                ds *= inv_sqrt;
                gq.block(b * w, h * dk, w, dk).noalias() = ds * kb;
                gk.block(b * w, h * dk, w, dk).noalias() = ds.transpose() * qb;
            }
        }
        t.accumulate(q, gq);
        t.accumulate(k, gk);
        t.accumulate(v, gv);
    });
}

namespace {

struct LstmCache {
    Mat gates;  // [B*W x 4H] post-activation i, f, g, o
    Mat cell;   // [B*W x H]
    Mat tanh_cell;
};

}  // namespace

Var lstm(Var x, Var w_input, Var w_hidden, Var bias, int window) {
    const Eigen::Index hidden = w_hidden.rows();
    require(w_input.rows() == x.cols() && w_input.cols() == 4 * hidden && w_hidden.cols() == 4 * hidden &&
                bias.rows() == 1 && bias.cols() == 4 * hidden,
            "lstm weight shape mismatch");
    require(window > 0 && x.rows() % window == 0, "lstm: rows not divisible by window");
    const Eigen::Index n = x.rows() / window;
    const Eigen::Index h4 = 4 * hidden;

    auto cache = std::make_shared<LstmCache>();
    cache->gates = (x.value() * w_input.value()).rowwise() + bias.value().row(0);
    cache->cell.resize(x.rows(), hidden);
    cache->tanh_cell.resize(x.rows(), hidden);
    Mat out(x.rows(), hidden);

    Mat h_prev = Mat::Zero(n, hidden);
    Mat c_prev = Mat::Zero(n, hidden);
    Mat pre(n, h4);
    for (int t = 0; t < window; ++t) {
        auto gates = step_rows(cache->gates, window, t);
        pre = gates;
        pre.noalias() += h_prev * w_hidden.value();
        auto act = pre.array();
        act.leftCols(2 * hidden) = act.leftCols(2 * hidden).unaryExpr([](double z) { return sigmoid_scalar(z); });
        act.middleCols(2 * hidden, hidden) = act.middleCols(2 * hidden, hidden).tanh();
        act.rightCols(hidden) = act.rightCols(hidden).unaryExpr([](double z) { return sigmoid_scalar(z); });
        gates = pre;
        auto c = step_rows(cache->cell, window, t);
        c = pre.middleCols(hidden, hidden).cwiseProduct(c_prev) +
            pre.leftCols(hidden).cwiseProduct(pre.middleCols(2 * hidden, hidden));
        auto tc = step_rows(cache->tanh_cell, window, t);
        tc = c.array().tanh();
        auto ht = step_rows(out, window, t);
        ht = pre.rightCols(hidden).cwiseProduct(tc);
        h_prev = ht;
        c_prev = c;
    }

    return x.tape().push(std::move(out), {x, w_input, w_hidden, bias},
                         [x, w_input, w_hidden, bias, cache, window, n, hidden, h4](Tape& t, const Mat& g,
                                                                                   const Mat& hseq) {
        Mat dpre_all(x.rows(), h4);
        Mat dh_next = Mat::Zero(n, hidden);
        Mat dc_next = Mat::Zero(n, hidden);
        Mat dpre(n, h4);
        Mat gwh = Mat::Zero(hidden, h4);
        for (int s = window - 1; s >= 0; --s) {
            const Mat gates = step_rows(cache->gates, window, s);
            const auto i = gates.leftCols(hidden).array();
            const auto f = gates.middleCols(hidden, hidden).array();
            const auto gg = gates.middleCols(2 * hidden, hidden).array();
            const auto o = gates.rightCols(hidden).array();
            const Mat tc = step_rows(cache->tanh_cell, window, s);
            Mat c_prev = Mat::Zero(n, hidden);
            if (s > 0) c_prev = step_rows(cache->cell, window, s - 1);

            Mat dh = step_rows(g, window, s);
            dh += dh_next;
            Mat dc = dc_next.array() + dh.array() * o * (1.0 - tc.array().square());

            dpre.leftCols(hidden) = (dc.array() * gg * i * (1.0 - i)).matrix();
            dpre.middleCols(hidden, hidden) = (dc.array() * c_prev.array() * f * (1.0 - f)).matrix();
            dpre.middleCols(2 * hidden, hidden) = (dc.array() * i * (1.0 - gg.square())).matrix();
            dpre.rightCols(hidden) = (dh.array() * tc.array() * o * (1.0 - o)).matrix();

            step_rows(dpre_all, window, s) = dpre;
            dc_next = dc.array() * f;
            dh_next.noalias() = dpre * w_hidden.value().transpose();
            if (s > 0) gwh.noalias() += Mat(step_rows(hseq, window, s - 1)).transpose() * dpre;
        }
        if (w_hidden.requires_grad()) t.accumulate(w_hidden, gwh);
        if (w_input.requires_grad()) t.accumulate(w_input, x.value().transpose() * dpre_all);
        if (bias.requires_grad()) t.accumulate(bias, dpre_all.colwise().sum());
        if (x.requires_grad()) t.accumulate(x, dpre_all * w_input.value().transpose());
    });
}

// ---- losses ----------------------------------------------------------------------

Var mse_loss(Var pred, const Mat& target) {
    require(pred.rows() == target.rows() && pred.cols() == target.cols(), "mse_loss shape mismatch");
    const auto n = static_cast<double>(target.size());
    Mat out(1, 1);
    out(0, 0) = (pred.value() - target).squaredNorm() / n;
    return pred.tape().push(std::move(out), {pred}, [pred, target, n](Tape& t, const Mat& g, const Mat&) {
        t.accumulate(pred, (pred.value() - target) * (2.0 * g(0, 0) / n));
    });
}

Var bce_with_logits(Var logits, const Mat& labels) {
    require(logits.rows() == labels.rows() && logits.cols() == labels.cols(), "bce shape mismatch");
    const auto n = static_cast<double>(labels.size());
    const auto& x = logits.value().array();
    Mat out(1, 1);
    out(0, 0) = (x.max(0.0) - x * labels.array() + (-x.abs()).exp().log1p()).sum() / n;
    return logits.tape().push(std::move(out), {logits}, [logits, labels, n](Tape& t, const Mat& g, const Mat&) {
        Mat p = logits.value().unaryExpr([](double z) { return sigmoid_scalar(z); });
        t.accumulate(logits, (p - labels) * (g(0, 0) / n));
    });
}

Var smooth_l1(Var a, Var b) {
    require(a.rows() == b.rows() && a.cols() == b.cols(), "smooth_l1 shape mismatch");
    const auto n = static_cast<double>(a.value().size());
    const Mat e = a.value() - b.value();
    Mat out(1, 1);
    out(0, 0) = e.unaryExpr([](double d) {
                     const double ad = std::abs(d);
                     return ad < 1.0 ? 0.5 * d * d : ad - 0.5;
                 }).sum() / n;
    return a.tape().push(std::move(out), {a, b}, [a, b, e, n](Tape& t, const Mat& g, const Mat&) {
        Mat de = e.unaryExpr([](double d) { return std::clamp(d, -1.0, 1.0); }) * (g(0, 0) / n);
        if (a.requires_grad()) t.accumulate(a, de);
        if (b.requires_grad()) t.accumulate(b, -de);
    });
}

}  // namespace csra::ad
