#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "csra/autodiff.hpp"

namespace csra::testing {

inline Mat random_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> g(0.0, scale);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = g(rng);
    return m;
}

inline Mat uniform_mat(Eigen::Index rows, Eigen::Index cols, std::mt19937_64& rng, double lo, double hi) {
    std::uniform_real_distribution<double> u(lo, hi);
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = u(rng);
    return m;
}

inline double relative_error(double analytic, double numeric) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), 1e-6});
}

struct GradCheck {
    double max_rel_error = 0.0;
    std::string worst;
    std::size_t checked = 0;
};

/// Central differences of f over every entry of `inputs`, compared with the
/// tape gradient. f must build a scalar from variables holding the inputs.
inline GradCheck check_inputs(const std::function<ad::Var(ad::Tape&, const std::vector<ad::Var>&)>& f,
                              std::vector<Mat> inputs, double h = 1e-5) {
    ad::Tape tape;
    std::vector<ad::Var> vars;
    for (const auto& m : inputs) vars.push_back(tape.variable(m));
    tape.backward(f(tape, vars));
    std::vector<Mat> analytic;
    for (auto v : vars) {
        Mat g = tape.grad(v);
        if (g.size() == 0) g = Mat::Zero(v.rows(), v.cols());
        analytic.push_back(g);
    }
    auto eval = [&](const std::vector<Mat>& in) {
        ad::Tape t;
        t.set_grad_enabled(false);
        std::vector<ad::Var> vs;
        for (const auto& m : in) vs.push_back(t.constant(m));
        return f(t, vs).scalar();
    };
    GradCheck r;
    for (std::size_t k = 0; k < inputs.size(); ++k)
        for (Eigen::Index i = 0; i < inputs[k].size(); ++i) {
            const double orig = inputs[k].data()[i];
            inputs[k].data()[i] = orig + h;
            const double up = eval(inputs);
            inputs[k].data()[i] = orig - h;
            const double down = eval(inputs);
            inputs[k].data()[i] = orig;
            const double err = relative_error(analytic[k].data()[i], (up - down) / (2 * h));
            ++r.checked;
            if (err > r.max_rel_error) {
                r.max_rel_error = err;
                r.worst = "input " + std::to_string(k) + "[" + std::to_string(i) + "]";
            }
        }
    return r;
}

/// Central differences over every entry of every parameter in `sets`.
/// `loss` builds the scalar on the given tape from the current parameter values.
inline GradCheck check_params(const std::vector<ad::ParameterSet*>& sets,
                              const std::function<ad::Var(ad::Tape&)>& loss, double h = 1e-5) {
    for (auto* s : sets) s->zero_grad();
    {
        ad::Tape tape;
        tape.backward(loss(tape));
    }
    GradCheck r;
    auto eval = [&]() {
        ad::Tape t;
        t.set_grad_enabled(false);
        return loss(t).scalar();
    };
    for (auto* s : sets)
        for (auto& p : *s) {
            const Mat analytic = p->grad.size() ? p->grad : Mat::Zero(p->value.rows(), p->value.cols());
            for (Eigen::Index i = 0; i < p->value.size(); ++i) {
                const double orig = p->value.data()[i];
                p->value.data()[i] = orig + h;
                const double up = eval();
                p->value.data()[i] = orig - h;
                const double down = eval();
                p->value.data()[i] = orig;
                const double err = relative_error(analytic.data()[i], (up - down) / (2 * h));
                ++r.checked;
                if (err > r.max_rel_error) {
                    r.max_rel_error = err;
                    r.worst = p->name + "[" + std::to_string(i) + "]";
                }
            }
        }
    return r;
}

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
public:
    explicit TempDir(const std::string& tag) {
        std::random_device rd;
        path_ = std::filesystem::temp_directory_path() / ("csra-" + tag + "-" + std::to_string(rd()));
        std::filesystem::create_directories(path_);
    }
    ~TempDir() {
        std::error_code ec;
        std::filesystem::remove_all(path_, ec);
    }
    TempDir(const TempDir&) = delete;
    TempDir& operator=(const TempDir&) = delete;

    const std::filesystem::path& path() const { return path_; }
    std::filesystem::path operator/(const std::string& child) const { return path_ / child; }

private:
    std::filesystem::path path_;
};

}  // namespace csra::testing
