#pragma once

#include <string>
#include <vector>

#include "csra/autodiff.hpp"
#include "csra/checkpoint.hpp"

namespace csra {

struct AdamOptions {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    /// L2 penalty added to the gradient before the moment updates.
    double weight_decay = 0.0;
};

/// Adam over a fixed list of named parameters. Parameters with an empty
/// gradient are treated as having zero gradient.
class Adam {
public:
    explicit Adam(AdamOptions options) : options_(options) {}

    void add(const std::string& prefix, ad::ParameterSet& params);
    void step();
    long steps() const { return step_; }

    /// Moments are stored as "adam.m.<name>" / "adam.v.<name>" blocks.
    void save(Checkpoint& ckpt) const;
    void load(const Checkpoint& ckpt, long steps);

private:
    struct Slot {
        std::string name;
        ad::Parameter* param;
        Mat m;
        Mat v;
    };
    AdamOptions options_;
    std::vector<Slot> slots_;
    long step_ = 0;
};

}  // namespace csra
