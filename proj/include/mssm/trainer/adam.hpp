#pragma once

#include <vector>

#include "mssm/diff/graph.hpp"

namespace mssm::trainer {

struct AdamConfig {
    double lr = 3e-4;
    // Moment coefficients as printed in the reference hyperparameters; the
    // conventional (0.9, 0.999) pair is selectable through the config file.
    double beta1 = 0.99;
    double beta2 = 0.9;
    double eps = 1e-8;
    double clip_norm = 10.0;  // <= 0 disables clipping
};

// Adam over a fixed parameter group with global-norm gradient clipping
// applied before the moment updates. Consumes and zeroes gradients.
class Adam {
public:
    Adam() = default;
    Adam(std::vector<diff::Param*> group, AdamConfig cfg);

    // Returns the pre-clip global gradient norm. Parameters without an
    // accumulated gradient contribute zeros.
    double step();

    const AdamConfig& config() const { return cfg_; }
    const std::vector<diff::Param*>& group() const { return group_; }

private:
    std::vector<diff::Param*> group_;
    AdamConfig cfg_;
};

}  // namespace mssm::trainer
