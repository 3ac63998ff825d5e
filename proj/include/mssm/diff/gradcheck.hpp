#pragma once

#include <functional>

#include "mssm/diff/graph.hpp"

namespace mssm::diff {

// Builds the scalar loss graph over the current values of `leaves`.
using LossBuilder = std::function<Var(Tape&)>;

// Compares reverse-mode gradients of `build` against central finite
// differences, componentwise over every leaf. Returns the maximum relative
// error max |g_ad - g_fd| / max(|g_ad|, |g_fd|, floor).
double check_gradients(const LossBuilder& build, const std::vector<Param*>& leaves,
                       double epsilon = 1e-5, double floor = 1e-3);

}  // namespace mssm::diff
