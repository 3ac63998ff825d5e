#include "mssm/diff/gradcheck.hpp"

#include <cmath>

namespace mssm::diff {

double check_gradients(const LossBuilder& build, const std::vector<Param*>& leaves,
                       double epsilon, double floor) {
    if (epsilon <= 0.0) throw UsageError("check_gradients: epsilon must be > 0");

    for (Param* p : leaves) p->zero_grad();
    {
        Tape tape;
        Var root = build(tape);
        if (!std::isfinite(root.scalar()))
            throw UsageError("check_gradients: non-finite loss value");
        tape.backward(root);
    }

    auto eval = [&]() {
        Tape tape;
        return build(tape).scalar();
    };

    double max_rel = 0.0;
    for (Param* p : leaves) {
        const bool touched = p->grad_init;
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            const double saved = p->value[i];
            p->value[i] = saved + epsilon;
            const double up = eval();
            p->value[i] = saved - epsilon;
            const double down = eval();
            p->value[i] = saved;
            const double fd = (up - down) / (2.0 * epsilon);
            const double ad = touched ? p->grad[i] : 0.0;
            if (!std::isfinite(fd) || !std::isfinite(ad))
                throw UsageError("check_gradients: non-finite gradient encountered");
            const double denom = std::max({std::fabs(ad), std::fabs(fd), floor});
            max_rel = std::max(max_rel, std::fabs(ad - fd) / denom);
        }
    }
    for (Param* p : leaves) p->zero_grad();
    return max_rel;
}

}  // namespace mssm::diff
