#include "mssm/trainer/adam.hpp"

#include <cmath>

#include "mssm/kernels/kernels.hpp"

namespace mssm::trainer {

using diff::Param;

Adam::Adam(std::vector<Param*> group, AdamConfig cfg) : group_(std::move(group)), cfg_(cfg) {}

double Adam::step() {
    const auto& K = kernels::active();
    double sq = 0.0;
    for (Param* p : group_)
        if (p->grad_init)
            sq += K.sumsq(p->grad.data(), static_cast<std::size_t>(p->grad.numel()));
    const double norm = std::sqrt(sq);
    const double scale =
        (cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm) ? cfg_.clip_norm / norm : 1.0;

    for (Param* p : group_) {
        if (p->adam_m.numel() == 0) {
            p->adam_m = Tensor(p->value.shape());
            p->adam_v = Tensor(p->value.shape());
        }
        p->adam_t += 1;
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(p->adam_t));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(p->adam_t));
        const bool has = p->grad_init;
        for (std::int64_t i = 0; i < p->value.numel(); ++i) {
            const double g = has ? p->grad[i] * scale : 0.0;
            p->adam_m[i] = cfg_.beta1 * p->adam_m[i] + (1.0 - cfg_.beta1) * g;
            p->adam_v[i] = cfg_.beta2 * p->adam_v[i] + (1.0 - cfg_.beta2) * g * g;
            const double mhat = p->adam_m[i] / c1;
            const double vhat = p->adam_v[i] / c2;
            p->value[i] -= cfg_.lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        }
        p->zero_grad();
    }
    return norm;
}

}  // namespace mssm::trainer
