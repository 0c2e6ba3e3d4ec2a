#pragma once

#include <cmath>
#include <cstdint>

#include <Eigen/Dense>

namespace latent_lens {

struct AdamConfig {
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First/second moment buffers for one parameter tensor.
struct AdamSlot {
    Eigen::MatrixXd m;
    Eigen::MatrixXd v;
};

// One bias-corrected Adam update of `param` in place. `step` counts from 1.
template <typename Param, typename Grad>
void adam_update(Eigen::MatrixBase<Param>& param, const Eigen::MatrixBase<Grad>& grad, AdamSlot& slot,
    const AdamConfig& cfg, std::int64_t step)
{
    if (slot.m.size() == 0) {
        slot.m = Eigen::MatrixXd::Zero(param.rows(), param.cols());
        slot.v = Eigen::MatrixXd::Zero(param.rows(), param.cols());
    }
    slot.m = cfg.beta1 * slot.m + (1.0 - cfg.beta1) * grad;
    slot.v = cfg.beta2 * slot.v + (1.0 - cfg.beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(cfg.beta1, double(step));
    const double c2 = 1.0 - std::pow(cfg.beta2, double(step));
    param -= (cfg.learning_rate * (slot.m / c1).array() / ((slot.v / c2).array().sqrt() + cfg.epsilon)).matrix();
}

} // namespace latent_lens
