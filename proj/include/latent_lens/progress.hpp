#pragma once

#include "latent_lens/latent_io.hpp"
#include "latent_lens/probes.hpp"
#include "latent_lens/sae.hpp"

#include <string>
#include <vector>

#include <Eigen/Dense>

namespace latent_lens {

struct TrajectorySnapshot {
    int step = 0;
    LatentSequence latent;
};

/// Per-step generation progress of one attribute, s_t in [0, 1].
struct ProgressReport {
    Attribute attribute = Attribute::pitch_hz;
    int T = 0;
    std::vector<double> scores;               // t = 0..T
    std::vector<std::vector<int>> excluded;   // per step: classes dropped by the denominator guard
    std::vector<std::string> warnings;
};

inline constexpr double kDefaultDenominatorGuard = 1e-6;

// Mean over frames of the per-frame class distributions (probabilities are
// pooled, not features or logits).
Eigen::VectorXd pooled_distribution(const SaeModel& sae, const Probe& probe, const LatentSequence& latent);

struct ProgressScore {
    double score = 0.0;
    std::vector<int> excluded;
    bool all_excluded = false;
};

/// Mean over classes of |p_t - p_0| / |p_T - p_0|, each ratio clamped to
/// [0, 1]. Classes whose denominator is below `eps_d` are left out; if none
/// remain the score is 0 and `all_excluded` is set.
ProgressScore progress_score(const Eigen::VectorXd& p_t, const Eigen::VectorXd& p_0, const Eigen::VectorXd& p_T,
    double eps_d = kDefaultDenominatorGuard);

// One report per probe. Snapshots must cover steps 0..T without gaps.
std::vector<ProgressReport> trajectory_report(std::vector<TrajectorySnapshot> snapshots, const SaeModel& sae,
    const std::vector<Probe>& probes, double eps_d = kDefaultDenominatorGuard);

struct ProgressAggregate {
    Attribute attribute = Attribute::pitch_hz;
    int T = 0;
    std::vector<double> mean;
    std::vector<double> std; // population standard deviation
};

ProgressAggregate aggregate(const std::vector<ProgressReport>& reports);

// Closest non-decreasing curve in the least-squares sense (pool adjacent violators).
std::vector<double> monotone_fit(const std::vector<double>& curve);

} // namespace latent_lens
