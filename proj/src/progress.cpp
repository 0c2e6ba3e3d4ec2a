#include "latent_lens/progress.hpp"

#include "latent_lens/error.hpp"

#include <algorithm>
#include <cmath>

namespace latent_lens {

Eigen::VectorXd pooled_distribution(const SaeModel& sae, const Probe& probe, const LatentSequence& latent)
{
    if (latent.frames == 0) {
        throw ConfigError("cannot pool an empty latent sequence");
    }
    if (latent.channels != sae.input_dim()) {
        throw ConfigError("dimension mismatch: latent has " + std::to_string(latent.channels)
            + " channels, SAE expects " + std::to_string(sae.input_dim()));
    }
    const Eigen::MatrixXd p = probe_probabilities(probe, encode_features(sae, frames_matrix(latent)));
    // Fixed left-to-right summation order.
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(p.rows());
    for (Eigen::Index c = 0; c < p.cols(); ++c) {
        pooled += p.col(c);
    }
    return pooled / double(p.cols());
}

ProgressScore progress_score(const Eigen::VectorXd& p_t, const Eigen::VectorXd& p_0, const Eigen::VectorXd& p_T,
    double eps_d)
{
    if (p_t.size() != p_0.size() || p_T.size() != p_0.size()) {
        throw ConfigError("progress distributions differ in length");
    }
    ProgressScore out;
    double sum = 0.0;
    int included = 0;
    for (Eigen::Index k = 0; k < p_0.size(); ++k) {
        const double denom = std::abs(p_T(k) - p_0(k));
        if (denom < eps_d) {
            out.excluded.push_back(static_cast<int>(k));
            continue;
        }
        sum += std::clamp(std::abs(p_t(k) - p_0(k)) / denom, 0.0, 1.0);
        ++included;
    }
    if (included == 0) {
        out.all_excluded = true;
        out.score = 0.0;
    } else {
        out.score = sum / double(included);
    }
    return out;
}

std::vector<ProgressReport> trajectory_report(std::vector<TrajectorySnapshot> snapshots, const SaeModel& sae,
    const std::vector<Probe>& probes, double eps_d)
{
    if (snapshots.size() < 2) {
        throw FormatError("a trajectory needs at least steps 0 and T");
    }
    std::sort(snapshots.begin(), snapshots.end(),
        [](const TrajectorySnapshot& a, const TrajectorySnapshot& b) { return a.step < b.step; });
    for (std::size_t i = 0; i < snapshots.size(); ++i) {
        if (snapshots[i].step != static_cast<int>(i)) {
            const int missing = snapshots[i].step > static_cast<int>(i) ? static_cast<int>(i) : snapshots[i].step;
            throw FormatError(snapshots[i].step < static_cast<int>(i)
                    ? "duplicate step " + std::to_string(missing)
                    : "missing step " + std::to_string(missing));
        }
        const auto& a = snapshots[i].latent;
        const auto& ref = snapshots.front().latent;
        if (a.channels != ref.channels || a.frames != ref.frames || a.frame_rate != ref.frame_rate) {
            throw FormatError("inconsistent snapshot shapes at step " + std::to_string(i));
        }
    }
    const int T = static_cast<int>(snapshots.size()) - 1;

    std::vector<ProgressReport> reports;
    for (const auto& probe : probes) {
        std::vector<Eigen::VectorXd> pooled;
        pooled.reserve(snapshots.size());
        for (const auto& s : snapshots) {
            pooled.push_back(pooled_distribution(sae, probe, s.latent));
        }
        ProgressReport report;
        report.attribute = probe.attribute;
        report.T = T;
        for (int t = 0; t <= T; ++t) {
            const auto score = progress_score(pooled[t], pooled[0], pooled[T], eps_d);
            report.scores.push_back(score.score);
            report.excluded.push_back(score.excluded);
            if (score.all_excluded && t == 0) {
                report.warnings.push_back("all classes excluded by the denominator guard; scores are 0");
            }
        }
        reports.push_back(std::move(report));
    }
    return reports;
}

ProgressAggregate aggregate(const std::vector<ProgressReport>& reports)
{
    if (reports.empty()) {
        throw ConfigError("nothing to aggregate");
    }
    const auto& first = reports.front();
    for (const auto& r : reports) {
        if (r.T != first.T || r.attribute != first.attribute || r.scores.size() != first.scores.size()) {
            throw ConfigError("reports differ in T or attribute");
        }
    }
    ProgressAggregate agg;
    agg.attribute = first.attribute;
    agg.T = first.T;
    const std::size_t n = first.scores.size();
    agg.mean.assign(n, 0.0);
    agg.std.assign(n, 0.0);
    for (std::size_t t = 0; t < n; ++t) {
        double sum = 0.0;
        for (const auto& r : reports) {
            sum += r.scores[t];
        }
        const double mean = sum / double(reports.size());
        double var = 0.0;
        for (const auto& r : reports) {
            var += (r.scores[t] - mean) * (r.scores[t] - mean);
        }
        agg.mean[t] = mean;
        agg.std[t] = std::sqrt(var / double(reports.size()));
    }
    return agg;
}

std::vector<double> monotone_fit(const std::vector<double>& curve)
{
    struct Block {
        double sum;
        std::size_t count;
        double mean() const { return sum / double(count); }
    };
    std::vector<Block> blocks;
    for (double v : curve) {
        blocks.push_back({v, 1});
        while (blocks.size() > 1 && blocks[blocks.size() - 2].mean() > blocks.back().mean()) {
            const Block top = blocks.back();
            blocks.pop_back();
            blocks.back().sum += top.sum;
            blocks.back().count += top.count;
        }
    }
    std::vector<double> out;
    out.reserve(curve.size());
    for (const auto& b : blocks) {
        out.insert(out.end(), b.count, b.mean());
    }
    return out;
}

} // namespace latent_lens
