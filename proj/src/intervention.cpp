#include "latent_lens/intervention.hpp"

#include "latent_lens/error.hpp"

#include <algorithm>
#include <cmath>

namespace latent_lens {

namespace {

void check_compatible(const SaeModel& sae, const Probe& probe)
{
    if (probe.feature_dim() != sae.hidden_dim()) {
        throw ConfigError("dimension mismatch: probe expects " + std::to_string(probe.feature_dim())
            + " features but the SAE has " + std::to_string(sae.hidden_dim()));
    }
}

double total_variation(const Eigen::MatrixXd& p, const Eigen::MatrixXd& q)
{
    return 0.5 * (p - q).cwiseAbs().colwise().sum().mean();
}

// Re-encoded features of the steered features' decoded latents.
Eigen::MatrixXd reencode(const SaeModel& sae, const Eigen::MatrixXd& features)
{
    const Eigen::MatrixXd latents = (sae.W_dec * features).colwise() + sae.b_dec;
    return encode_features(sae, latents);
}

} // namespace

Eigen::VectorXd control_vector(const Probe& probe, Eigen::Index k)
{
    if (k < 0 || k >= probe.classes()) {
        throw ConfigError("target class " + std::to_string(k) + " out of range [0, "
            + std::to_string(probe.classes()) + ")");
    }
    return probe.W.row(k).transpose();
}

Eigen::VectorXd apply_control(const Eigen::VectorXd& f, const Eigen::VectorXd& w, double alpha, double eps, bool clamp)
{
    if (f.size() != w.size()) {
        throw ConfigError("dimension mismatch between features and control vector");
    }
    Eigen::VectorXd g = f + alpha * w;
    if (clamp) {
        g = g.cwiseMax(0.0);
    }
    const double f_sq = f.squaredNorm();
    const double g_sq = g.squaredNorm();
    if (f_sq == 0.0 || g_sq == 0.0) {
        return rms_normalize(g, eps);
    }
    return g * std::sqrt(f_sq / g_sq);
}

Eigen::VectorXd steer_latent(const SaeModel& sae, const Probe& probe, const Eigen::VectorXd& x, const ControlSpec& spec,
    bool clamp)
{
    check_compatible(sae, probe);
    const auto w = control_vector(probe, spec.target_class);
    const auto e = encode(sae, x);
    return decode(sae, apply_control(e.f, w, spec.alpha, sae.eps, clamp));
}

LatentSequence steer_sequence(const SaeModel& sae, const Probe& probe, const LatentSequence& seq,
    const ControlSpec& spec, bool clamp)
{
    check_compatible(sae, probe);
    LatentSequence out = seq;
    for (std::uint64_t t = 0; t < seq.frames; ++t) {
        Eigen::VectorXd x(seq.channels);
        const auto frame = seq.frame(t);
        for (std::uint32_t c = 0; c < seq.channels; ++c) {
            x(c) = frame[c];
        }
        const auto steered = steer_latent(sae, probe, x, spec, clamp);
        auto dst = out.frame(t);
        for (std::uint32_t c = 0; c < seq.channels; ++c) {
            dst[c] = static_cast<float>(steered(c));
        }
    }
    return out;
}

std::vector<SweepRow> alpha_sweep(const SaeModel& sae, const Probe& target, const std::vector<Probe>& off_attribute,
    const std::vector<LatentSequence>& sequences, int target_class, const std::vector<double>& alphas, bool clamp)
{
    if (sequences.empty() || alphas.empty()) {
        throw ConfigError("alpha sweep needs at least one sequence and one alpha");
    }
    if (!std::is_sorted(alphas.begin(), alphas.end())) {
        throw ConfigError("alphas must be sorted ascending");
    }
    check_compatible(sae, target);
    for (const auto& p : off_attribute) {
        check_compatible(sae, p);
    }
    const auto w = control_vector(target, target_class);
    const Eigen::MatrixXd frames = frames_matrix(sequences);
    const Eigen::MatrixXd features = encode_features(sae, frames);
    const Eigen::MatrixXd recon_features = reencode(sae, features);

    std::vector<Eigen::MatrixXd> off_before;
    std::vector<Eigen::MatrixXd> off_before_recon;
    for (const auto& p : off_attribute) {
        off_before.push_back(probe_probabilities(p, features));
        off_before_recon.push_back(probe_probabilities(p, recon_features));
    }

    std::vector<SweepRow> rows;
    for (double alpha : alphas) {
        Eigen::MatrixXd steered(features.rows(), features.cols());
        for (Eigen::Index c = 0; c < features.cols(); ++c) {
            steered.col(c) = apply_control(features.col(c), w, alpha, sae.eps, clamp);
        }
        const Eigen::MatrixXd again = reencode(sae, steered);
        const Eigen::MatrixXd p = probe_probabilities(target, steered);
        const Eigen::MatrixXd p_re = probe_probabilities(target, again);

        SweepRow row;
        row.alpha = alpha;
        row.target_probability = p.row(target_class).mean();
        row.reencoded_target_probability = p_re.row(target_class).mean();
        Eigen::Index hits = 0;
        Eigen::Index hits_re = 0;
        for (Eigen::Index c = 0; c < p.cols(); ++c) {
            hits += argmax(p.col(c)) == target_class;
            hits_re += argmax(p_re.col(c)) == target_class;
        }
        row.target_argmax_rate = double(hits) / double(p.cols());
        row.reencoded_target_argmax_rate = double(hits_re) / double(p.cols());
        for (std::size_t i = 0; i < off_attribute.size(); ++i) {
            row.drift += total_variation(probe_probabilities(off_attribute[i], steered), off_before[i]);
            row.reencoded_drift += total_variation(probe_probabilities(off_attribute[i], again), off_before_recon[i]);
        }
        if (!off_attribute.empty()) {
            row.drift /= double(off_attribute.size());
            row.reencoded_drift /= double(off_attribute.size());
        }
        rows.push_back(row);
    }
    return rows;
}

} // namespace latent_lens
