#pragma once

#include "latent_lens/latent_io.hpp"
#include "latent_lens/probes.hpp"
#include "latent_lens/sae.hpp"

#include <vector>

#include <Eigen/Dense>

namespace latent_lens {

struct ControlSpec {
    Attribute attribute = Attribute::pitch_hz;
    int target_class = 0;
    double alpha = 0.0;
};

// Row k of the probe weights, the direction that raises class k's logit.
Eigen::VectorXd control_vector(const Probe& probe, Eigen::Index k);

/// Shifts normalized features along `w` and maps the result back onto the
/// SAE's feature set: g = f + alpha * w, negatives clamped to zero (unless
/// `clamp` is false), then rescaled to the RMS of f. A zero f has no scale to
/// keep; g is then RMS-normalized with the encoder's eps.
Eigen::VectorXd apply_control(const Eigen::VectorXd& f, const Eigen::VectorXd& w, double alpha, double eps = 1e-8,
    bool clamp = true);

// encode -> apply_control -> decode for one latent frame.
Eigen::VectorXd steer_latent(const SaeModel& sae, const Probe& probe, const Eigen::VectorXd& x, const ControlSpec& spec,
    bool clamp = true);

// Applies steer_latent to every frame independently.
LatentSequence steer_sequence(const SaeModel& sae, const Probe& probe, const LatentSequence& seq,
    const ControlSpec& spec, bool clamp = true);

/// One alpha of a steering sweep, averaged over all frames.
///
/// The feature readout applies the probes to the steered features directly.
/// The re-encoded readout decodes the steered features to a latent and encodes
/// it again, i.e. what a downstream consumer of the steered latent would see;
/// its baseline is the plain SAE reconstruction (alpha = 0).
struct SweepRow {
    double alpha = 0.0;
    double target_probability = 0.0;
    double target_argmax_rate = 0.0;
    double drift = 0.0; // mean total-variation distance of off-attribute probes
    double reencoded_target_probability = 0.0;
    double reencoded_target_argmax_rate = 0.0;
    double reencoded_drift = 0.0;
};

std::vector<SweepRow> alpha_sweep(const SaeModel& sae, const Probe& target, const std::vector<Probe>& off_attribute,
    const std::vector<LatentSequence>& sequences, int target_class, const std::vector<double>& alphas,
    bool clamp = true);

} // namespace latent_lens
