#pragma once

#include "latent_lens/dsp_features.hpp"
#include "latent_lens/latent_io.hpp"
#include "latent_lens/progress.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

namespace latent_lens {

/// A steady harmonic tone: partial n has amplitude brightness^(n-1) before
/// the waveform is peak-normalized to `amplitude`.
struct ToneSpec {
    double midi = 69.0;
    double amplitude = 0.5;
    double brightness = 0.5;
    double duration_s = 1.0;
    int n_partials = 10;

    double fundamental_hz() const;
};

Signal synth_tone(const ToneSpec& spec, int sample_rate);

// Magnitude-weighted mean partial frequency of the tone.
double tone_centroid_hz(const ToneSpec& spec);

/// Parameters of the synthetic world: the audio distribution and the linear
/// map that stands in for an audio encoder.
struct WorldConfig {
    int latent_dim = 32;
    int pitch_midi_min = 60;
    int pitch_classes = 30;
    int nuisance_dims = 0;
    double noise_sigma = 0.01;
    std::uint64_t seed = 0;
    double frame_rate = 25.0;
    int sample_rate = 32000;
    double segment_s = 0.2;
    int segments_per_item = 20;
    double amplitude_min = 0.1;
    double amplitude_max = 1.0;
    double brightness_min = 0.1;
    double brightness_max = 0.9;
    int n_partials = 10;
    // Min-max scaling ranges for the scalar truth channels.
    double rms_min = 0.0;
    double rms_max = 1.0;
    double centroid_min = 0.0;
    double centroid_max = 8000.0;
    // The scaled rms and centroid channels span [0, scalar_gain].
    double scalar_gain = 8.0;

    // Ground-truth encoding width: pitch bump + rms + centroid + nuisance.
    int encoding_width() const { return pitch_classes + 2 + nuisance_dims; }
    void validate() const;
};

nlohmann::json to_json(const WorldConfig& cfg);
WorldConfig world_config_from_json(const nlohmann::json& j);

// Seeded random d x g matrix with orthonormal columns (QR of a Gaussian matrix).
Eigen::MatrixXd mixing_matrix(const WorldConfig& cfg);

struct FrameTruth {
    double midi = 0.0;
    double pitch_hz = 0.0;
    double rms = 0.0;
    double centroid_hz = 0.0;
};

// Ground-truth encoding g of one frame (without nuisance dimensions).
Eigen::VectorXd encode_truth(const FrameTruth& truth, const WorldConfig& cfg);

// x = A g + sigma * eta, one latent frame per truth entry.
LatentSequence synth_latents(const std::vector<FrameTruth>& truth, const WorldConfig& cfg, std::uint64_t item_seed,
    const std::string& id = {});

struct SynthItem {
    std::vector<ToneSpec> segments;
    Signal audio;
    std::vector<FrameTruth> truth; // one per latent frame
};

// Item `index` of the world; its randomness depends only on (seed, index).
SynthItem synth_item(const WorldConfig& cfg, std::uint64_t index);

// Sets the rms/centroid scaling ranges to the extremes over items 0..n-1.
WorldConfig fit_truth_ranges(WorldConfig cfg, int n_items);

/// Writes n_items WAVs and latents plus manifest.json and world.json into
/// out_dir. Ground truth per frame is stored under "pitch_hz", "rms" and
/// "centroid_hz".
DatasetManifest make_dataset(int n_items, WorldConfig cfg, const std::filesystem::path& out_dir);

// Snapshots X_t = (1 - t/T) X_0 + (t/T) x_final, X_0 zero-mean Gaussian noise
// with x_final's per-channel variance.
std::vector<TrajectorySnapshot> trajectory(const LatentSequence& x_final, int T, std::uint64_t seed);

// Writes each trajectory as <out_dir>/traj_NNN/manifest.json with step indices.
std::vector<std::filesystem::path> write_trajectories(const std::vector<LatentSequence>& finals, int T,
    std::uint64_t seed, const std::filesystem::path& out_dir);

} // namespace latent_lens
