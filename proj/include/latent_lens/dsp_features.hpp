#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace latent_lens {

/// Mono audio, samples nominally in [-1, 1].
struct Signal {
    std::vector<double> samples;
    int sample_rate = 0;

    double duration() const { return sample_rate > 0 ? double(samples.size()) / sample_rate : 0.0; }
    // Throws ConfigError unless all samples are finite and sample_rate >= 8000.
    void validate() const;
};

enum class Attribute { pitch_hz, rms, centroid_hz };

std::string to_string(Attribute a);
Attribute attribute_from_string(const std::string& name);
inline constexpr Attribute kAllAttributes[] = {Attribute::pitch_hz, Attribute::rms, Attribute::centroid_hz};

/// A measurement curve sampled at analysis-window centers.
struct AcousticCurve {
    Attribute attribute = Attribute::rms;
    std::vector<double> times;  // seconds, strictly increasing
    std::vector<double> values;
    std::optional<std::vector<double>> confidence; // pitch only
    std::optional<double> voicing_cutoff;          // pitch only: voiced iff confidence >= cutoff

    bool voiced(std::size_t i) const
    {
        return !confidence || !voicing_cutoff || (*confidence)[i] >= *voicing_cutoff;
    }
};

// RIFF/WAVE reader: PCM 16/24-bit or IEEE float 32-bit, one or two channels,
// downmixed to mono by averaging.
Signal load_wav(const std::filesystem::path& path);
// Writes 16-bit PCM mono. Samples are clipped to [-1, 1].
void write_wav(const Signal& sig, const std::filesystem::path& path);

inline constexpr int kDefaultWindowSamples = 2048;
inline constexpr int kDefaultHopSamples = 512;

AcousticCurve frame_rms(const Signal& sig, double window_s, double hop_s);
AcousticCurve spectral_centroid(const Signal& sig, double window_s, double hop_s);

struct YinParams {
    double window_s = 0.128;
    double hop_s = 0.032;
    double fmin = 50.0;
    double fmax = 2000.0;
    double threshold = 0.1;
    double voicing_cutoff = 0.5;
};

// YIN fundamental-frequency tracker. Confidence is 1 - d'(tau*) clipped to [0, 1].
AcousticCurve yin_pitch(const Signal& sig, const YinParams& params);

/// Curve values resampled onto latent frames (nearest neighbour).
struct AlignedValues {
    std::vector<double> values;
    std::vector<bool> mask;
};

AlignedValues align_to_frames(const AcousticCurve& curve, double frame_rate, long long frames);

} // namespace latent_lens
