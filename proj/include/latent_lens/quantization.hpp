#pragma once

#include "latent_lens/dsp_features.hpp"

#include <optional>
#include <span>
#include <vector>

#include <json.hpp>

namespace latent_lens {

enum class BinScheme { midi_log, linear };

/// Discretization of one acoustic attribute into K classes.
struct BinSpec {
    Attribute attribute = Attribute::pitch_hz;
    BinScheme scheme = BinScheme::midi_log;
    int K = 66;
    int midi_min = 24;  // midi_log only
    double v_min = 0.0; // linear only
    double v_max = 1.0; // linear only

    // Throws ConfigError if the invariants do not hold.
    void validate() const;
    // Representative value of class k: the note frequency or the bin midpoint.
    double class_center(int k) const;

    bool operator==(const BinSpec&) const = default;
};

// Defaults used when nothing else is configured: MIDI 24 (C1) upwards, 66 classes.
BinSpec default_pitch_bins();

struct LabelSequence {
    Attribute attribute = Attribute::pitch_hz;
    std::vector<int> classes;
    std::vector<bool> mask;
};

double midi_from_hz(double hz);
double hz_from_midi(double midi);

// Class index for `v`; out-of-range values clamp to the edge classes.
int classify(double v, const BinSpec& spec);

// Linear bins spanning the 0.5th to 99.5th percentile of the masked values.
BinSpec fit_linear_bins(Attribute attribute, std::span<const double> values, const std::vector<bool>& mask, int K);

LabelSequence label_sequence(const AlignedValues& aligned, const BinSpec& spec, Attribute attribute);

nlohmann::json to_json(const BinSpec& spec);
BinSpec bin_spec_from_json(const nlohmann::json& j);

} // namespace latent_lens
