#include "latent_lens/quantization.hpp"

#include "latent_lens/error.hpp"

#include <algorithm>
#include <cmath>

namespace latent_lens {

void BinSpec::validate() const
{
    if (K < 2) {
        throw ConfigError("bin spec needs at least two classes");
    }
    if (scheme == BinScheme::linear) {
        if (!(v_min < v_max) || !std::isfinite(v_min) || !std::isfinite(v_max)) {
            throw ConfigError("linear bin spec needs v_min < v_max");
        }
    } else if (midi_min < 0 || midi_min > 127 - (K - 1)) {
        throw ConfigError("midi bin range must lie within 0..127");
    }
}

double BinSpec::class_center(int k) const
{
    if (scheme == BinScheme::midi_log) {
        return hz_from_midi(double(midi_min + k));
    }
    return v_min + (double(k) + 0.5) * (v_max - v_min) / double(K);
}

BinSpec default_pitch_bins() { return BinSpec{Attribute::pitch_hz, BinScheme::midi_log, 66, 24, 0.0, 1.0}; }

double midi_from_hz(double hz)
{
    if (!(hz > 0.0)) {
        throw ConfigError("frequency must be positive");
    }
    return 69.0 + 12.0 * std::log2(hz / 440.0);
}

double hz_from_midi(double midi) { return 440.0 * std::exp2((midi - 69.0) / 12.0); }

int classify(double v, const BinSpec& spec)
{
    double raw;
    if (spec.scheme == BinScheme::midi_log) {
        // Non-positive frequencies sit below every note.
        raw = v > 0.0 ? std::round(midi_from_hz(v)) - spec.midi_min : -1.0;
    } else {
        raw = std::floor(double(spec.K) * (v - spec.v_min) / (spec.v_max - spec.v_min));
    }
    return static_cast<int>(std::clamp(raw, 0.0, double(spec.K - 1)));
}

namespace {

// Order statistics at rank q * (n - 1), rounded outward so the range never
// shrinks inside the sample: down for the lower edge, up for the upper one.
double lower_percentile(const std::vector<double>& sorted, double q)
{
    return sorted[static_cast<std::size_t>(std::floor(q * double(sorted.size() - 1)))];
}

double upper_percentile(const std::vector<double>& sorted, double q)
{
    return sorted[static_cast<std::size_t>(std::ceil(q * double(sorted.size() - 1)))];
}

} // namespace

BinSpec fit_linear_bins(Attribute attribute, std::span<const double> values, const std::vector<bool>& mask, int K)
{
    if (mask.size() != values.size()) {
        throw ConfigError("values and mask differ in length");
    }
    std::vector<double> kept;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (mask[i] && std::isfinite(values[i])) {
            kept.push_back(values[i]);
        }
    }
    std::sort(kept.begin(), kept.end());
    if (kept.size() < 2 || kept.front() == kept.back()) {
        throw NumericError("degenerate range: need at least two distinct values to fit bins");
    }
    BinSpec spec;
    spec.attribute = attribute;
    spec.scheme = BinScheme::linear;
    spec.K = K;
    spec.v_min = lower_percentile(kept, 0.005);
    spec.v_max = upper_percentile(kept, 0.995);
    if (!(spec.v_min < spec.v_max)) {
        throw NumericError("degenerate range: robust percentiles coincide");
    }
    spec.validate();
    return spec;
}

LabelSequence label_sequence(const AlignedValues& aligned, const BinSpec& spec, Attribute attribute)
{
    if (aligned.values.size() != aligned.mask.size()) {
        throw ConfigError("values and mask differ in length");
    }
    LabelSequence labels;
    labels.attribute = attribute;
    labels.mask = aligned.mask;
    labels.classes.resize(aligned.values.size(), 0);
    for (std::size_t i = 0; i < aligned.values.size(); ++i) {
        if (aligned.mask[i]) {
            labels.classes[i] = classify(aligned.values[i], spec);
        }
    }
    return labels;
}

nlohmann::json to_json(const BinSpec& spec)
{
    nlohmann::json j;
    j["attribute"] = to_string(spec.attribute);
    j["scheme"] = spec.scheme == BinScheme::midi_log ? "midi_log" : "linear";
    j["K"] = spec.K;
    j["midi_min"] = spec.scheme == BinScheme::midi_log ? nlohmann::json(spec.midi_min) : nlohmann::json(nullptr);
    j["v_min"] = spec.scheme == BinScheme::linear ? nlohmann::json(spec.v_min) : nlohmann::json(nullptr);
    j["v_max"] = spec.scheme == BinScheme::linear ? nlohmann::json(spec.v_max) : nlohmann::json(nullptr);
    return j;
}

BinSpec bin_spec_from_json(const nlohmann::json& j)
{
    try {
        BinSpec spec;
        spec.attribute = attribute_from_string(j.at("attribute").get<std::string>());
        const auto scheme = j.at("scheme").get<std::string>();
        if (scheme == "midi_log") {
            spec.scheme = BinScheme::midi_log;
            spec.midi_min = j.at("midi_min").get<int>();
        } else if (scheme == "linear") {
            spec.scheme = BinScheme::linear;
            spec.v_min = j.at("v_min").get<double>();
            spec.v_max = j.at("v_max").get<double>();
        } else {
            throw FormatError("unknown bin scheme \"" + scheme + "\"");
        }
        spec.K = j.at("K").get<int>();
        spec.validate();
        return spec;
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(std::string("invalid bin spec: ") + e.what());
    }
}

} // namespace latent_lens
