#include "latent_lens/synth_world.hpp"

#include "latent_lens/error.hpp"
#include "latent_lens/quantization.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <numbers>
#include <numeric>
#include <random>

namespace latent_lens {

namespace fs = std::filesystem;

namespace {

constexpr double kPitchBumpWidth = 0.5; // in classes

std::mt19937_64 item_rng(std::uint64_t seed, std::uint64_t index, std::uint64_t stream)
{
    std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
        static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32), static_cast<std::uint32_t>(stream)};
    return std::mt19937_64(seq);
}

std::string numbered(const char* prefix, std::uint64_t i, const char* suffix)
{
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s%04llu%s", prefix, static_cast<unsigned long long>(i), suffix);
    return buf;
}

// Pitch classes advance by a stride coprime to the class count, so every
// class is visited once per cycle regardless of seed.
int cycled_pitch_class(const WorldConfig& cfg, std::uint64_t segment)
{
    int stride = 7;
    while (std::gcd(stride, cfg.pitch_classes) != 1) {
        ++stride;
    }
    const auto offset = static_cast<std::uint64_t>(cfg.seed % static_cast<std::uint64_t>(cfg.pitch_classes));
    return static_cast<int>((segment * static_cast<std::uint64_t>(stride) + offset) % static_cast<std::uint64_t>(cfg.pitch_classes));
}

double segment_rms(const Signal& s)
{
    double acc = 0.0;
    for (double v : s.samples) {
        acc += v * v;
    }
    return std::sqrt(acc / double(s.samples.size()));
}

} // namespace

double ToneSpec::fundamental_hz() const { return hz_from_midi(midi); }

Signal synth_tone(const ToneSpec& spec, int sample_rate)
{
    const double f0 = spec.fundamental_hz();
    if (spec.n_partials < 1 || !(spec.duration_s > 0.0) || !(spec.amplitude > 0.0) || spec.amplitude > 1.0) {
        throw ConfigError("invalid tone spec");
    }
    if (!(spec.brightness >= 0.0) || spec.brightness >= 1.0) {
        throw ConfigError("tone brightness must lie in [0, 1)");
    }
    if (f0 * spec.n_partials >= sample_rate / 2.0) {
        throw ConfigError("tone partials alias: " + std::to_string(spec.n_partials) + " partials of "
            + std::to_string(f0) + " Hz exceed the Nyquist frequency");
    }
    Signal sig;
    sig.sample_rate = sample_rate;
    const auto n = static_cast<std::size_t>(std::lround(spec.duration_s * sample_rate));
    sig.samples.assign(n, 0.0);
    double weight = 1.0;
    for (int p = 1; p <= spec.n_partials; ++p) {
        const double w = 2.0 * std::numbers::pi * f0 * p / sample_rate;
        for (std::size_t i = 0; i < n; ++i) {
            sig.samples[i] += weight * std::sin(w * double(i));
        }
        weight *= spec.brightness;
    }
    double peak = 0.0;
    for (double v : sig.samples) {
        peak = std::max(peak, std::abs(v));
    }
    if (peak > 0.0) {
        const double gain = spec.amplitude / peak;
        for (double& v : sig.samples) {
            v *= gain;
        }
    }
    return sig;
}

double tone_centroid_hz(const ToneSpec& spec)
{
    const double f0 = spec.fundamental_hz();
    double num = 0.0;
    double den = 0.0;
    double weight = 1.0;
    for (int p = 1; p <= spec.n_partials; ++p) {
        num += weight * f0 * p;
        den += weight;
        weight *= spec.brightness;
    }
    return num / den;
}

void WorldConfig::validate() const
{
    if (latent_dim < 1 || pitch_classes < 2 || nuisance_dims < 0) {
        throw ConfigError("world dimensions must be positive");
    }
    if (encoding_width() > latent_dim) {
        throw ConfigError("rank-deficient mixing: encoding width " + std::to_string(encoding_width())
            + " exceeds latent_dim " + std::to_string(latent_dim));
    }
    if (pitch_midi_min < 0 || pitch_midi_min + pitch_classes - 1 > 127) {
        throw ConfigError("pitch range must lie within MIDI 0..127");
    }
    if (!(noise_sigma >= 0.0) || !(frame_rate > 0.0) || sample_rate < 8000 || !(segment_s > 0.0)
        || segments_per_item < 1 || n_partials < 1) {
        throw ConfigError("invalid world configuration");
    }
    if (!(0.0 < amplitude_min && amplitude_min <= amplitude_max && amplitude_max <= 1.0)) {
        throw ConfigError("amplitude range must lie in (0, 1]");
    }
    if (!(0.0 < brightness_min && brightness_min <= brightness_max && brightness_max < 1.0)) {
        throw ConfigError("brightness range must lie in (0, 1)");
    }
    if (!(scalar_gain > 0.0)) {
        throw ConfigError("scalar_gain must be positive");
    }
    if (!(rms_min < rms_max) || !(centroid_min < centroid_max)) {
        throw ConfigError("truth scaling ranges must be non-empty");
    }
    const double top = hz_from_midi(pitch_midi_min + pitch_classes - 1);
    if (top * n_partials >= sample_rate / 2.0) {
        throw ConfigError("highest note aliases at this sample rate; reduce n_partials or the pitch range");
    }
}

nlohmann::json to_json(const WorldConfig& c)
{
    return {
        {"latent_dim", c.latent_dim},
        {"pitch_midi_min", c.pitch_midi_min},
        {"pitch_classes", c.pitch_classes},
        {"nuisance_dims", c.nuisance_dims},
        {"noise_sigma", c.noise_sigma},
        {"seed", c.seed},
        {"frame_rate", c.frame_rate},
        {"sample_rate", c.sample_rate},
        {"segment_s", c.segment_s},
        {"segments_per_item", c.segments_per_item},
        {"amplitude_min", c.amplitude_min},
        {"amplitude_max", c.amplitude_max},
        {"brightness_min", c.brightness_min},
        {"brightness_max", c.brightness_max},
        {"n_partials", c.n_partials},
        {"rms_min", c.rms_min},
        {"rms_max", c.rms_max},
        {"centroid_min", c.centroid_min},
        {"centroid_max", c.centroid_max},
        {"scalar_gain", c.scalar_gain},
    };
}

WorldConfig world_config_from_json(const nlohmann::json& j)
{
    WorldConfig c;
    try {
        for (const auto& [key, value] : j.items()) {
            if (key == "latent_dim") c.latent_dim = value.get<int>();
            else if (key == "pitch_midi_min") c.pitch_midi_min = value.get<int>();
            else if (key == "pitch_classes") c.pitch_classes = value.get<int>();
            else if (key == "nuisance_dims") c.nuisance_dims = value.get<int>();
            else if (key == "noise_sigma") c.noise_sigma = value.get<double>();
            else if (key == "seed") c.seed = value.get<std::uint64_t>();
            else if (key == "frame_rate") c.frame_rate = value.get<double>();
            else if (key == "sample_rate") c.sample_rate = value.get<int>();
            else if (key == "segment_s") c.segment_s = value.get<double>();
            else if (key == "segments_per_item") c.segments_per_item = value.get<int>();
            else if (key == "amplitude_min") c.amplitude_min = value.get<double>();
            else if (key == "amplitude_max") c.amplitude_max = value.get<double>();
            else if (key == "brightness_min") c.brightness_min = value.get<double>();
            else if (key == "brightness_max") c.brightness_max = value.get<double>();
            else if (key == "n_partials") c.n_partials = value.get<int>();
            else if (key == "rms_min") c.rms_min = value.get<double>();
            else if (key == "rms_max") c.rms_max = value.get<double>();
            else if (key == "centroid_min") c.centroid_min = value.get<double>();
            else if (key == "centroid_max") c.centroid_max = value.get<double>();
            else if (key == "scalar_gain") c.scalar_gain = value.get<double>();
            else throw ConfigError("unknown world config key \"" + key + "\"");
        }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("invalid world config: ") + e.what());
    }
    c.validate();
    return c;
}

Eigen::MatrixXd mixing_matrix(const WorldConfig& cfg)
{
    cfg.validate();
    const int d = cfg.latent_dim;
    const int g = cfg.encoding_width();
    auto rng = item_rng(cfg.seed, 0, 0xA11CE);
    std::normal_distribution<double> normal(0.0, 1.0);
    Eigen::MatrixXd gauss(d, g);
    for (int j = 0; j < g; ++j) {
        for (int i = 0; i < d; ++i) {
            gauss(i, j) = normal(rng);
        }
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(gauss);
    Eigen::MatrixXd q = qr.householderQ() * Eigen::MatrixXd::Identity(d, g);
    const Eigen::MatrixXd r = qr.matrixQR().topRows(g).triangularView<Eigen::Upper>();
    for (int j = 0; j < g; ++j) {
        if (r(j, j) < 0.0) {
            q.col(j) = -q.col(j);
        }
    }
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(q);
    if (svd.singularValues().minCoeff() <= 1e-6) {
        throw NumericError("rank-deficient mixing matrix");
    }
    return q;
}

Eigen::VectorXd encode_truth(const FrameTruth& truth, const WorldConfig& cfg)
{
    Eigen::VectorXd g = Eigen::VectorXd::Zero(cfg.encoding_width());
    const double pos = truth.midi - cfg.pitch_midi_min;
    for (int k = 0; k < cfg.pitch_classes; ++k) {
        const double z = (pos - k) / kPitchBumpWidth;
        g(k) = std::exp(-0.5 * z * z);
    }
    g(cfg.pitch_classes) = cfg.scalar_gain * (truth.rms - cfg.rms_min) / (cfg.rms_max - cfg.rms_min);
    g(cfg.pitch_classes + 1) = cfg.scalar_gain * (truth.centroid_hz - cfg.centroid_min) / (cfg.centroid_max - cfg.centroid_min);
    return g;
}

LatentSequence synth_latents(const std::vector<FrameTruth>& truth, const WorldConfig& cfg, std::uint64_t item_seed,
    const std::string& id)
{
    if (truth.empty()) {
        throw ConfigError("no frames to synthesize");
    }
    const Eigen::MatrixXd A = mixing_matrix(cfg);
    auto rng = item_rng(cfg.seed, item_seed, 0x1A7E);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::uniform_real_distribution<double> uniform(0.0, 1.0);

    LatentSequence seq;
    seq.channels = static_cast<std::uint32_t>(cfg.latent_dim);
    seq.frames = truth.size();
    seq.frame_rate = cfg.frame_rate;
    seq.source_id = id;
    seq.data.resize(seq.frames * seq.channels);
    for (std::size_t t = 0; t < truth.size(); ++t) {
        Eigen::VectorXd g = encode_truth(truth[t], cfg);
        for (int n = 0; n < cfg.nuisance_dims; ++n) {
            g(cfg.pitch_classes + 2 + n) = uniform(rng);
        }
        Eigen::VectorXd x = A * g;
        for (int c = 0; c < cfg.latent_dim; ++c) {
            x(c) += cfg.noise_sigma * normal(rng);
        }
        auto frame = seq.frame(t);
        for (int c = 0; c < cfg.latent_dim; ++c) {
            frame[static_cast<std::size_t>(c)] = static_cast<float>(x(c));
        }
    }
    return seq;
}

SynthItem synth_item(const WorldConfig& cfg, std::uint64_t index)
{
    cfg.validate();
    auto rng = item_rng(cfg.seed, index, 0x70E5);
    std::uniform_real_distribution<double> amp(cfg.amplitude_min, cfg.amplitude_max);
    std::uniform_real_distribution<double> bright(cfg.brightness_min, cfg.brightness_max);

    SynthItem item;
    item.audio.sample_rate = cfg.sample_rate;
    std::vector<FrameTruth> segment_truth;
    for (int s = 0; s < cfg.segments_per_item; ++s) {
        ToneSpec spec;
        const auto global = index * static_cast<std::uint64_t>(cfg.segments_per_item) + static_cast<std::uint64_t>(s);
        spec.midi = cfg.pitch_midi_min + cycled_pitch_class(cfg, global);
        spec.amplitude = amp(rng);
        spec.brightness = bright(rng);
        spec.duration_s = cfg.segment_s;
        spec.n_partials = cfg.n_partials;
        const Signal tone = synth_tone(spec, cfg.sample_rate);
        item.audio.samples.insert(item.audio.samples.end(), tone.samples.begin(), tone.samples.end());
        segment_truth.push_back({spec.midi, spec.fundamental_hz(), segment_rms(tone), tone_centroid_hz(spec)});
        item.segments.push_back(spec);
    }
    const double duration = cfg.segment_s * cfg.segments_per_item;
    const auto frames = static_cast<std::size_t>(std::floor(duration * cfg.frame_rate + 1e-9));
    for (std::size_t t = 0; t < frames; ++t) {
        const double center = (double(t) + 0.5) / cfg.frame_rate;
        const auto seg = std::min<std::size_t>(static_cast<std::size_t>(center / cfg.segment_s), segment_truth.size() - 1);
        item.truth.push_back(segment_truth[seg]);
    }
    return item;
}

WorldConfig fit_truth_ranges(WorldConfig cfg, int n_items)
{
    double rms_lo = std::numeric_limits<double>::infinity();
    double rms_hi = -rms_lo;
    double cen_lo = rms_lo;
    double cen_hi = -rms_lo;
    for (int i = 0; i < n_items; ++i) {
        for (const auto& t : synth_item(cfg, static_cast<std::uint64_t>(i)).truth) {
            rms_lo = std::min(rms_lo, t.rms);
            rms_hi = std::max(rms_hi, t.rms);
            cen_lo = std::min(cen_lo, t.centroid_hz);
            cen_hi = std::max(cen_hi, t.centroid_hz);
        }
    }
    if (rms_lo < rms_hi) {
        cfg.rms_min = rms_lo;
        cfg.rms_max = rms_hi;
    }
    if (cen_lo < cen_hi) {
        cfg.centroid_min = cen_lo;
        cfg.centroid_max = cen_hi;
    }
    return cfg;
}

DatasetManifest make_dataset(int n_items, WorldConfig cfg, const fs::path& out_dir)
{
    if (n_items < 1) {
        throw ConfigError("need at least one item");
    }
    cfg.validate();
    cfg = fit_truth_ranges(cfg, n_items);
    std::error_code ec;
    fs::create_directories(out_dir / "audio", ec);
    fs::create_directories(out_dir / "latents", ec);
    if (ec) {
        throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    }

    DatasetManifest manifest;
    manifest.base_dir = fs::absolute(out_dir);
    for (int i = 0; i < n_items; ++i) {
        const auto index = static_cast<std::uint64_t>(i);
        const SynthItem item = synth_item(cfg, index);
        ManifestEntry entry;
        entry.id = numbered("item_", index, "");
        entry.audio_path = manifest.base_dir / "audio" / numbered("item_", index, ".wav");
        entry.latent_path = manifest.base_dir / "latents" / numbered("item_", index, ".alt");
        write_wav(item.audio, *entry.audio_path);
        write_latent(synth_latents(item.truth, cfg, index, entry.id), entry.latent_path);
        std::map<std::string, FrameValues> gt;
        for (const auto& t : item.truth) {
            gt["pitch_hz"].emplace_back(t.pitch_hz);
            gt["rms"].emplace_back(t.rms);
            gt["centroid_hz"].emplace_back(t.centroid_hz);
        }
        entry.ground_truth = std::move(gt);
        manifest.entries.push_back(std::move(entry));
    }
    save_manifest(manifest, out_dir / "manifest.json");
    std::ofstream world(out_dir / "world.json", std::ios::trunc);
    if (!world) {
        throw IoError("cannot write " + (out_dir / "world.json").string());
    }
    world << to_json(cfg).dump(1) << '\n';
    return manifest;
}

std::vector<TrajectorySnapshot> trajectory(const LatentSequence& x_final, int T, std::uint64_t seed)
{
    if (T < 1) {
        throw ConfigError("trajectory needs T >= 1");
    }
    x_final.validate();
    const std::uint32_t C = x_final.channels;
    std::vector<double> mean(C, 0.0);
    std::vector<double> sd(C, 0.0);
    for (std::uint64_t t = 0; t < x_final.frames; ++t) {
        for (std::uint32_t c = 0; c < C; ++c) {
            mean[c] += x_final.frame(t)[c];
        }
    }
    for (auto& m : mean) {
        m /= double(x_final.frames);
    }
    for (std::uint64_t t = 0; t < x_final.frames; ++t) {
        for (std::uint32_t c = 0; c < C; ++c) {
            const double dv = x_final.frame(t)[c] - mean[c];
            sd[c] += dv * dv;
        }
    }
    for (auto& s : sd) {
        s = std::sqrt(s / double(x_final.frames));
    }

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    std::vector<double> noise(x_final.data.size());
    for (std::uint64_t t = 0; t < x_final.frames; ++t) {
        for (std::uint32_t c = 0; c < C; ++c) {
            noise[t * C + c] = sd[c] * normal(rng);
        }
    }

    std::vector<TrajectorySnapshot> out;
    out.reserve(static_cast<std::size_t>(T) + 1);
    for (int step = 0; step <= T; ++step) {
        const double w = double(step) / double(T);
        TrajectorySnapshot snap;
        snap.step = step;
        snap.latent = x_final;
        for (std::size_t i = 0; i < noise.size(); ++i) {
            snap.latent.data[i] = static_cast<float>((1.0 - w) * noise[i] + w * double(x_final.data[i]));
        }
        out.push_back(std::move(snap));
    }
    return out;
}

std::vector<fs::path> write_trajectories(const std::vector<LatentSequence>& finals, int T, std::uint64_t seed,
    const fs::path& out_dir)
{
    std::vector<fs::path> manifests;
    for (std::size_t i = 0; i < finals.size(); ++i) {
        const fs::path dir = out_dir / numbered("traj_", i, "");
        std::error_code ec;
        fs::create_directories(dir, ec);
        if (ec) {
            throw IoError("cannot create " + dir.string() + ": " + ec.message());
        }
        DatasetManifest manifest;
        manifest.base_dir = fs::absolute(dir);
        for (auto& snap : trajectory(finals[i], T, seed + i)) {
            ManifestEntry entry;
            entry.id = numbered("step_", static_cast<std::uint64_t>(snap.step), "");
            entry.latent_path = manifest.base_dir / (entry.id + ".alt");
            entry.step_index = snap.step;
            write_latent(snap.latent, entry.latent_path);
            manifest.entries.push_back(std::move(entry));
        }
        save_manifest(manifest, dir / "manifest.json");
        manifests.push_back(dir / "manifest.json");
    }
    return manifests;
}

} // namespace latent_lens
