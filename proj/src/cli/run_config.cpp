#include "commands.hpp"

#include "latent_lens/error.hpp"

#include <functional>
#include <map>

namespace latent_lens::cli {

namespace {

using nlohmann::json;
using Setters = std::map<std::string, std::function<void(const json&)>>;

template <typename T>
std::function<void(const json&)> set(T& field)
{
    return [&field](const json& v) { field = v.get<T>(); };
}

void apply(const json& j, const std::string& where, const Setters& setters)
{
    if (!j.is_object()) {
        throw ConfigError("config section \"" + where + "\" must be an object");
    }
    for (const auto& [key, value] : j.items()) {
        const auto it = setters.find(key);
        if (it == setters.end()) {
            throw ConfigError("unknown config key \"" + (where.empty() ? key : where + "." + key) + "\"");
        }
        try {
            it->second(value);
        } catch (const json::exception& e) {
            throw ConfigError("invalid value for config key \"" + key + "\": " + e.what());
        }
    }
}

} // namespace

RunConfig run_config_from_json(const json& j)
{
    RunConfig c;
    auto& s = c.sae;
    auto& p = c.probe;
    auto& e = c.extract;
    const Setters sae = {
        {"hidden_dim", set(s.hidden_dim)},
        {"lambda", set(s.lambda)},
        {"learning_rate", set(s.learning_rate)},
        {"beta1", set(s.beta1)},
        {"beta2", set(s.beta2)},
        {"batch_size", set(s.batch_size)},
        {"epochs", set(s.epochs)},
        {"seed", set(s.seed)},
        {"eps", set(s.eps)},
    };
    const Setters probe = {
        {"learning_rate", set(p.learning_rate)},
        {"beta1", set(p.beta1)},
        {"beta2", set(p.beta2)},
        {"batch_size", set(p.batch_size)},
        {"epochs", set(p.epochs)},
        {"seed", set(p.seed)},
        {"l2_penalty", set(p.l2_penalty)},
        {"balance_classes", set(p.balance_classes)},
    };
    const Setters extract = {
        {"window_s", set(e.window_s)},
        {"hop_s", set(e.hop_s)},
        {"yin_window_s", set(e.yin.window_s)},
        {"yin_hop_s", set(e.yin.hop_s)},
        {"fmin", set(e.yin.fmin)},
        {"fmax", set(e.yin.fmax)},
        {"yin_threshold", set(e.yin.threshold)},
        {"voicing_cutoff", set(e.yin.voicing_cutoff)},
    };
    const Setters bins = {
        {"pitch_classes", set(c.bins.pitch_classes)},
        {"midi_min", set(c.bins.midi_min)},
        {"linear_classes", set(c.bins.linear_classes)},
    };
    const Setters grid = {
        {"hidden_dims", set(c.grid.hidden_dims)},
        {"lambdas", set(c.grid.lambdas)},
    };
    const Setters steer = {
        {"target_class", set(c.steer.target_class)},
        {"alphas", set(c.steer.alphas)},
        {"clamp", set(c.steer.clamp)},
    };
    const Setters top = {
        {"world", [&](const json& v) { c.world = world_config_from_json(v); }},
        {"sae", [&](const json& v) { apply(v, "sae", sae); }},
        {"probe", [&](const json& v) { apply(v, "probe", probe); }},
        {"extract", [&](const json& v) { apply(v, "extract", extract); }},
        {"bins", [&](const json& v) { apply(v, "bins", bins); }},
        {"grid", [&](const json& v) { apply(v, "grid", grid); }},
        {"steer", [&](const json& v) { apply(v, "steer", steer); }},
        {"eps_d", set(c.eps_d)},
        {"items", set(c.items)},
        {"trajectories", set(c.trajectories)},
        {"steps", set(c.steps)},
        {"holdout", set(c.holdout)},
        {"attributes", set(c.attributes)},
        {"threads", set(c.threads)},
        {"manifest", set(c.manifest)},
        {"manifests", set(c.manifests)},
        {"trajectory_dir", set(c.trajectory_dir)},
        {"out", set(c.out)},
        {"sae_path", set(c.sae_path)},
        {"probe_path", set(c.probe_path)},
        {"probe_paths", set(c.probe_paths)},
    };
    apply(j, "", top);
    return c;
}

nlohmann::json to_json(const TrainConfig& c)
{
    return {
        {"hidden_dim", c.hidden_dim},
        {"lambda", c.lambda},
        {"learning_rate", c.learning_rate},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"seed", c.seed},
        {"eps", c.eps},
    };
}

nlohmann::json to_json(const ProbeTrainConfig& c)
{
    return {
        {"learning_rate", c.learning_rate},
        {"beta1", c.beta1},
        {"beta2", c.beta2},
        {"batch_size", c.batch_size},
        {"epochs", c.epochs},
        {"seed", c.seed},
        {"l2_penalty", c.l2_penalty},
        {"balance_classes", c.balance_classes},
    };
}

void add_common_flags(CLI::App& app, RunConfig& cfg)
{
    // Parsed ahead of the other flags; registered so CLI11 accepts it.
    app.add_option("--config", "JSON run configuration (flags take precedence)");
    app.add_option("--threads", cfg.threads, "Worker threads (default: LATENT_LENS_THREADS or all cores)");
}

void add_world_flags(CLI::App& app, RunConfig& cfg)
{
    auto& w = cfg.world;
    app.add_option("--seed", w.seed, "World seed");
    app.add_option("--latent-dim", w.latent_dim, "Latent channels d");
    app.add_option("--pitch-midi-min", w.pitch_midi_min, "Lowest MIDI note");
    app.add_option("--pitch-classes", w.pitch_classes, "Number of semitone pitch classes");
    app.add_option("--nuisance-dims", w.nuisance_dims, "Extra random ground-truth dimensions");
    app.add_option("--noise-sigma", w.noise_sigma, "Latent noise standard deviation");
    app.add_option("--frame-rate", w.frame_rate, "Latent frames per second");
    app.add_option("--sample-rate", w.sample_rate, "Audio sample rate");
    app.add_option("--segment-s", w.segment_s, "Tone segment length in seconds");
    app.add_option("--segments-per-item", w.segments_per_item, "Tone segments per item");
    app.add_option("--scalar-gain", w.scalar_gain, "Span of the rms and centroid channels");
}

void add_sae_flags(CLI::App& app, RunConfig& cfg)
{
    auto& s = cfg.sae;
    app.add_option("--hidden-dim", s.hidden_dim, "SAE width m");
    app.add_option("--lambda", s.lambda, "L1 weight");
    app.add_option("--lr", s.learning_rate, "Adam learning rate");
    app.add_option("--batch-size", s.batch_size, "Frames per minibatch");
    app.add_option("--epochs", s.epochs, "Training epochs");
    app.add_option("--seed", s.seed, "Initialization and shuffling seed");
}

void add_probe_flags(CLI::App& app, RunConfig& cfg)
{
    auto& p = cfg.probe;
    app.add_option("--lr", p.learning_rate, "Adam learning rate");
    app.add_option("--batch-size", p.batch_size, "Frames per minibatch");
    app.add_option("--epochs", p.epochs, "Training epochs");
    app.add_option("--l2", p.l2_penalty, "L2 penalty");
    app.add_option("--seed", p.seed, "Shuffling and split seed");
    app.add_flag("--balance-classes", p.balance_classes, "Inverse-frequency class weights");
}

} // namespace latent_lens::cli
