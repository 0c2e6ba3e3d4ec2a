#pragma once

#include "latent_lens/dsp_features.hpp"
#include "latent_lens/probes.hpp"
#include "latent_lens/sae.hpp"
#include "latent_lens/synth_world.hpp"

#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

namespace latent_lens::cli {

struct ExtractConfig {
    double window_s = 0.0; // rms and centroid; <= 0 selects 2048 samples
    double hop_s = 0.0;    // <= 0 selects 512 samples
    YinParams yin{0.0, 0.0};
};

struct BinsConfig {
    int pitch_classes = 66;
    int midi_min = 24;
    int linear_classes = 20;
};

struct GridConfig {
    std::vector<int> hidden_dims{128, 512};
    std::vector<double> lambdas{0.005, 0.15};
};

struct SteerConfig {
    int target_class = -1;
    std::vector<double> alphas{1.0, 10.0, 20.0, 30.0};
    bool clamp = true;
};

/// Everything a command can be configured with. Loaded from defaults, then
/// the --config file, then command-line flags.
struct RunConfig {
    WorldConfig world;
    TrainConfig sae;
    ProbeTrainConfig probe;
    ExtractConfig extract;
    BinsConfig bins;
    GridConfig grid;
    SteerConfig steer;
    double eps_d = 1e-6;
    int items = 50;
    int trajectories = 0;
    int steps = 32;
    double holdout = 0.2;
    std::vector<std::string> attributes{"pitch_hz", "rms", "centroid_hz"};
    int threads = 0;

    std::string manifest;
    std::vector<std::string> manifests; // progress: one trajectory each
    std::string trajectory_dir;
    std::string out;
    std::string sae_path;
    std::string probe_path;
    std::vector<std::string> probe_paths;
};

// Unknown keys anywhere in the document are rejected.
RunConfig run_config_from_json(const nlohmann::json& j);
nlohmann::json to_json(const TrainConfig& cfg);
nlohmann::json to_json(const ProbeTrainConfig& cfg);

// Registers flags bound directly to `cfg`, so flags override whatever the
// config file set.
void add_common_flags(CLI::App& app, RunConfig& cfg);
void add_world_flags(CLI::App& app, RunConfig& cfg);
void add_sae_flags(CLI::App& app, RunConfig& cfg);
void add_probe_flags(CLI::App& app, RunConfig& cfg);

struct Context {
    RunConfig cfg;
    std::ostream& out;
    std::ostream& err;
};

int cmd_synth_data(Context& ctx);
int cmd_extract_features(Context& ctx);
int cmd_train_sae(Context& ctx);
int cmd_grid_search(Context& ctx);
int cmd_train_probe(Context& ctx);
int cmd_eval_probe(Context& ctx);
int cmd_steer(Context& ctx);
int cmd_progress(Context& ctx);

// Shared helpers.
void require(const std::string& value, const std::string& flag);
std::filesystem::path existing_file(const std::string& value, const std::string& flag);
void ensure_dir(const std::filesystem::path& dir);
void write_text(const std::filesystem::path& path, const std::string& text);
void write_json(const std::filesystem::path& path, const nlohmann::json& j);
std::string csv_number(double v);
std::string csv_number(const std::optional<double>& v);

// Per-frame features and labels of one attribute over a set of manifest entries.
struct AttributeData {
    Eigen::MatrixXd features;
    std::vector<double> values;
    std::vector<bool> mask;
};
AttributeData attribute_data(const SaeModel& sae, const DatasetManifest& manifest,
    const std::vector<std::size_t>& entries, const std::vector<LatentSequence>& latents, Attribute attribute);
LabeledFeatures label(const AttributeData& data, const BinSpec& bins);

std::vector<Probe> load_probes(const std::vector<std::string>& paths);

} // namespace latent_lens::cli
