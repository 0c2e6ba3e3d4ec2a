#include "latent_lens/cli.hpp"

#include "commands.hpp"

#include "latent_lens/error.hpp"
#include "latent_lens/parallel.hpp"

#include <charconv>
#include <chrono>
#include <cstdlib>
#include <ctime>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

namespace latent_lens {

namespace cli {

namespace fs = std::filesystem;

void require(const std::string& value, const std::string& flag)
{
    if (value.empty()) {
        throw ConfigError("missing required option " + flag);
    }
}

fs::path existing_file(const std::string& value, const std::string& flag)
{
    require(value, flag);
    if (!fs::is_regular_file(value)) {
        throw ConfigError(flag + ": no such file: " + value);
    }
    return value;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) {
        throw IoError("cannot create directory " + dir.string() + (ec ? ": " + ec.message() : ""));
    }
}

void write_text(const fs::path& path, const std::string& text)
{
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot write " + path.string());
    }
    f << text;
    if (!f.flush()) {
        throw IoError("write failed: " + path.string());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) { write_text(path, j.dump(2) + "\n"); }

// Shortest text that reads back to the same double.
std::string csv_number(double v)
{
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

std::string csv_number(const std::optional<double>& v) { return v ? csv_number(*v) : std::string(); }

std::vector<Probe> load_probes(const std::vector<std::string>& paths)
{
    std::vector<Probe> probes;
    for (const auto& p : paths) {
        probes.push_back(load_probe(existing_file(p, "--probes")));
    }
    return probes;
}

} // namespace cli

namespace {

using cli::Context;
using cli::RunConfig;

struct Command {
    std::string name;
    std::string help;
    std::function<void(CLI::App&, RunConfig&)> flags;
    std::function<int(Context&)> run;
};

std::vector<Command> commands()
{
    using namespace cli;
    return {
        {"synth-data", "Write a synthetic dataset (audio, latents, manifest)",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--out", c.out, "Output directory");
                a.add_option("--items", c.items, "Number of items");
                a.add_option("--trajectories", c.trajectories, "Also write this many linear trajectories");
                a.add_option("--steps", c.steps, "Trajectory length T");
                add_world_flags(a, c);
            },
            cmd_synth_data},
        {"extract-features", "Measure pitch, rms and centroid curves into a manifest copy",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--manifest", c.manifest, "Input manifest");
                a.add_option("--out", c.out, "Output manifest path");
                a.add_option("--window-s", c.extract.window_s, "RMS/centroid window in seconds");
                a.add_option("--hop-s", c.extract.hop_s, "RMS/centroid hop in seconds");
                a.add_option("--yin-window-s", c.extract.yin.window_s, "Pitch window in seconds");
                a.add_option("--yin-hop-s", c.extract.yin.hop_s, "Pitch hop in seconds");
                a.add_option("--fmin", c.extract.yin.fmin, "Lowest pitch in Hz");
                a.add_option("--fmax", c.extract.yin.fmax, "Highest pitch in Hz");
                a.add_option("--yin-threshold", c.extract.yin.threshold, "YIN dip threshold");
                a.add_option("--voicing-cutoff", c.extract.yin.voicing_cutoff, "Minimum voiced confidence");
            },
            cmd_extract_features},
        {"train-sae", "Train a sparse autoencoder on a manifest's latents",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--manifest", c.manifest, "Training manifest");
                a.add_option("--out", c.out, "Output directory");
                add_sae_flags(a, c);
            },
            cmd_train_sae},
        {"grid-search", "Train one SAE per (hidden dim, lambda) pair",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--manifest", c.manifest, "Training manifest");
                a.add_option("--out", c.out, "Output directory");
                a.add_option("--hidden-dims", c.grid.hidden_dims, "Comma-separated widths")->delimiter(',');
                a.add_option("--lambdas", c.grid.lambdas, "Comma-separated L1 weights")->delimiter(',');
                add_sae_flags(a, c);
            },
            cmd_grid_search},
        {"train-probe", "Train one linear probe per attribute on SAE features",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--manifest", c.manifest, "Manifest with per-frame ground truth");
                a.add_option("--sae", c.sae_path, "SAE checkpoint");
                a.add_option("--out", c.out, "Output directory");
                a.add_option("--attributes", c.attributes, "Comma-separated attributes")->delimiter(',');
                a.add_option("--holdout", c.holdout, "Fraction of sequences held out");
                a.add_option("--pitch-bins", c.bins.pitch_classes, "Pitch classes");
                a.add_option("--midi-min", c.bins.midi_min, "MIDI note of pitch class 0");
                a.add_option("--linear-bins", c.bins.linear_classes, "Classes for rms and centroid");
                add_probe_flags(a, c);
            },
            cmd_train_probe},
        {"eval-probe", "Report probe accuracy on a manifest",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--manifest", c.manifest, "Manifest with per-frame ground truth");
                a.add_option("--sae", c.sae_path, "SAE checkpoint");
                a.add_option("--probes", c.probe_paths, "Probe checkpoints")->delimiter(',');
                a.add_option("--out", c.out, "Output directory");
            },
            cmd_eval_probe},
        {"steer", "Add scaled probe directions to SAE features and decode",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--manifest", c.manifest, "Latents to steer");
                a.add_option("--sae", c.sae_path, "SAE checkpoint");
                a.add_option("--probe", c.probe_path, "Probe supplying the control vector");
                a.add_option("--off-probes", c.probe_paths, "Probes watched for drift")->delimiter(',');
                a.add_option("--class", c.steer.target_class, "Target class index");
                a.add_option("--alphas", c.steer.alphas, "Comma-separated strengths")->delimiter(',');
                a.add_flag("!--no-clamp", c.steer.clamp, "Keep negative steered features");
                a.add_option("--out", c.out, "Output directory");
            },
            cmd_steer},
        {"progress", "Score generation progress along latent trajectories",
            [](CLI::App& a, RunConfig& c) {
                a.add_option("--manifest", c.manifests, "Trajectory manifest (repeatable)");
                a.add_option("--trajectory-dir", c.trajectory_dir, "Directory of */manifest.json trajectories");
                a.add_option("--sae", c.sae_path, "SAE checkpoint");
                a.add_option("--probes", c.probe_paths, "Probe checkpoints")->delimiter(',');
                a.add_option("--eps-d", c.eps_d, "Denominator guard");
                a.add_option("--out", c.out, "Output directory");
            },
            cmd_progress},
    };
}

std::optional<std::string> find_config(const std::vector<std::string>& args)
{
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) {
                throw ConfigError("--config needs a file");
            }
            return args[i + 1];
        }
        if (args[i].rfind("--config=", 0) == 0) {
            return args[i].substr(9);
        }
    }
    return std::nullopt;
}

RunConfig load_run_config(const std::vector<std::string>& args)
{
    const auto path = find_config(args);
    if (!path) {
        return {};
    }
    std::ifstream f(*path);
    if (!f) {
        throw ConfigError("--config: cannot open " + *path);
    }
    nlohmann::json j;
    try {
        f >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError("--config: invalid JSON in " + *path + ": " + e.what());
    }
    return cli::run_config_from_json(j);
}

int resolve_threads(int flag)
{
    if (flag > 0) {
        return flag;
    }
    if (flag < 0) {
        throw ConfigError("--threads must be positive");
    }
    if (const char* env = std::getenv("LATENT_LENS_THREADS"); env && *env) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (*end != '\0' || n < 1) {
            throw ConfigError(std::string("LATENT_LENS_THREADS must be a positive integer, got \"") + env + "\"");
        }
        return static_cast<int>(n);
    }
    return 0;
}

std::string utc_timestamp()
{
    const std::time_t now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::ostringstream s;
    s << std::put_time(&tm, "%Y-%m-%dT%H:%M:%SZ");
    return s.str();
}

// Timestamps live only in this sidecar, never in data artifacts.
void append_run_log(const std::string& command, const RunConfig& cfg, const std::vector<std::string>& args, int code)
{
    if (cfg.out.empty()) {
        return;
    }
    std::filesystem::path dir = cfg.out;
    if (command == "extract-features") {
        dir = dir.parent_path().empty() ? std::filesystem::path(".") : dir.parent_path();
    }
    if (!std::filesystem::is_directory(dir)) {
        return;
    }
    std::ofstream log(dir / "run.log", std::ios::app);
    log << utc_timestamp() << " exit=" << code;
    for (const auto& a : args) {
        log << ' ' << a;
    }
    log << '\n';
}

} // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err)
{
    CLI::App app{"latent-lens: sparse-autoencoder probing of audio latents"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Help for every subcommand");

    RunConfig cfg;
    try {
        cfg = load_run_config(args);
    } catch (const Error& e) {
        err << "error: " << e.what() << "\n";
        return 2;
    }

    const auto table = commands();
    std::vector<CLI::App*> subs;
    for (const auto& c : table) {
        auto* sub = app.add_subcommand(c.name, c.help);
        cli::add_common_flags(*sub, cfg);
        c.flags(*sub, cfg);
        subs.push_back(sub);
    }

    std::vector<std::string> reversed(args.rbegin(), args.rend());
    try {
        app.parse(reversed);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return 0;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return 0;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n";
        for (auto* sub : subs) {
            if (sub->parsed()) {
                err << sub->help();
                return 2;
            }
        }
        err << app.help();
        return 2;
    }

    std::size_t chosen = 0;
    while (!subs[chosen]->parsed()) {
        ++chosen;
    }
    const auto& command = table[chosen];

    int code = 0;
    try {
        const int threads = resolve_threads(cfg.threads);
        set_worker_limit(threads);
        cfg.sae.threads = threads;
        cfg.probe.threads = threads;
        Context ctx{cfg, out, err};
        code = command.run(ctx);
    } catch (const ConfigError& e) {
        err << "error: " << e.what() << "\n" << subs[chosen]->help();
        code = 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        code = 1;
    }
    try {
        append_run_log(command.name, cfg, args, code);
    } catch (const std::exception&) {
        // The log is best effort.
    }
    return code;
}

} // namespace latent_lens
