#include "commands.hpp"

#include "latent_lens/error.hpp"
#include "latent_lens/intervention.hpp"
#include "latent_lens/progress.hpp"

#include <algorithm>
#include <sstream>

namespace latent_lens::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string alpha_label(double alpha)
{
    std::ostringstream s;
    s << alpha;
    return s.str();
}

std::vector<fs::path> trajectory_manifests(const RunConfig& c)
{
    std::vector<fs::path> paths;
    for (const auto& m : c.manifests) {
        paths.push_back(existing_file(m, "--manifest"));
    }
    if (!c.trajectory_dir.empty()) {
        if (!fs::is_directory(c.trajectory_dir)) {
            throw ConfigError("--trajectory-dir: no such directory: " + c.trajectory_dir);
        }
        std::vector<fs::path> found;
        for (const auto& d : fs::directory_iterator(c.trajectory_dir)) {
            if (d.is_directory() && fs::is_regular_file(d.path() / "manifest.json")) {
                found.push_back(d.path() / "manifest.json");
            }
        }
        std::sort(found.begin(), found.end());
        paths.insert(paths.end(), found.begin(), found.end());
    }
    if (paths.empty()) {
        throw ConfigError("no trajectories: pass --manifest or --trajectory-dir");
    }
    return paths;
}

} // namespace

int cmd_steer(Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto manifest = load_manifest(existing_file(c.manifest, "--manifest"));
    const auto sae = load_sae(existing_file(c.sae_path, "--sae"));
    const auto probe = load_probe(existing_file(c.probe_path, "--probe"));
    const auto off = load_probes(c.probe_paths);
    require(c.out, "--out");
    const int k = c.steer.target_class;
    if (k < 0 || k >= probe.classes()) {
        throw ConfigError("--class " + std::to_string(k) + " out of range [0, " + std::to_string(probe.classes()) + ")");
    }
    if (c.steer.alphas.empty()) {
        throw ConfigError("--alphas is empty");
    }
    auto alphas = c.steer.alphas;
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());

    const fs::path out = c.out;
    ensure_dir(out / "latents");
    const auto sequences = load_all_latents(manifest);

    DatasetManifest steered;
    steered.base_dir = fs::absolute(out);
    for (std::size_t i = 0; i < sequences.size(); ++i) {
        for (double alpha : alphas) {
            const ControlSpec spec{probe.attribute, k, alpha};
            ManifestEntry entry;
            entry.id = manifest.entries[i].id + "_a" + alpha_label(alpha);
            entry.latent_path = steered.base_dir / "latents" / (entry.id + ".alt");
            write_latent(steer_sequence(sae, probe, sequences[i], spec, c.steer.clamp), entry.latent_path);
            steered.entries.push_back(std::move(entry));
        }
    }
    save_manifest(steered, out / "manifest.json");

    const auto rows = alpha_sweep(sae, probe, off, sequences, k, alphas, c.steer.clamp);
    std::ostringstream csv;
    csv << "alpha,target_probability,target_argmax_rate,drift,reencoded_target_probability,"
           "reencoded_target_argmax_rate,reencoded_drift\n";
    json sweep = json::array();
    for (const auto& r : rows) {
        csv << csv_number(r.alpha) << ',' << csv_number(r.target_probability) << ','
            << csv_number(r.target_argmax_rate) << ',' << csv_number(r.drift) << ','
            << csv_number(r.reencoded_target_probability) << ',' << csv_number(r.reencoded_target_argmax_rate) << ','
            << csv_number(r.reencoded_drift) << '\n';
        sweep.push_back({
            {"alpha", r.alpha},
            {"target_probability", r.target_probability},
            {"target_argmax_rate", r.target_argmax_rate},
            {"drift", r.drift},
            {"reencoded_target_probability", r.reencoded_target_probability},
            {"reencoded_target_argmax_rate", r.reencoded_target_argmax_rate},
            {"reencoded_drift", r.reencoded_drift},
        });
    }
    json off_names = json::array();
    for (const auto& p : off) {
        off_names.push_back(to_string(p.attribute));
    }
    write_text(out / "sweep.csv", csv.str());
    write_json(out / "sweep.json",
        {
            {"attribute", to_string(probe.attribute)},
            {"target_class", k},
            {"clamp", c.steer.clamp},
            {"off_attributes", off_names},
            {"rows", sweep},
        });
    ctx.out << (out / "manifest.json").string() << "\n";
    return 0;
}

int cmd_progress(Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto manifests = trajectory_manifests(c);
    const auto sae = load_sae(existing_file(c.sae_path, "--sae"));
    if (c.probe_paths.empty()) {
        throw ConfigError("missing required option --probes");
    }
    const auto probes = load_probes(c.probe_paths);
    if (!(c.eps_d > 0.0)) {
        throw ConfigError("--eps-d must be positive");
    }
    require(c.out, "--out");
    const fs::path out = c.out;
    ensure_dir(out);

    // reports[trajectory][probe]
    std::vector<std::vector<ProgressReport>> reports;
    json names = json::array();
    for (const auto& path : manifests) {
        const auto manifest = load_manifest(path);
        std::vector<TrajectorySnapshot> snapshots;
        for (const auto& e : manifest.entries) {
            if (!e.step_index) {
                throw FormatError(path.string() + ": entry \"" + e.id + "\" has no step_index");
            }
            snapshots.push_back({static_cast<int>(*e.step_index), read_latent(e.latent_path)});
        }
        try {
            reports.push_back(trajectory_report(std::move(snapshots), sae, probes, c.eps_d));
        } catch (const FormatError& e) {
            throw FormatError(path.string() + ": " + e.what());
        }
        if (reports.back().front().T != reports.front().front().T) {
            throw FormatError(path.string() + ": trajectory has T = " + std::to_string(reports.back().front().T)
                + ", expected " + std::to_string(reports.front().front().T));
        }
        names.push_back(path.parent_path().filename().string());
    }

    std::ostringstream csv;
    csv << "attribute,step,mean,std\n";
    json attributes = json::array();
    for (std::size_t p = 0; p < probes.size(); ++p) {
        std::vector<ProgressReport> per;
        for (const auto& r : reports) {
            per.push_back(r[p]);
        }
        const auto agg = aggregate(per);
        json scores = json::array();
        json warnings = json::array();
        for (std::size_t t = 0; t < per.size(); ++t) {
            scores.push_back(per[t].scores);
            for (const auto& w : per[t].warnings) {
                warnings.push_back(names[t].get<std::string>() + ": " + w);
                ctx.err << "warning: " << to_string(agg.attribute) << " " << names[t].get<std::string>() << ": " << w
                        << "\n";
            }
        }
        for (int t = 0; t <= agg.T; ++t) {
            csv << to_string(agg.attribute) << ',' << t << ',' << csv_number(agg.mean[static_cast<std::size_t>(t)])
                << ',' << csv_number(agg.std[static_cast<std::size_t>(t)]) << '\n';
        }
        attributes.push_back({
            {"attribute", to_string(agg.attribute)},
            {"T", agg.T},
            {"mean", agg.mean},
            {"std", agg.std},
            {"monotone_reference", monotone_fit(agg.mean)},
            {"scores", scores},
            {"warnings", warnings},
        });
    }
    write_text(out / "progress.csv", csv.str());
    write_json(out / "progress.json", {{"eps_d", c.eps_d}, {"trajectories", names}, {"attributes", attributes}});
    ctx.out << (out / "progress.json").string() << "\n";
    return 0;
}

} // namespace latent_lens::cli
