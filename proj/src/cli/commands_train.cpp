#include "commands.hpp"

#include "latent_lens/error.hpp"
#include "latent_lens/quantization.hpp"

#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

namespace latent_lens::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json stats_json(const EpochStats& s)
{
    return {
        {"epoch", s.epoch},
        {"train_loss", s.train_loss},
        {"recon_mse", s.recon_mse},
        {"l1_mean", s.l1_mean},
        {"sparsity_ratio", s.sparsity_ratio},
    };
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

BinSpec bins_for(Attribute attribute, const BinsConfig& cfg, const AttributeData& train)
{
    if (attribute == Attribute::pitch_hz) {
        BinSpec b;
        b.attribute = attribute;
        b.scheme = BinScheme::midi_log;
        b.K = cfg.pitch_classes;
        b.midi_min = cfg.midi_min;
        b.validate();
        return b;
    }
    return fit_linear_bins(attribute, train.values, train.mask, cfg.linear_classes);
}

void check_feature_dim(const Probe& probe, const SaeModel& sae)
{
    if (probe.feature_dim() != sae.hidden_dim()) {
        throw ConfigError("probe for " + to_string(probe.attribute) + " expects " + std::to_string(probe.feature_dim())
            + " features but the SAE has " + std::to_string(sae.hidden_dim()));
    }
}

std::vector<std::size_t> all_entries(const DatasetManifest& m)
{
    std::vector<std::size_t> idx(m.entries.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    return idx;
}

} // namespace

AttributeData attribute_data(const SaeModel& sae, const DatasetManifest& manifest,
    const std::vector<std::size_t>& entries, const std::vector<LatentSequence>& latents, Attribute attribute)
{
    const std::string key = to_string(attribute);
    std::vector<LatentSequence> picked;
    AttributeData data;
    for (auto i : entries) {
        const auto& entry = manifest.entries[i];
        const auto& latent = latents[i];
        if (!entry.ground_truth || !entry.ground_truth->count(key)) {
            throw Error("entry \"" + entry.id + "\" has no ground truth for " + key);
        }
        const auto& values = entry.ground_truth->at(key);
        if (values.size() != latent.frames) {
            throw FormatError("entry \"" + entry.id + "\": " + key + " has " + std::to_string(values.size())
                + " values for " + std::to_string(latent.frames) + " frames");
        }
        for (const auto& v : values) {
            const bool ok = v && std::isfinite(*v) && (attribute != Attribute::pitch_hz || *v > 0.0);
            data.values.push_back(ok ? *v : 0.0);
            data.mask.push_back(ok);
        }
        picked.push_back(latent);
    }
    data.features = encode_features(sae, frames_matrix(picked));
    return data;
}

LabeledFeatures label(const AttributeData& data, const BinSpec& bins)
{
    LabeledFeatures out;
    out.features = data.features;
    out.mask = data.mask;
    out.labels.resize(data.values.size(), 0);
    for (std::size_t i = 0; i < data.values.size(); ++i) {
        if (data.mask[i]) {
            out.labels[i] = classify(data.values[i], bins);
        }
    }
    return out;
}

int cmd_train_sae(Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto manifest = load_manifest(existing_file(c.manifest, "--manifest"));
    require(c.out, "--out");
    const fs::path out = c.out;
    ensure_dir(out);

    const auto result = train(manifest, c.sae);
    save_sae(result.model, out / "sae.bin");

    json history = json::array();
    std::ostringstream csv;
    csv << "epoch,train_loss,recon_mse,l1_mean,sparsity_ratio\n";
    for (const auto& s : result.metrics.history) {
        history.push_back(stats_json(s));
        csv << s.epoch << ',' << csv_number(s.train_loss) << ',' << csv_number(s.recon_mse) << ','
            << csv_number(s.l1_mean) << ',' << csv_number(s.sparsity_ratio) << '\n';
    }
    write_json(out / "metrics.json",
        {
            {"config", to_json(c.sae)},
            {"input_dim", result.model.input_dim()},
            {"recon_mse", result.metrics.recon_mse},
            {"l1_mean", result.metrics.l1_mean},
            {"sparsity_ratio", result.metrics.sparsity_ratio},
            {"history", history},
        });
    write_text(out / "history.csv", csv.str());
    ctx.out << "recon_mse " << result.metrics.recon_mse << " sparsity_ratio " << result.metrics.sparsity_ratio
            << "\n";
    return 0;
}

int cmd_grid_search(Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto manifest = load_manifest(existing_file(c.manifest, "--manifest"));
    require(c.out, "--out");
    if (c.grid.hidden_dims.empty() || c.grid.lambdas.empty()) {
        throw ConfigError("grid needs at least one hidden dim and one lambda");
    }
    const fs::path out = c.out;
    ensure_dir(out);

    const auto cells = grid_search(load_all_latents(manifest), c.grid.hidden_dims, c.grid.lambdas, c.sae);
    std::ostringstream csv;
    csv << "hidden_dim,lambda,recon_mse,sparsity_ratio,status\n";
    json rows = json::array();
    std::vector<std::string> failures;
    for (const auto& cell : cells) {
        const std::string status = cell.error.empty() ? "ok" : "failed";
        csv << cell.hidden_dim << ',' << csv_number(cell.lambda) << ',' << csv_number(cell.recon_mse) << ','
            << csv_number(cell.sparsity_ratio) << ',' << status << '\n';
        rows.push_back({
            {"hidden_dim", cell.hidden_dim},
            {"lambda", cell.lambda},
            {"recon_mse", optional_json(cell.recon_mse)},
            {"sparsity_ratio", optional_json(cell.sparsity_ratio)},
            {"error", cell.error.empty() ? json(nullptr) : json(cell.error)},
        });
        if (!cell.error.empty()) {
            failures.push_back("cell (hidden_dim=" + std::to_string(cell.hidden_dim) + ", lambda="
                + csv_number(cell.lambda) + "): " + cell.error);
        }
    }
    write_text(out / "grid.csv", csv.str());
    write_json(out / "grid.json", {{"config", to_json(c.sae)}, {"cells", rows}});
    for (const auto& f : failures) {
        ctx.err << "error: " << f << "\n";
    }
    ctx.out << (out / "grid.csv").string() << "\n";
    return failures.empty() ? 0 : 1;
}

int cmd_train_probe(Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto manifest = load_manifest(existing_file(c.manifest, "--manifest"));
    const auto sae = load_sae(existing_file(c.sae_path, "--sae"));
    require(c.out, "--out");
    if (!(c.holdout >= 0.0 && c.holdout < 1.0)) {
        throw ConfigError("--holdout must lie in [0, 1)");
    }
    if (c.attributes.empty()) {
        throw ConfigError("--attributes is empty");
    }
    std::vector<Attribute> attributes;
    for (const auto& a : c.attributes) {
        attributes.push_back(attribute_from_string(a));
    }
    if (manifest.entries.empty()) {
        throw Error("manifest has no entries");
    }
    const fs::path out = c.out;
    ensure_dir(out);

    // Held-out entries are whole sequences.
    const std::size_t n = manifest.entries.size();
    std::vector<std::size_t> order = all_entries(manifest);
    std::mt19937_64 rng(c.probe.seed);
    for (std::size_t i = n; i > 1; --i) {
        std::swap(order[i - 1], order[rng() % i]);
    }
    std::size_t held = 0;
    if (c.holdout > 0.0 && n >= 2) {
        held = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(c.holdout * double(n))), 1, n - 1);
    }
    std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(held));
    std::vector<std::size_t> train_idx(order.begin() + static_cast<std::ptrdiff_t>(held), order.end());
    std::sort(test.begin(), test.end());
    std::sort(train_idx.begin(), train_idx.end());

    const auto latents = load_all_latents(manifest);
    json reports = json::array();
    for (const auto attribute : attributes) {
        const auto train_data = attribute_data(sae, manifest, train_idx, latents, attribute);
        const auto bins = bins_for(attribute, c.bins, train_data);
        const auto train_set = label(train_data, bins);
        const Probe probe = train_probe(train_set, c.probe, bins);
        const std::string file = "probe_" + to_string(attribute) + ".bin";
        save_probe(probe, out / file);

        json report = {
            {"attribute", to_string(attribute)},
            {"file", file},
            {"K", probe.classes()},
            {"bins", to_json(bins)},
            {"train_frames", train_set.valid_count()},
            {"train_accuracy", accuracy(probe, train_set)},
            {"heldout_frames", 0},
            {"heldout_accuracy", nullptr},
        };
        if (!test.empty()) {
            const auto test_set = label(attribute_data(sae, manifest, test, latents, attribute), bins);
            report["heldout_frames"] = test_set.valid_count();
            if (test_set.valid_count() > 0) {
                report["heldout_accuracy"] = accuracy(probe, test_set);
            }
        }
        ctx.out << to_string(attribute) << " train " << report["train_accuracy"].get<double>();
        if (!report["heldout_accuracy"].is_null()) {
            ctx.out << " heldout " << report["heldout_accuracy"].get<double>();
        }
        ctx.out << "\n";
        reports.push_back(std::move(report));
    }
    json heldout_ids = json::array();
    for (auto i : test) {
        heldout_ids.push_back(manifest.entries[i].id);
    }
    write_json(out / "probes.json",
        {
            {"config", to_json(c.probe)},
            {"holdout", c.holdout},
            {"heldout_ids", heldout_ids},
            {"probes", reports},
        });
    return 0;
}

int cmd_eval_probe(Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto manifest = load_manifest(existing_file(c.manifest, "--manifest"));
    const auto sae = load_sae(existing_file(c.sae_path, "--sae"));
    if (c.probe_paths.empty()) {
        throw ConfigError("missing required option --probes");
    }
    const auto probes = load_probes(c.probe_paths);
    require(c.out, "--out");
    const fs::path out = c.out;
    ensure_dir(out);

    const auto latents = load_all_latents(manifest);
    json reports = json::array();
    for (const auto& probe : probes) {
        check_feature_dim(probe, sae);
        const auto data = label(attribute_data(sae, manifest, all_entries(manifest), latents, probe.attribute), probe.bins);
        const double acc = accuracy(probe, data);
        const auto confusion = confusion_matrix(probe, data);
        std::ostringstream csv;
        csv << "true_class";
        for (Eigen::Index k = 0; k < confusion.cols(); ++k) {
            csv << ",pred_" << k;
        }
        csv << '\n';
        for (Eigen::Index r = 0; r < confusion.rows(); ++r) {
            csv << r;
            for (Eigen::Index k = 0; k < confusion.cols(); ++k) {
                csv << ',' << confusion(r, k);
            }
            csv << '\n';
        }
        const std::string file = "confusion_" + to_string(probe.attribute) + ".csv";
        write_text(out / file, csv.str());
        reports.push_back({
            {"attribute", to_string(probe.attribute)},
            {"frames", data.valid_count()},
            {"accuracy", acc},
            {"confusion_file", file},
        });
        ctx.out << to_string(probe.attribute) << " accuracy " << acc << "\n";
    }
    write_json(out / "eval.json", {{"entries", manifest.entries.size()}, {"probes", reports}});
    return 0;
}

} // namespace latent_lens::cli
