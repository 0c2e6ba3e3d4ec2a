#include "commands.hpp"

#include "latent_lens/error.hpp"
#include "latent_lens/quantization.hpp"

namespace latent_lens::cli {

namespace fs = std::filesystem;

int cmd_synth_data(Context& ctx)
{
    const auto& c = ctx.cfg;
    require(c.out, "--out");
    if (c.items < 1) {
        throw ConfigError("--items must be at least 1");
    }
    if (c.trajectories < 0 || c.trajectories > c.items) {
        throw ConfigError("--trajectories must lie in [0, items]");
    }
    if (c.trajectories > 0 && c.steps < 1) {
        throw ConfigError("--steps must be at least 1");
    }
    c.world.validate();
    const fs::path out = c.out;
    ensure_dir(out);
    const auto manifest = make_dataset(c.items, c.world, out);
    ctx.out << (out / "manifest.json").string() << "\n";

    if (c.trajectories > 0) {
        std::vector<LatentSequence> finals;
        for (int i = 0; i < c.trajectories; ++i) {
            finals.push_back(read_latent(manifest.entries[static_cast<std::size_t>(i)].latent_path));
        }
        for (const auto& p : write_trajectories(finals, c.steps, c.world.seed, out / "trajectories")) {
            ctx.out << p.string() << "\n";
        }
    }
    return 0;
}

int cmd_extract_features(Context& ctx)
{
    const auto& c = ctx.cfg;
    const auto in_path = existing_file(c.manifest, "--manifest");
    require(c.out, "--out");
    auto manifest = load_manifest(in_path);
    for (const auto& e : manifest.entries) {
        if (!e.audio_path) {
            throw Error("no audio for entry \"" + e.id + "\"");
        }
    }

    for (auto& e : manifest.entries) {
        const Signal sig = load_wav(*e.audio_path);
        const LatentSequence latent = read_latent(e.latent_path);
        const auto frames = static_cast<long long>(latent.frames);
        const AcousticCurve curves[] = {
            yin_pitch(sig, c.extract.yin),
            frame_rms(sig, c.extract.window_s, c.extract.hop_s),
            spectral_centroid(sig, c.extract.window_s, c.extract.hop_s),
        };
        std::map<std::string, FrameValues> truth;
        for (const auto& curve : curves) {
            const auto aligned = align_to_frames(curve, latent.frame_rate, frames);
            FrameValues values(aligned.values.size());
            for (std::size_t t = 0; t < values.size(); ++t) {
                if (aligned.mask[t]) {
                    values[t] = aligned.values[t];
                }
            }
            truth[to_string(curve.attribute)] = std::move(values);
        }
        e.ground_truth = std::move(truth);
    }

    const fs::path out = c.out;
    if (out.has_parent_path()) {
        ensure_dir(out.parent_path());
    }
    save_manifest(manifest, out);
    ctx.out << out.string() << "\n";
    return 0;
}

} // namespace latent_lens::cli
