#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace latent_lens {

/// A time-major matrix of latent frame vectors.
///
/// `data` holds frames * channels 32-bit values, frame-major: the value of
/// channel c at frame t lives at data[t * channels + c].
struct LatentSequence {
    std::uint32_t channels = 0;
    std::uint64_t frames = 0;
    double frame_rate = 0.0;
    std::vector<float> data;
    std::string source_id;

    std::span<const float> frame(std::uint64_t t) const
    {
        return {data.data() + t * channels, channels};
    }
    std::span<float> frame(std::uint64_t t) { return {data.data() + t * channels, channels}; }

    // Throws FormatError if the invariants (sizes, finiteness, frame rate) do not hold.
    void validate() const;

    bool operator==(const LatentSequence&) const = default;
};

// Per-frame values for one attribute; nullopt marks an invalid frame.
using FrameValues = std::vector<std::optional<double>>;

struct ManifestEntry {
    std::string id;
    std::filesystem::path latent_path; // absolute after load
    std::optional<std::filesystem::path> audio_path;
    std::optional<std::int64_t> step_index;
    std::optional<std::map<std::string, FrameValues>> ground_truth;
};

struct DatasetManifest {
    std::vector<ManifestEntry> entries;
    std::filesystem::path base_dir;
};

inline constexpr char kLatentMagic[4] = {'A', 'L', 'T', '1'};
inline constexpr std::uint32_t kLatentVersion = 1;
inline constexpr std::size_t kLatentHeaderBytes = 29;
inline constexpr std::size_t kLatentTrailerBytes = 16;

// Serialized ALT1 bytes for `seq` (header, payload, trailer).
std::vector<std::uint8_t> encode_latent(const LatentSequence& seq);
LatentSequence decode_latent(std::span<const std::uint8_t> bytes, const std::string& source_id = {});

void write_latent(const LatentSequence& seq, const std::filesystem::path& path);
LatentSequence read_latent(const std::filesystem::path& path);

DatasetManifest load_manifest(const std::filesystem::path& path);
// Writes `manifest` to `path` with paths made relative to the manifest directory.
void save_manifest(const DatasetManifest& manifest, const std::filesystem::path& path);

/// Iterates every frame of every manifest entry once per epoch, in an order
/// fixed by the shuffle seed. Latents are loaded eagerly on construction.
class FrameStream {
public:
    FrameStream(const DatasetManifest& manifest, std::uint64_t shuffle_seed);
    FrameStream(std::vector<LatentSequence> sequences, std::uint64_t shuffle_seed);

    std::uint32_t channels() const { return channels_; }
    std::size_t frames_per_epoch() const { return order_.size(); }

    // Next frame of the current epoch, or an empty span at the end of the epoch.
    std::span<const float> next();
    // Tag of the frame last returned by next(): (entry index, frame index).
    std::pair<std::size_t, std::uint64_t> last_tag() const { return tags_[order_[cursor_ - 1]]; }
    // Reshuffles for the following epoch and rewinds.
    void next_epoch();

private:
    void shuffle();

    std::vector<LatentSequence> sequences_;
    std::vector<std::pair<std::size_t, std::uint64_t>> tags_;
    std::vector<std::size_t> order_;
    std::size_t cursor_ = 0;
    std::uint32_t channels_ = 0;
    std::mt19937_64 rng_;
};

// Loads all latents of a manifest, checking that they share one channel count.
std::vector<LatentSequence> load_all_latents(const DatasetManifest& manifest);

} // namespace latent_lens
