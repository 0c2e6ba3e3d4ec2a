#include "latent_lens/latent_io.hpp"

#include "latent_lens/error.hpp"

#include <algorithm>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>
#include <set>

#include <json.hpp>

namespace latent_lens {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

template <typename T>
void put_le(std::vector<std::uint8_t>& out, T value)
{
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
        std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    auto bits = std::bit_cast<U>(value);
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
    }
}

template <typename T>
T get_le(std::span<const std::uint8_t> in, std::size_t offset)
{
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
        std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U bits = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) {
        bits |= static_cast<U>(in[offset + i]) << (8 * i);
    }
    return std::bit_cast<T>(bits);
}

std::string os_cause() { return std::strerror(errno); }

} // namespace

void LatentSequence::validate() const
{
    if (channels == 0) {
        throw FormatError("latent sequence has zero channels");
    }
    if (frames == 0) {
        throw FormatError("latent sequence has zero frames");
    }
    if (!(frame_rate > 0.0) || !std::isfinite(frame_rate)) {
        throw FormatError("frame rate must be positive");
    }
    if (data.size() != frames * channels) {
        throw FormatError("latent data size does not match frames * channels");
    }
    if (!std::all_of(data.begin(), data.end(), [](float v) { return std::isfinite(v); })) {
        throw FormatError("non-finite data");
    }
}

std::vector<std::uint8_t> encode_latent(const LatentSequence& seq)
{
    seq.validate();
    std::vector<std::uint8_t> out;
    out.reserve(kLatentHeaderBytes + seq.data.size() * 4 + kLatentTrailerBytes);
    out.insert(out.end(), std::begin(kLatentMagic), std::end(kLatentMagic));
    put_le(out, kLatentVersion);
    put_le(out, seq.channels);
    put_le(out, seq.frames);
    put_le(out, seq.frame_rate);
    put_le(out, std::uint8_t{0});
    for (float v : seq.data) {
        put_le(out, v);
    }
    out.insert(out.end(), kLatentTrailerBytes, 0);
    return out;
}

LatentSequence decode_latent(std::span<const std::uint8_t> bytes, const std::string& source_id)
{
    if (bytes.size() < 4 || !std::equal(std::begin(kLatentMagic), std::end(kLatentMagic), bytes.begin())) {
        throw FormatError("not a latent file");
    }
    if (bytes.size() < kLatentHeaderBytes) {
        throw FormatError("corrupt file: truncated header");
    }
    const auto version = get_le<std::uint32_t>(bytes, 4);
    if (version > kLatentVersion || version == 0) {
        throw FormatError("unsupported version " + std::to_string(version));
    }
    LatentSequence seq;
    seq.channels = get_le<std::uint32_t>(bytes, 8);
    seq.frames = get_le<std::uint64_t>(bytes, 12);
    seq.frame_rate = get_le<double>(bytes, 20);
    seq.source_id = source_id;
    const auto dtype = bytes[28];
    if (dtype != 0) {
        throw FormatError("unsupported dtype code " + std::to_string(dtype));
    }
    if (seq.channels == 0 || seq.frames == 0) {
        throw FormatError("corrupt file: empty shape");
    }
    // Guard the multiplication before trusting it.
    const std::uint64_t available = (bytes.size() - kLatentHeaderBytes) / 4;
    if (seq.frames > available / seq.channels) {
        throw FormatError("corrupt file: payload shorter than declared shape");
    }
    const std::uint64_t count = seq.frames * seq.channels;
    if (bytes.size() < kLatentHeaderBytes + count * 4 + kLatentTrailerBytes) {
        throw FormatError("corrupt file: missing trailer");
    }
    seq.data.resize(count);
    for (std::uint64_t i = 0; i < count; ++i) {
        seq.data[i] = get_le<float>(bytes, kLatentHeaderBytes + i * 4);
        if (!std::isfinite(seq.data[i])) {
            throw FormatError("non-finite data at index " + std::to_string(i));
        }
    }
    if (!(seq.frame_rate > 0.0) || !std::isfinite(seq.frame_rate)) {
        throw FormatError("corrupt file: frame rate must be positive");
    }
    return seq;
}

void write_latent(const LatentSequence& seq, const fs::path& path)
{
    const auto bytes = encode_latent(seq);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing: " + os_cause());
    }
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) {
        throw IoError("write failed for " + path.string() + ": " + os_cause());
    }
}

LatentSequence read_latent(const fs::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string() + ": " + os_cause());
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_latent(bytes, path.stem().string());
    } catch (const FormatError& e) {
        throw FormatError(path.string() + ": " + e.what());
    }
}

namespace {

fs::path resolve(const fs::path& base, const std::string& p)
{
    fs::path path(p);
    return path.is_absolute() ? path : (base / path).lexically_normal();
}

FrameValues parse_frame_values(const json& arr, const std::string& where)
{
    if (!arr.is_array()) {
        throw FormatError(where + ": ground truth values must be an array");
    }
    FrameValues values;
    values.reserve(arr.size());
    for (const auto& v : arr) {
        if (v.is_null()) {
            values.emplace_back(std::nullopt);
        } else if (v.is_number()) {
            values.emplace_back(v.get<double>());
        } else {
            throw FormatError(where + ": ground truth values must be numbers or null");
        }
    }
    return values;
}

} // namespace

DatasetManifest load_manifest(const fs::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open manifest " + path.string() + ": " + os_cause());
    }
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw FormatError(path.string() + ": invalid JSON: " + e.what());
    }
    if (!doc.is_object() || !doc.contains("entries") || !doc["entries"].is_array()) {
        throw FormatError(path.string() + ": missing required key \"entries\"");
    }
    DatasetManifest manifest;
    manifest.base_dir = fs::absolute(path).parent_path();
    std::set<std::string> seen;
    for (const auto& e : doc["entries"]) {
        if (!e.is_object()) {
            throw FormatError(path.string() + ": entry is not an object");
        }
        for (const char* key : {"id", "latent_path"}) {
            if (!e.contains(key) || !e[key].is_string()) {
                throw FormatError(path.string() + ": missing required key \"" + key + "\"");
            }
        }
        ManifestEntry entry;
        entry.id = e["id"].get<std::string>();
        if (!seen.insert(entry.id).second) {
            throw FormatError(path.string() + ": duplicate id \"" + entry.id + "\"");
        }
        entry.latent_path = resolve(manifest.base_dir, e["latent_path"].get<std::string>());
        if (!fs::exists(entry.latent_path)) {
            throw IoError(path.string() + ": entry \"" + entry.id + "\" references missing file "
                + entry.latent_path.string());
        }
        if (e.contains("audio_path") && !e["audio_path"].is_null()) {
            entry.audio_path = resolve(manifest.base_dir, e["audio_path"].get<std::string>());
            if (!fs::exists(*entry.audio_path)) {
                throw IoError(path.string() + ": entry \"" + entry.id + "\" references missing file "
                    + entry.audio_path->string());
            }
        }
        if (e.contains("step_index") && !e["step_index"].is_null()) {
            if (!e["step_index"].is_number_integer()) {
                throw FormatError(path.string() + ": step_index must be an integer");
            }
            entry.step_index = e["step_index"].get<std::int64_t>();
        }
        if (e.contains("ground_truth") && !e["ground_truth"].is_null()) {
            if (!e["ground_truth"].is_object()) {
                throw FormatError(path.string() + ": ground_truth must be an object");
            }
            std::map<std::string, FrameValues> gt;
            for (const auto& [attr, values] : e["ground_truth"].items()) {
                gt[attr] = parse_frame_values(values, path.string() + ": " + entry.id + "." + attr);
            }
            entry.ground_truth = std::move(gt);
        }
        manifest.entries.push_back(std::move(entry));
    }
    return manifest;
}

void save_manifest(const DatasetManifest& manifest, const fs::path& path)
{
    const auto dir = fs::absolute(path).parent_path();
    auto rel = [&](const fs::path& p) { return fs::absolute(p).lexically_relative(dir).generic_string(); };
    json entries = json::array();
    for (const auto& e : manifest.entries) {
        json j;
        j["id"] = e.id;
        j["latent_path"] = rel(e.latent_path);
        j["audio_path"] = e.audio_path ? json(rel(*e.audio_path)) : json(nullptr);
        j["step_index"] = e.step_index ? json(*e.step_index) : json(nullptr);
        if (e.ground_truth) {
            json gt = json::object();
            for (const auto& [attr, values] : *e.ground_truth) {
                json arr = json::array();
                for (const auto& v : values) {
                    arr.push_back(v ? json(*v) : json(nullptr));
                }
                gt[attr] = std::move(arr);
            }
            j["ground_truth"] = std::move(gt);
        } else {
            j["ground_truth"] = nullptr;
        }
        entries.push_back(std::move(j));
    }
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot open " + path.string() + " for writing: " + os_cause());
    }
    out << json{{"entries", entries}}.dump(1) << '\n';
    if (!out) {
        throw IoError("write failed for " + path.string() + ": " + os_cause());
    }
}

std::vector<LatentSequence> load_all_latents(const DatasetManifest& manifest)
{
    std::vector<LatentSequence> out;
    out.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
        auto seq = read_latent(e.latent_path);
        seq.source_id = e.id;
        if (!out.empty() && seq.channels != out.front().channels) {
            throw ConfigError("inconsistent latent dimensionality: " + e.id + " has "
                + std::to_string(seq.channels) + " channels, expected "
                + std::to_string(out.front().channels));
        }
        out.push_back(std::move(seq));
    }
    return out;
}

FrameStream::FrameStream(const DatasetManifest& manifest, std::uint64_t shuffle_seed)
    : FrameStream(load_all_latents(manifest), shuffle_seed)
{
}

FrameStream::FrameStream(std::vector<LatentSequence> sequences, std::uint64_t shuffle_seed)
    : sequences_(std::move(sequences))
    , rng_(shuffle_seed)
{
    for (const auto& s : sequences_) {
        if (s.channels != sequences_.front().channels) {
            throw ConfigError("inconsistent latent dimensionality: " + s.source_id);
        }
    }
    for (std::size_t i = 0; i < sequences_.size(); ++i) {
        for (std::uint64_t t = 0; t < sequences_[i].frames; ++t) {
            tags_.emplace_back(i, t);
        }
    }
    if (!sequences_.empty()) {
        channels_ = sequences_.front().channels;
    }
    order_.resize(tags_.size());
    shuffle();
}

void FrameStream::shuffle()
{
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    // Fisher-Yates with explicit draws, independent of std::shuffle.
    for (std::size_t i = order_.size(); i > 1; --i) {
        const std::size_t j = rng_() % i;
        std::swap(order_[i - 1], order_[j]);
    }
    cursor_ = 0;
}

std::span<const float> FrameStream::next()
{
    if (cursor_ >= order_.size()) {
        return {};
    }
    const auto [seq, t] = tags_[order_[cursor_++]];
    return sequences_[seq].frame(t);
}

void FrameStream::next_epoch() { shuffle(); }

} // namespace latent_lens
