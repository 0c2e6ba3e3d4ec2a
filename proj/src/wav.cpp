#include "latent_lens/dsp_features.hpp"

#include "latent_lens/error.hpp"

#include <algorithm>
#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>

namespace latent_lens {

namespace {

constexpr std::uint16_t kFormatPcm = 0x0001;
constexpr std::uint16_t kFormatFloat = 0x0003;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

std::uint32_t u32(const std::uint8_t* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (std::uint32_t(p[3]) << 24); }
std::uint16_t u16(const std::uint8_t* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

struct FmtChunk {
    std::uint16_t format = 0;
    std::uint16_t channels = 0;
    std::uint32_t sample_rate = 0;
    std::uint16_t block_align = 0;
    std::uint16_t bits = 0;
};

double decode_sample(const std::uint8_t* p, const FmtChunk& fmt)
{
    if (fmt.format == kFormatFloat) {
        float v;
        std::uint32_t bits = u32(p);
        std::memcpy(&v, &bits, 4);
        return v;
    }
    switch (fmt.bits) {
    case 16:
        return static_cast<std::int16_t>(u16(p)) / 32768.0;
    case 24: {
        std::int32_t v = p[0] | (p[1] << 8) | (p[2] << 16);
        if (v & 0x800000) {
            v -= 0x1000000;
        }
        return v / 8388608.0;
    }
    default:
        return 0.0;
    }
}

} // namespace

void Signal::validate() const
{
    if (sample_rate < 8000) {
        throw ConfigError("sample rate must be at least 8000 Hz, got " + std::to_string(sample_rate));
    }
    if (!std::all_of(samples.begin(), samples.end(), [](double v) { return std::isfinite(v); })) {
        throw ConfigError("signal contains non-finite samples");
    }
}

Signal load_wav(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path.string() + ": " + std::strerror(errno));
    }
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    const std::string where = path.string() + ": ";
    if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
        throw FormatError(where + "not a WAV file");
    }

    FmtChunk fmt;
    bool have_fmt = false;
    const std::uint8_t* data = nullptr;
    std::size_t data_size = 0;
    std::size_t pos = 12;
    while (pos + 8 <= bytes.size()) {
        const std::uint8_t* chunk = bytes.data() + pos;
        const std::size_t size = u32(chunk + 4);
        const std::size_t body = pos + 8;
        const std::size_t avail = std::min(size, bytes.size() - body);
        if (std::memcmp(chunk, "fmt ", 4) == 0) {
            if (avail < 16) {
                throw FormatError(where + "truncated fmt chunk");
            }
            const std::uint8_t* f = bytes.data() + body;
            fmt.format = u16(f);
            fmt.channels = u16(f + 2);
            fmt.sample_rate = u32(f + 4);
            fmt.block_align = u16(f + 12);
            fmt.bits = u16(f + 14);
            if (fmt.format == kFormatExtensible && avail >= 26) {
                // Sub-format GUID starts with the plain format tag.
                fmt.format = u16(f + 24);
            }
            have_fmt = true;
        } else if (std::memcmp(chunk, "data", 4) == 0) {
            data = bytes.data() + body;
            data_size = avail;
        }
        pos = body + size + (size & 1);
    }
    if (!have_fmt || data == nullptr) {
        throw FormatError(where + "not a WAV file (missing fmt or data chunk)");
    }

    const bool pcm_ok = fmt.format == kFormatPcm && (fmt.bits == 16 || fmt.bits == 24);
    const bool float_ok = fmt.format == kFormatFloat && fmt.bits == 32;
    if (!pcm_ok && !float_ok) {
        throw FormatError(where + "unsupported encoding (format " + std::to_string(fmt.format) + ", "
            + std::to_string(fmt.bits) + " bits)");
    }
    if (fmt.channels < 1 || fmt.channels > 2) {
        throw FormatError(where + "unsupported channel count " + std::to_string(fmt.channels));
    }
    const std::size_t bytes_per_sample = fmt.bits / 8;
    const std::size_t frame_bytes = bytes_per_sample * fmt.channels;
    const std::size_t frames = data_size / frame_bytes;
    if (frames == 0) {
        throw FormatError(where + "zero-length audio");
    }

    Signal sig;
    sig.sample_rate = static_cast<int>(fmt.sample_rate);
    sig.samples.resize(frames);
    for (std::size_t i = 0; i < frames; ++i) {
        double acc = 0.0;
        for (std::size_t c = 0; c < fmt.channels; ++c) {
            acc += decode_sample(data + i * frame_bytes + c * bytes_per_sample, fmt);
        }
        sig.samples[i] = acc / fmt.channels;
    }
    return sig;
}

void write_wav(const Signal& sig, const std::filesystem::path& path)
{
    const std::uint32_t data_bytes = static_cast<std::uint32_t>(sig.samples.size() * 2);
    std::vector<std::uint8_t> out;
    out.reserve(44 + data_bytes);
    auto put32 = [&](std::uint32_t v) {
        for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    };
    auto put16 = [&](std::uint16_t v) {
        out.push_back(static_cast<std::uint8_t>(v));
        out.push_back(static_cast<std::uint8_t>(v >> 8));
    };
    auto tag = [&](const char* t) { out.insert(out.end(), t, t + 4); };

    tag("RIFF");
    put32(36 + data_bytes);
    tag("WAVE");
    tag("fmt ");
    put32(16);
    put16(kFormatPcm);
    put16(1);
    put32(static_cast<std::uint32_t>(sig.sample_rate));
    put32(static_cast<std::uint32_t>(sig.sample_rate) * 2);
    put16(2);
    put16(16);
    tag("data");
    put32(data_bytes);
    for (double s : sig.samples) {
        const double clipped = std::clamp(s, -1.0, 1.0);
        const auto q = static_cast<std::int16_t>(std::clamp(std::lround(clipped * 32768.0), -32768L, 32767L));
        put16(static_cast<std::uint16_t>(q));
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) {
        throw IoError("cannot open " + path.string() + " for writing: " + std::strerror(errno));
    }
    f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
    if (!f) {
        throw IoError("write failed for " + path.string());
    }
}

} // namespace latent_lens
