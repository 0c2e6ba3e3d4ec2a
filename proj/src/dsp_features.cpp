#include "latent_lens/dsp_features.hpp"

#include "latent_lens/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <mutex>
#include <numbers>

#include <fftw3.h>

namespace latent_lens {

std::string to_string(Attribute a)
{
    switch (a) {
    case Attribute::pitch_hz:
        return "pitch_hz";
    case Attribute::rms:
        return "rms";
    case Attribute::centroid_hz:
        return "centroid_hz";
    }
    return "unknown";
}

Attribute attribute_from_string(const std::string& name)
{
    if (name == "pitch_hz" || name == "pitch") return Attribute::pitch_hz;
    if (name == "rms" || name == "loudness") return Attribute::rms;
    if (name == "centroid_hz" || name == "timbre" || name == "centroid") return Attribute::centroid_hz;
    throw ConfigError("unknown attribute \"" + name + "\"");
}

namespace {

struct Framing {
    std::size_t window = 0;
    std::size_t hop = 0;
    std::size_t count = 0;
};

Framing make_framing(const Signal& sig, double window_s, double hop_s)
{
    sig.validate();
    if (!(hop_s > 0.0) || hop_s > window_s) {
        throw ConfigError("hop must satisfy 0 < hop <= window");
    }
    Framing fr;
    fr.window = static_cast<std::size_t>(std::lround(window_s * sig.sample_rate));
    fr.hop = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(hop_s * sig.sample_rate)));
    if (fr.window < 2) {
        throw ConfigError("analysis window shorter than two samples");
    }
    if (fr.window > sig.samples.size()) {
        throw ConfigError("signal too short for a " + std::to_string(fr.window) + "-sample window");
    }
    fr.count = (sig.samples.size() - fr.window) / fr.hop + 1;
    return fr;
}

double window_center(const Framing& fr, std::size_t i, int sample_rate)
{
    return (double(i * fr.hop) + 0.5 * double(fr.window)) / sample_rate;
}

// FFTW planning is not thread-safe; execution on distinct buffers is.
std::mutex& fftw_planner_mutex()
{
    static std::mutex m;
    return m;
}

class RealFft {
public:
    explicit RealFft(std::size_t n)
        : n_(n)
        , in_(fftw_alloc_real(n))
        , out_(fftw_alloc_complex(n / 2 + 1))
    {
        std::lock_guard lock(fftw_planner_mutex());
        plan_ = fftw_plan_dft_r2c_1d(static_cast<int>(n), in_, out_, FFTW_ESTIMATE);
    }
    ~RealFft()
    {
        std::lock_guard lock(fftw_planner_mutex());
        fftw_destroy_plan(plan_);
        fftw_free(in_);
        fftw_free(out_);
    }
    RealFft(const RealFft&) = delete;
    RealFft& operator=(const RealFft&) = delete;

    double* input() { return in_; }
    void execute() { fftw_execute(plan_); }
    double magnitude(std::size_t k) const { return std::hypot(out_[k][0], out_[k][1]); }
    std::size_t bins() const { return n_ / 2 + 1; }

private:
    std::size_t n_;
    double* in_;
    fftw_complex* out_;
    fftw_plan plan_;
};

} // namespace

AcousticCurve frame_rms(const Signal& sig, double window_s, double hop_s)
{
    const auto fr = make_framing(sig, window_s, hop_s);
    AcousticCurve curve;
    curve.attribute = Attribute::rms;
    curve.times.reserve(fr.count);
    curve.values.reserve(fr.count);
    for (std::size_t i = 0; i < fr.count; ++i) {
        const double* x = sig.samples.data() + i * fr.hop;
        double acc = 0.0;
        for (std::size_t j = 0; j < fr.window; ++j) {
            acc += x[j] * x[j];
        }
        curve.times.push_back(window_center(fr, i, sig.sample_rate));
        curve.values.push_back(std::sqrt(acc / double(fr.window)));
    }
    return curve;
}

AcousticCurve spectral_centroid(const Signal& sig, double window_s, double hop_s)
{
    const auto fr = make_framing(sig, window_s, hop_s);
    std::vector<double> hann(fr.window);
    for (std::size_t j = 0; j < fr.window; ++j) {
        hann[j] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * double(j) / double(fr.window));
    }
    RealFft fft(fr.window);
    const double bin_hz = double(sig.sample_rate) / double(fr.window);

    AcousticCurve curve;
    curve.attribute = Attribute::centroid_hz;
    for (std::size_t i = 0; i < fr.count; ++i) {
        const double* x = sig.samples.data() + i * fr.hop;
        for (std::size_t j = 0; j < fr.window; ++j) {
            fft.input()[j] = x[j] * hann[j];
        }
        fft.execute();
        double weighted = 0.0;
        double total = 0.0;
        for (std::size_t k = 0; k < fft.bins(); ++k) {
            const double m = fft.magnitude(k);
            weighted += double(k) * bin_hz * m;
            total += m;
        }
        curve.times.push_back(window_center(fr, i, sig.sample_rate));
        curve.values.push_back(total < 1e-12 ? 0.0 : weighted / total);
    }
    return curve;
}

AcousticCurve yin_pitch(const Signal& sig, const YinParams& p)
{
    sig.validate();
    const double nyquist = sig.sample_rate / 2.0;
    if (!(p.fmin > 0.0) || !(p.fmin < p.fmax) || !(p.fmax < nyquist)) {
        throw ConfigError("pitch range must satisfy 0 < fmin < fmax < sample_rate/2");
    }
    const double window_s = p.window_s > 0.0 ? p.window_s : double(kDefaultWindowSamples) / sig.sample_rate;
    const double hop_s = p.hop_s > 0.0 ? p.hop_s : double(kDefaultHopSamples) / sig.sample_rate;
    const auto fr = make_framing(sig, window_s, hop_s);

    const auto tau_max = static_cast<std::size_t>(std::floor(sig.sample_rate / p.fmin));
    const auto tau_min = std::max<std::size_t>(2, static_cast<std::size_t>(std::floor(sig.sample_rate / p.fmax)));
    if (fr.window < 2 * tau_max) {
        throw ConfigError("fmin out of range: window must hold at least two periods of fmin");
    }
    const std::size_t span = fr.window - tau_max;
    // Largest confidence still counted as unvoiced.
    const double below_cutoff = std::nextafter(p.voicing_cutoff, 0.0);

    AcousticCurve curve;
    curve.attribute = Attribute::pitch_hz;
    curve.confidence.emplace();
    curve.voicing_cutoff = p.voicing_cutoff;
    std::vector<double> diff(tau_max + 2, 0.0);
    std::vector<double> cmnd(tau_max + 2, 1.0);

    for (std::size_t i = 0; i < fr.count; ++i) {
        const double* x = sig.samples.data() + i * fr.hop;
        for (std::size_t tau = 1; tau <= tau_max; ++tau) {
            double acc = 0.0;
            for (std::size_t j = 0; j < span; ++j) {
                const double d = x[j] - x[j + tau];
                acc += d * d;
            }
            diff[tau] = acc;
        }
        double running = 0.0;
        bool silent = true;
        cmnd[0] = 1.0;
        for (std::size_t tau = 1; tau <= tau_max; ++tau) {
            running += diff[tau];
            if (running > 0.0) {
                silent = false;
                cmnd[tau] = diff[tau] * double(tau) / running;
            } else {
                cmnd[tau] = 1.0;
            }
        }
        curve.times.push_back(window_center(fr, i, sig.sample_rate));
        if (silent) {
            curve.values.push_back(0.0);
            curve.confidence->push_back(0.0);
            continue;
        }

        std::size_t best = 0;
        for (std::size_t tau = tau_min; tau <= tau_max; ++tau) {
            if (cmnd[tau] < p.threshold) {
                while (tau + 1 <= tau_max && cmnd[tau + 1] < cmnd[tau]) {
                    ++tau;
                }
                best = tau;
                break;
            }
        }
        const bool dipped = best != 0;
        if (!dipped) {
            best = tau_min;
            for (std::size_t tau = tau_min; tau <= tau_max; ++tau) {
                if (cmnd[tau] < cmnd[best]) {
                    best = tau;
                }
            }
        }

        double refined = double(best);
        if (best > 1 && best < tau_max) {
            const double a = diff[best - 1];
            const double b = diff[best];
            const double c = diff[best + 1];
            const double denom = a - 2.0 * b + c;
            if (denom > 0.0) {
                refined += std::clamp(0.5 * (a - c) / denom, -1.0, 1.0);
            }
        }
        double conf = std::clamp(1.0 - cmnd[best], 0.0, 1.0);
        if (!dipped) {
            conf = std::min(conf, below_cutoff);
        }
        curve.values.push_back(sig.sample_rate / refined);
        curve.confidence->push_back(conf);
    }
    return curve;
}

AlignedValues align_to_frames(const AcousticCurve& curve, double frame_rate, long long frames)
{
    if (frames <= 0) {
        throw ConfigError("frame count must be positive");
    }
    if (curve.times.empty() || curve.times.size() != curve.values.size()) {
        throw ConfigError("cannot align an empty curve");
    }
    if (!(frame_rate > 0.0)) {
        throw ConfigError("frame rate must be positive");
    }
    const auto& times = curve.times;
    const double hop = times.size() >= 2 ? times[1] - times[0] : std::numeric_limits<double>::infinity();
    const double tolerance = hop * (1.0 + 1e-9);

    AlignedValues out;
    out.values.resize(static_cast<std::size_t>(frames));
    out.mask.resize(static_cast<std::size_t>(frames));
    for (long long t = 0; t < frames; ++t) {
        const double center = (double(t) + 0.5) / frame_rate;
        auto it = std::lower_bound(times.begin(), times.end(), center);
        std::size_t idx;
        if (it == times.end()) {
            idx = times.size() - 1;
        } else if (it == times.begin()) {
            idx = 0;
        } else {
            const auto hi = static_cast<std::size_t>(it - times.begin());
            // Ties go to the earlier window.
            idx = (center - times[hi - 1] <= times[hi] - center) ? hi - 1 : hi;
        }
        out.values[t] = curve.values[idx];
        out.mask[t] = std::abs(times[idx] - center) <= tolerance && curve.voiced(idx);
    }
    return out;
}

} // namespace latent_lens
