// Acceptance gates. One PASS/FAIL line per criterion; exit status 1 if any fails.

#include "../support/oracles.hpp"

#include "latent_lens/intervention.hpp"
#include "latent_lens/latent_io.hpp"
#include "latent_lens/probes.hpp"
#include "latent_lens/progress.hpp"
#include "latent_lens/quantization.hpp"
#include "latent_lens/sae.hpp"
#include "latent_lens/synth_world.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

using namespace latent_lens;
namespace fs = std::filesystem;

namespace {

// Tolerances and limits.
constexpr double kGradRelTol = 1e-6;
constexpr int kGradModels = 4;
constexpr double kGradSeconds = 10.0;

constexpr double kSoftmaxSumTol = 1e-9;
constexpr double kCompletenessRelTol = 1e-9;
constexpr int kIdentityProbes = 100;
constexpr double kIdentitySeconds = 5.0;

constexpr double kSineRms = 0.70710678118654752;
constexpr double kSineRmsTol = 1e-3;
constexpr double kYinTolHz = 1.0;
constexpr double kOctaveErrorMax = 0.05;
constexpr double kDspSeconds = 30.0;

constexpr double kSparseLambdaLow = 0.005;
constexpr double kSparseLambdaHigh = 0.15;
constexpr double kSparsitySeconds = 300.0;

constexpr double kPitchAccuracyMin = 0.90;
constexpr double kScalarAccuracyMin = 0.80;
constexpr double kProbeSeconds = 300.0;

constexpr double kNoOpTol = 1e-6;
constexpr double kArgmaxRateMin = 0.80;
constexpr double kSteerSeconds = 120.0;

constexpr int kTrajectories = 20;
constexpr int kSteps = 32;
constexpr double kMonotoneTol = 0.05;
constexpr double kProgressSeconds = 120.0;
constexpr double kFormatSeconds = 60.0;

// Pipeline world and models.
constexpr std::uint64_t kWorldSeed = 7;
constexpr double kWorldSigma = 0.002;
constexpr int kItems = 600;
constexpr int kTrainItems = 480;
constexpr int kSaeWidth = 512;
constexpr double kSaeLambda = 0.01;
constexpr int kSaeEpochs = 40;
constexpr int kLinearClasses = 20;
constexpr int kSteerTarget = 17;
const std::vector<double> kAlphas = {0.0, 1.0, 10.0, 20.0, 30.0};

int failures = 0;

struct Outcome {
    bool pass = true;
    std::ostringstream detail;

    void require(bool ok, const std::string& what)
    {
        if (!ok) {
            pass = false;
            detail << " [failed: " << what << "]";
        }
    }
};

void report(const std::string& name, double limit_s, const std::function<void(Outcome&)>& body)
{
    Outcome o;
    const auto t0 = std::chrono::steady_clock::now();
    try {
        body(o);
    } catch (const std::exception& e) {
        o.pass = false;
        o.detail << " [exception: " << e.what() << "]";
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    o.require(s < limit_s, "runtime");
    if (!o.pass) {
        ++failures;
    }
    std::printf("%s %s:%s (%.1f s, limit %.0f s)\n", o.pass ? "PASS" : "FAIL", name.c_str(), o.detail.str().c_str(), s,
        limit_s);
    std::fflush(stdout);
}

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

struct World {
    WorldConfig cfg;
    std::vector<LatentSequence> latents;
    std::vector<std::vector<FrameTruth>> truth;
};

World make_world(int items, std::uint64_t seed, double sigma)
{
    World w;
    w.cfg.seed = seed;
    w.cfg.noise_sigma = sigma;
    w.cfg = fit_truth_ranges(w.cfg, items);
    for (int i = 0; i < items; ++i) {
        const auto item = synth_item(w.cfg, static_cast<std::uint64_t>(i));
        w.latents.push_back(synth_latents(item.truth, w.cfg, static_cast<std::uint64_t>(i)));
        w.truth.push_back(item.truth);
    }
    return w;
}

double truth_value(const FrameTruth& t, Attribute a)
{
    switch (a) {
    case Attribute::pitch_hz:
        return t.pitch_hz;
    case Attribute::rms:
        return t.rms;
    default:
        return t.centroid_hz;
    }
}

LabeledFeatures labeled(const SaeModel& sae, const World& w, int first, int last, Attribute a, const BinSpec& bins)
{
    std::vector<LatentSequence> seqs(w.latents.begin() + first, w.latents.begin() + last);
    LabeledFeatures d;
    d.features = encode_features(sae, frames_matrix(seqs));
    for (int i = first; i < last; ++i) {
        for (const auto& t : w.truth[static_cast<std::size_t>(i)]) {
            d.labels.push_back(classify(truth_value(t, a), bins));
            d.mask.push_back(true);
        }
    }
    return d;
}

BinSpec bins_for(const World& w, Attribute a)
{
    if (a == Attribute::pitch_hz) {
        BinSpec b = default_pitch_bins();
        b.K = w.cfg.pitch_classes;
        b.midi_min = w.cfg.pitch_midi_min;
        return b;
    }
    std::vector<double> values;
    for (int i = 0; i < kTrainItems; ++i) {
        for (const auto& t : w.truth[static_cast<std::size_t>(i)]) {
            values.push_back(truth_value(t, a));
        }
    }
    return fit_linear_bins(a, values, std::vector<bool>(values.size(), true), kLinearClasses);
}

struct Pipeline {
    World world;
    SaeModel sae;
    std::vector<Probe> probes; // pitch, rms, centroid
};

std::optional<Pipeline> pipeline;

void gradient_gate(Outcome& o)
{
    double worst = 0.0;
    for (int i = 0; i < kGradModels; ++i) {
        const auto model = oracles::random_sae(8, 32, 100 + static_cast<std::uint64_t>(i));
        const auto batch = oracles::random_batch(8, 16, 200 + static_cast<std::uint64_t>(i));
        worst = std::max(worst, oracles::gradient_check(model, batch));
    }
    o.detail << " max relative error " << fmt(worst) << " over " << kGradModels << " models (d=8, m=32)";
    o.require(worst <= kGradRelTol, "gradient error");
}

void identity_gate(Outcome& o)
{
    std::mt19937_64 rng(11);
    std::normal_distribution<double> n(0.0, 1.0);
    double worst_sum = 0.0;
    double worst_completeness = 0.0;
    for (int i = 0; i < kIdentityProbes; ++i) {
        const int K = 2 + i % 40;
        const int m = 16 + i % 50;
        Probe p;
        p.W.resize(K, m);
        p.b.resize(K);
        const double scale = i % 10 == 0 ? 50.0 : 1.0;
        for (Eigen::Index j = 0; j < p.W.size(); ++j) {
            p.W.data()[j] = scale * n(rng);
        }
        for (Eigen::Index j = 0; j < K; ++j) {
            p.b(j) = scale * n(rng);
        }
        Eigen::VectorXd f(m);
        for (Eigen::Index j = 0; j < m; ++j) {
            f(j) = std::max(0.0, n(rng));
        }
        const auto out = probe_forward(p, f);
        worst_sum = std::max(worst_sum, std::abs(out.p.sum() - 1.0));
        for (Eigen::Index k = 0; k < K; ++k) {
            double total = p.b(k);
            for (Eigen::Index j = 0; j < m; ++j) {
                total += contribution(p, f, j, k);
            }
            const double denom = std::max(std::abs(out.logits(k)), 1e-300);
            worst_completeness = std::max(worst_completeness, std::abs(total - out.logits(k)) / denom);
        }
    }
    bool endpoints = true;
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < 200; ++i) {
        Eigen::VectorXd p0(8);
        Eigen::VectorXd pT(8);
        for (int k = 0; k < 8; ++k) {
            p0(k) = u(rng);
            pT(k) = k < 2 ? p0(k) : u(rng);
        }
        p0 /= p0.sum();
        pT /= pT.sum();
        if (i % 4 == 0) {
            pT(0) = p0(0);
        }
        endpoints = endpoints && progress_score(p0, p0, pT).score == 0.0 && progress_score(pT, p0, pT).score == 1.0;
    }
    o.detail << " softmax sum error " << fmt(worst_sum) << ", completeness error " << fmt(worst_completeness)
             << " on " << kIdentityProbes << " probes, progress endpoints " << (endpoints ? "exact" : "inexact");
    o.require(worst_sum <= kSoftmaxSumTol, "softmax sum");
    o.require(worst_completeness <= kCompletenessRelTol, "completeness");
    o.require(endpoints, "progress endpoints");
}

void dsp_gate(Outcome& o)
{
    const int sr = 16000;
    double rms_err = 0.0;
    for (double v : frame_rms(oracles::sine(500.0, 1.0, 1.0, sr), 0.128, 0.032).values) {
        rms_err = std::max(rms_err, std::abs(v - kSineRms));
    }
    const double bin = sr / 2048.0;
    double centroid_err = 0.0;
    for (double v : spectral_centroid(oracles::sine(1000.0, 0.7, 1.0, sr), 0.128, 0.032).values) {
        centroid_err = std::max(centroid_err, std::abs(v - 1000.0));
    }
    const YinParams yin{2048.0 / sr, 512.0 / sr, 50.0, 2000.0, 0.1, 0.5};
    const auto curve = yin_pitch(oracles::sine(440.0, 0.5, 1.0, sr), yin);
    double yin_err = 0.0;
    for (std::size_t i = 0; i < curve.values.size(); ++i) {
        yin_err = std::max(yin_err, curve.voiced(i) ? std::abs(curve.values[i] - 440.0) : 1e9);
    }
    const auto octave = oracles::harmonic_suite_octave_errors();
    o.detail << " sine rms error " << fmt(rms_err) << ", centroid error " << fmt(centroid_err) << " Hz (bin "
             << fmt(bin) << "), yin error " << fmt(yin_err) << " Hz, octave-error rate " << fmt(octave.rate())
             << " over " << octave.windows << " windows";
    o.require(rms_err <= kSineRmsTol, "rms");
    o.require(centroid_err <= bin, "centroid");
    o.require(yin_err <= kYinTolHz, "yin");
    o.require(octave.rate() < kOctaveErrorMax, "octave errors");
}

void sparsity_gate(Outcome& o)
{
    const World w = make_world(120, 3, 0.01);
    for (int m : {128, 512}) {
        TrainConfig cfg;
        cfg.hidden_dim = m;
        cfg.epochs = 10;
        cfg.seed = 5;
        cfg.lambda = kSparseLambdaLow;
        const double low = train(w.latents, cfg).metrics.sparsity_ratio;
        cfg.lambda = kSparseLambdaHigh;
        const double high = train(w.latents, cfg).metrics.sparsity_ratio;
        o.detail << " m=" << m << ": " << fmt(low) << " (lambda " << kSparseLambdaLow << ") vs " << fmt(high)
                 << " (lambda " << kSparseLambdaHigh << ");";
        o.require(high >= low, "trend at m=" + std::to_string(m));
    }
}

void probe_gate(Outcome& o)
{
    Pipeline p;
    p.world = make_world(kItems, kWorldSeed, kWorldSigma);
    TrainConfig cfg;
    cfg.hidden_dim = kSaeWidth;
    cfg.lambda = kSaeLambda;
    cfg.epochs = kSaeEpochs;
    cfg.seed = 1;
    const std::vector<LatentSequence> train_seqs(p.world.latents.begin(), p.world.latents.begin() + kTrainItems);
    p.sae = train(train_seqs, cfg).model;
    for (Attribute a : {Attribute::pitch_hz, Attribute::rms, Attribute::centroid_hz}) {
        const auto bins = bins_for(p.world, a);
        const auto train_set = labeled(p.sae, p.world, 0, kTrainItems, a, bins);
        Probe probe = train_probe(train_set, ProbeTrainConfig{}, bins);
        probe.attribute = a;
        const double acc = accuracy(probe, labeled(p.sae, p.world, kTrainItems, kItems, a, bins));
        const double min = a == Attribute::pitch_hz ? kPitchAccuracyMin : kScalarAccuracyMin;
        o.detail << " " << to_string(a) << " " << fmt(acc) << " (>= " << min << ");";
        o.require(acc >= min, to_string(a));
        p.probes.push_back(std::move(probe));
    }
    pipeline = std::move(p);
}

void steering_gate(Outcome& o)
{
    if (!pipeline) {
        throw std::runtime_error("probe pipeline unavailable");
    }
    const auto& p = *pipeline;
    const std::vector<LatentSequence> held(p.world.latents.begin() + kTrainItems, p.world.latents.end());
    const auto rows = alpha_sweep(p.sae, p.probes[0], {p.probes[1], p.probes[2]}, held, kSteerTarget, kAlphas);
    bool monotone = true;
    bool monotone_features = true;
    o.detail << " target class " << kSteerTarget << ", re-encoded p:";
    for (std::size_t i = 0; i < rows.size(); ++i) {
        o.detail << " " << fmt(rows[i].reencoded_target_probability);
        if (i > 0) {
            monotone = monotone && rows[i].reencoded_target_probability >= rows[i - 1].reencoded_target_probability;
            monotone_features = monotone_features && rows[i].target_probability >= rows[i - 1].target_probability;
        }
    }
    const double argmax_rate = rows.back().reencoded_target_argmax_rate;

    const auto w = control_vector(p.probes[0], kSteerTarget);
    const Eigen::MatrixXd f = encode_features(p.sae, frames_matrix(held));
    double noop = 0.0;
    for (Eigen::Index c = 0; c < f.cols(); ++c) {
        noop = std::max(noop, (apply_control(f.col(c), w, 0.0, p.sae.eps) - f.col(c)).cwiseAbs().maxCoeff());
    }
    o.detail << "; argmax rate at alpha 30 " << fmt(argmax_rate) << " (feature readout "
             << fmt(rows.back().target_argmax_rate) << "); off-attribute drift at alpha 30 "
             << fmt(rows.back().reencoded_drift) << "; alpha 0 no-op error " << fmt(noop);
    o.require(monotone, "re-encoded probability not non-decreasing");
    o.require(monotone_features, "feature probability not non-decreasing");
    o.require(argmax_rate >= kArgmaxRateMin, "argmax rate");
    o.require(noop <= kNoOpTol, "alpha 0 no-op");
}

void progress_gate(Outcome& o)
{
    if (!pipeline) {
        throw std::runtime_error("probe pipeline unavailable");
    }
    const auto& p = *pipeline;
    std::vector<std::vector<ProgressReport>> per_probe(p.probes.size());
    bool endpoints = true;
    for (int i = 0; i < kTrajectories; ++i) {
        const auto& final_latent = p.world.latents[static_cast<std::size_t>(kTrainItems + i)];
        const auto reports = trajectory_report(trajectory(final_latent, kSteps, 1000 + static_cast<std::uint64_t>(i)),
            p.sae, p.probes);
        for (std::size_t k = 0; k < reports.size(); ++k) {
            endpoints = endpoints && reports[k].scores.front() == 0.0 && reports[k].scores.back() == 1.0;
            per_probe[k].push_back(reports[k]);
        }
    }
    for (const auto& reports : per_probe) {
        const auto agg = aggregate(reports);
        const auto ref = monotone_fit(agg.mean);
        double gap = 0.0;
        bool finite = true;
        for (std::size_t t = 0; t < agg.mean.size(); ++t) {
            gap = std::max(gap, std::abs(agg.mean[t] - ref[t]));
            finite = finite && std::isfinite(agg.std[t]);
        }
        o.detail << " " << to_string(agg.attribute) << " gap " << fmt(gap) << ", s_16 " << fmt(agg.mean[kSteps / 2])
                 << ";";
        o.require(gap <= kMonotoneTol, to_string(agg.attribute) + " monotone gap");
        o.require(finite, to_string(agg.attribute) + " std");
        o.require(agg.mean.front() == 0.0 && agg.mean.back() == 1.0, to_string(agg.attribute) + " mean endpoints");
    }
    o.detail << " endpoints " << (endpoints ? "exact" : "inexact") << " on " << kTrajectories << " trajectories, T="
             << kSteps;
    o.require(endpoints, "endpoints");
}

std::vector<std::uint8_t> file_bytes(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void format_gate(Outcome& o)
{
    const fs::path golden = LATENT_LENS_GOLDEN_DIR;
    LatentSequence zero{1, 1, 25.0, {0.0f}, {}};
    LatentSequence ramp{2, 3, 75.0, {0.5f, -1.0f, 1.5f, -2.0f, 2.5f, -3.0f}, {}};
    const bool golden_ok = encode_latent(zero) == file_bytes(golden / "c1_f1_zero.alt")
        && encode_latent(ramp) == file_bytes(golden / "c2_f3_ramp.alt")
        && read_latent(golden / "c2_f3_ramp.alt").data == ramp.data;

    const fs::path dir = fs::temp_directory_path() / ("latent_lens_acceptance_" + std::to_string(std::random_device{}()));
    fs::create_directories(dir);
    WorldConfig cfg;
    cfg.segments_per_item = 2;
    cfg.seed = 4;
    const auto manifest = make_dataset(3, cfg, dir / "data");
    const std::string cmd = std::string("\"") + LATENT_LENS_PYTHON + "\" \"" + LATENT_LENS_SCHEMA_TOOL + "\" \""
        + LATENT_LENS_SCHEMA_DIR + "\" \"" + (dir / "data").string() + "\" > \"" + (dir / "schema.log").string()
        + "\" 2>&1";
    const bool schema_ok = std::system(cmd.c_str()) == 0;

    const auto sae = oracles::random_sae(32, 64, 9);
    SaeModel rounded = sae;
    for (auto* t : {&rounded.W_enc, &rounded.W_dec}) {
        *t = t->cast<float>().cast<double>();
    }
    rounded.b_enc = rounded.b_enc.cast<float>().cast<double>();
    rounded.b_dec = rounded.b_dec.cast<float>().cast<double>();
    save_sae(rounded, dir / "sae.bin");
    const auto sae_back = load_sae(dir / "sae.bin");
    const Eigen::MatrixXd frames = frames_matrix(load_all_latents(manifest));
    const Eigen::MatrixXd f = encode_features(rounded, frames);
    bool ckpt_ok = f == encode_features(sae_back, frames);
    for (Eigen::Index c = 0; c < f.cols() && ckpt_ok; ++c) {
        ckpt_ok = decode(rounded, f.col(c)) == decode(sae_back, f.col(c));
    }

    Probe probe;
    probe.attribute = Attribute::pitch_hz;
    probe.bins = default_pitch_bins();
    probe.W = oracles::random_batch(66, 64, 3).cast<float>().cast<double>();
    probe.b = oracles::random_batch(66, 1, 4).col(0).cast<float>().cast<double>();
    save_probe(probe, dir / "probe.bin");
    const auto probe_back = load_probe(dir / "probe.bin");
    ckpt_ok = ckpt_ok && probe_probabilities(probe, f) == probe_probabilities(probe_back, f);
    fs::remove_all(dir);

    o.detail << " golden bytes " << (golden_ok ? "equal" : "differ") << ", manifest schema "
             << (schema_ok ? "valid" : "invalid") << ", checkpoint forward passes "
             << (ckpt_ok ? "bitwise equal" : "differ");
    o.require(golden_ok, "golden");
    o.require(schema_ok, "schema");
    o.require(ckpt_ok, "checkpoint");
}

} // namespace

int main()
{
    report("gradient_correctness", kGradSeconds, gradient_gate);
    report("equation_identities", kIdentitySeconds, identity_gate);
    report("dsp_closed_forms", kDspSeconds, dsp_gate);
    report("sparsity_lambda_trend", kSparsitySeconds, sparsity_gate);
    report("probe_pipeline", kProbeSeconds, probe_gate);
    report("steering_monotonicity", kSteerSeconds, steering_gate);
    report("progress_linear_trajectories", kProgressSeconds, progress_gate);
    report("format_conformance", kFormatSeconds, format_gate);
    std::printf("%s: %d failing\n", failures ? "FAIL" : "PASS", failures);
    return failures ? 1 : 0;
}
