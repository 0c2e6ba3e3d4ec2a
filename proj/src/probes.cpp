#include "latent_lens/probes.hpp"

#include "latent_lens/adam.hpp"
#include "latent_lens/error.hpp"
#include "latent_lens/parallel.hpp"
#include "latent_lens/tensor_file.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>

namespace latent_lens {

namespace {

constexpr Eigen::Index kChunk = 64;
// Ridge added to the within-class covariance before whitening, relative to the mean feature variance.
constexpr double kWhitenFloor = 1e-3;
// Initial bias of classes absent from the training set.
constexpr double kUnseenLogit = 30.0;

struct ProbeGradients {
    Eigen::MatrixXd W;
    Eigen::VectorXd b;
    double loss = 0.0;
};

void softmax_columns(Eigen::MatrixXd& logits)
{
    for (Eigen::Index c = 0; c < logits.cols(); ++c) {
        const double shift = logits.col(c).maxCoeff();
        // Terms below exp(-700) are flushed to zero rather than left denormal.
        logits.col(c) = (logits.col(c).array() - shift).max(-700.0).exp().matrix();
        logits.col(c) = (logits.col(c).array() < 1e-300).select(0.0, logits.col(c));
        logits.col(c) /= logits.col(c).sum();
    }
}

} // namespace

void Probe::validate() const
{
    if (W.rows() < 2 || W.cols() < 1 || b.size() != W.rows()) {
        throw ConfigError("probe parameter shapes are inconsistent");
    }
    if (W.rows() != bins.K) {
        throw ConfigError("probe class count does not match its bin spec");
    }
    if (!W.allFinite() || !b.allFinite()) {
        throw ConfigError("probe parameters must be finite");
    }
}

Eigen::VectorXd softmax(const Eigen::VectorXd& logits)
{
    const double shift = logits.maxCoeff();
    Eigen::VectorXd p = (logits.array() - shift).exp().matrix();
    return p / p.sum();
}

ProbeOutput probe_forward(const Probe& probe, const Eigen::VectorXd& f)
{
    if (f.size() != probe.feature_dim()) {
        throw ConfigError("dimension mismatch: probe expects " + std::to_string(probe.feature_dim())
            + " features, got " + std::to_string(f.size()));
    }
    ProbeOutput out;
    out.logits = probe.W * f + probe.b;
    out.p = softmax(out.logits);
    return out;
}

Eigen::MatrixXd probe_probabilities(const Probe& probe, const Eigen::MatrixXd& features)
{
    if (features.rows() != probe.feature_dim()) {
        throw ConfigError("dimension mismatch: probe expects " + std::to_string(probe.feature_dim()) + " features");
    }
    Eigen::MatrixXd p = (probe.W * features).colwise() + probe.b;
    softmax_columns(p);
    return p;
}

Eigen::Index argmax(const Eigen::VectorXd& v)
{
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i) {
        if (v(i) > v(best)) {
            best = i;
        }
    }
    return best;
}

std::size_t LabeledFeatures::valid_count() const
{
    return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), true));
}

Probe train_probe(const LabeledFeatures& data, const ProbeTrainConfig& cfg, const BinSpec& bins)
{
    bins.validate();
    if (data.labels.size() != static_cast<std::size_t>(data.features.cols()) || data.mask.size() != data.labels.size()) {
        throw ConfigError("features, labels and mask differ in length");
    }
    if (!(cfg.learning_rate > 0.0) || cfg.batch_size < 1 || cfg.epochs < 1) {
        throw ConfigError("invalid probe training configuration");
    }
    std::vector<Eigen::Index> valid;
    std::set<int> observed;
    for (std::size_t i = 0; i < data.labels.size(); ++i) {
        if (data.mask[i]) {
            if (data.labels[i] < 0 || data.labels[i] >= bins.K) {
                throw ConfigError("label out of range for bin spec");
            }
            valid.push_back(static_cast<Eigen::Index>(i));
            observed.insert(data.labels[i]);
        }
    }
    if (valid.empty()) {
        throw ConfigError("no valid frames to train the probe on");
    }
    if (observed.size() < 2) {
        throw NumericError("degenerate labels: only one class observed");
    }

    const Eigen::Index m = data.features.rows();
    const Eigen::Index K = bins.K;
    // Gather only the valid frames so masked ones can never leak in.
    Eigen::MatrixXd x(m, static_cast<Eigen::Index>(valid.size()));
    std::vector<int> y(valid.size());
    for (std::size_t i = 0; i < valid.size(); ++i) {
        x.col(static_cast<Eigen::Index>(i)) = data.features.col(valid[i]);
        y[i] = data.labels[static_cast<std::size_t>(valid[i])];
    }
    if (!x.allFinite()) {
        throw ConfigError("probe features must be finite");
    }

    Eigen::VectorXd class_weight = Eigen::VectorXd::Ones(K);
    if (cfg.balance_classes) {
        Eigen::VectorXd counts = Eigen::VectorXd::Zero(K);
        for (int label : y) {
            counts(label) += 1.0;
        }
        for (Eigen::Index k = 0; k < K; ++k) {
            class_weight(k) = counts(k) > 0 ? double(y.size()) / (double(observed.size()) * counts(k)) : 0.0;
        }
    }

    // Optimize in coordinates whitened by the pooled within-class covariance,
    // z = P (f - mu) with P = (S_w + delta I)^(-1/2); W = V P, b = c0 - W mu.
    const Eigen::VectorXd mu = x.rowwise().mean();
    x.colwise() -= mu;
    Eigen::MatrixXd class_mean = Eigen::MatrixXd::Zero(m, K);
    Eigen::VectorXd class_count = Eigen::VectorXd::Zero(K);
    for (std::size_t i = 0; i < y.size(); ++i) {
        class_mean.col(y[i]) += x.col(static_cast<Eigen::Index>(i));
        class_count(y[i]) += 1.0;
    }
    for (Eigen::Index k = 0; k < K; ++k) {
        if (class_count(k) > 0) {
            class_mean.col(k) /= class_count(k);
        }
    }
    Eigen::MatrixXd resid = x;
    for (std::size_t i = 0; i < y.size(); ++i) {
        resid.col(static_cast<Eigen::Index>(i)) -= class_mean.col(y[i]);
    }
    const Eigen::MatrixXd within = (resid * resid.transpose()) / double(x.cols());
    const double total_var = x.squaredNorm() / double(x.cols());
    const double delta = std::max(kWhitenFloor * total_var / double(m), 1e-300);
    const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(within);
    const Eigen::VectorXd scale = (eig.eigenvalues().array().max(0.0) + delta).rsqrt().matrix();
    const Eigen::MatrixXd P = eig.eigenvectors() * scale.asDiagonal() * eig.eigenvectors().transpose();
    x = P * x;

    // Start from the shared-covariance Gaussian classifier in these coordinates.
    Eigen::MatrixXd V = Eigen::MatrixXd::Zero(K, m);
    Eigen::VectorXd c0 = Eigen::VectorXd::Constant(K, -kUnseenLogit);
    for (Eigen::Index k = 0; k < K; ++k) {
        if (class_count(k) > 0) {
            V.row(k) = (P * class_mean.col(k)).transpose();
            c0(k) = -0.5 * V.row(k).squaredNorm() + std::log(class_count(k) / double(y.size()));
        }
    }

    const AdamConfig adam{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8};
    AdamSlot s_w, s_b;
    std::int64_t step = 0;
    std::mt19937_64 rng(cfg.seed);
    std::vector<std::size_t> order(valid.size());
    const int threads = cfg.threads > 0 ? cfg.threads : worker_limit();

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::iota(order.begin(), order.end(), std::size_t{0});
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[rng() % i]);
        }
        for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
            const std::size_t n = std::min<std::size_t>(cfg.batch_size, order.size() - start);
            const auto chunks = (n + kChunk - 1) / kChunk;
            std::vector<ProbeGradients> parts(chunks);
            parallel_for(chunks, threads, [&](std::size_t c) {
                const std::size_t lo = start + c * kChunk;
                const std::size_t hi = std::min(start + n, lo + kChunk);
                Eigen::MatrixXd xb(m, static_cast<Eigen::Index>(hi - lo));
                for (std::size_t i = lo; i < hi; ++i) {
                    xb.col(static_cast<Eigen::Index>(i - lo)) = x.col(static_cast<Eigen::Index>(order[i]));
                }
                Eigen::MatrixXd p = (V * xb).colwise() + c0;
                softmax_columns(p);
                ProbeGradients g;
                for (std::size_t i = lo; i < hi; ++i) {
                    const auto col = static_cast<Eigen::Index>(i - lo);
                    const int label = y[order[i]];
                    const double w = class_weight(label);
                    g.loss -= w * std::log(std::max(p(label, col), 1e-300));
                    p.col(col) *= w;
                    p(label, col) -= w;
                }
                g.W = p * xb.transpose();
                g.b = p.rowwise().sum();
                parts[c] = std::move(g);
            });
            ProbeGradients g = tree_reduce(std::move(parts), [](ProbeGradients a, const ProbeGradients& b) {
                a.W += b.W;
                a.b += b.b;
                a.loss += b.loss;
                return a;
            });
            g.W /= double(n);
            g.b /= double(n);
            g.W += 2.0 * cfg.l2_penalty * V;
            if (!g.W.allFinite() || !std::isfinite(g.loss)) {
                throw NumericError("probe training diverged at epoch " + std::to_string(epoch + 1));
            }
            ++step;
            adam_update(V, g.W, s_w, adam, step);
            adam_update(c0, g.b, s_b, adam, step);
        }
    }

    Probe probe;
    probe.attribute = bins.attribute;
    probe.bins = bins;
    probe.W = V * P;
    probe.b = c0 - probe.W * mu;
    round_to_f32(probe.W);
    round_to_f32(probe.b);
    return probe;
}

double accuracy(const Probe& probe, const LabeledFeatures& data)
{
    if (data.mask.size() != static_cast<std::size_t>(data.features.cols()) || data.labels.size() != data.mask.size()) {
        throw ConfigError("features, labels and mask differ in length");
    }
    std::size_t valid = 0;
    std::size_t correct = 0;
    for (Eigen::Index i = 0; i < data.features.cols(); ++i) {
        if (!data.mask[static_cast<std::size_t>(i)]) {
            continue;
        }
        ++valid;
        const Eigen::VectorXd logits = probe.W * data.features.col(i) + probe.b;
        if (argmax(logits) == data.labels[static_cast<std::size_t>(i)]) {
            ++correct;
        }
    }
    if (valid == 0) {
        throw ConfigError("empty evaluation set");
    }
    return double(correct) / double(valid);
}

Eigen::MatrixXi confusion_matrix(const Probe& probe, const LabeledFeatures& data)
{
    Eigen::MatrixXi counts = Eigen::MatrixXi::Zero(probe.classes(), probe.classes());
    for (Eigen::Index i = 0; i < data.features.cols(); ++i) {
        const auto idx = static_cast<std::size_t>(i);
        if (!data.mask[idx] || data.labels[idx] < 0 || data.labels[idx] >= probe.classes()) {
            continue;
        }
        const Eigen::VectorXd logits = probe.W * data.features.col(i) + probe.b;
        counts(data.labels[idx], argmax(logits)) += 1;
    }
    return counts;
}

double contribution(const Probe& probe, const Eigen::VectorXd& f, Eigen::Index j, Eigen::Index k)
{
    if (k < 0 || k >= probe.classes() || j < 0 || j >= probe.feature_dim() || j >= f.size()) {
        throw ConfigError("contribution index out of range");
    }
    return probe.W(k, j) * f(j);
}

std::vector<RankedFeature> top_features(const Probe& probe, Eigen::Index k, std::size_t n, const Eigen::VectorXd& mean_f)
{
    if (k < 0 || k >= probe.classes()) {
        throw ConfigError("class index out of range");
    }
    if (mean_f.size() != probe.feature_dim()) {
        throw ConfigError("dimension mismatch between probe and feature statistics");
    }
    if (n > static_cast<std::size_t>(probe.feature_dim())) {
        throw ConfigError("cannot rank more features than the probe has");
    }
    std::vector<RankedFeature> ranked(static_cast<std::size_t>(probe.feature_dim()));
    for (Eigen::Index j = 0; j < probe.feature_dim(); ++j) {
        ranked[static_cast<std::size_t>(j)] = {j, probe.W(k, j) * mean_f(j)};
    }
    std::stable_sort(ranked.begin(), ranked.end(),
        [](const RankedFeature& a, const RankedFeature& b) { return a.score > b.score; });
    ranked.resize(n);
    return ranked;
}

void save_probe(const Probe& probe, const std::filesystem::path& path)
{
    probe.validate();
    nlohmann::json header = {
        {"format", "probe-v1"},
        {"attribute", to_string(probe.attribute)},
        {"K", probe.classes()},
        {"m", probe.feature_dim()},
        {"bins", to_json(probe.bins)},
    };
    write_tensor_file(path, header, {probe.W, probe.b});
}

Probe load_probe(const std::filesystem::path& path)
{
    const auto file = read_tensor_file(path);
    const auto& h = file.header;
    if (!h.is_object() || h.value("format", "") != "probe-v1") {
        throw FormatError(path.string() + ": not a probe-v1 checkpoint");
    }
    Probe probe;
    Eigen::Index K = 0;
    Eigen::Index m = 0;
    try {
        probe.attribute = attribute_from_string(h.at("attribute").get<std::string>());
        K = h.at("K").get<Eigen::Index>();
        m = h.at("m").get<Eigen::Index>();
        probe.bins = bin_spec_from_json(h.at("bins"));
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid probe header: " + e.what());
    }
    if (K < 2 || m < 1) {
        throw FormatError(path.string() + ": invalid probe dimensions");
    }
    std::size_t offset = 0;
    probe.W = take_tensor(file, offset, K, m);
    probe.b = take_tensor(file, offset, K, 1);
    if (offset != file.payload.size()) {
        throw FormatError(path.string() + ": corrupt file: trailing probe payload");
    }
    probe.validate();
    return probe;
}

} // namespace latent_lens
