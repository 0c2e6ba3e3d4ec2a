#pragma once

#include "latent_lens/quantization.hpp"

#include <cstdint>
#include <filesystem>
#include <vector>

#include <Eigen/Dense>

namespace latent_lens {

/// Linear softmax classifier from SAE features to the classes of one attribute.
struct Probe {
    Attribute attribute = Attribute::pitch_hz;
    Eigen::MatrixXd W; // K x m
    Eigen::VectorXd b; // K
    BinSpec bins;

    Eigen::Index classes() const { return W.rows(); }
    Eigen::Index feature_dim() const { return W.cols(); }
    void validate() const;
};

struct ProbeOutput {
    Eigen::VectorXd logits;
    Eigen::VectorXd p;
};

// Max-shifted softmax.
Eigen::VectorXd softmax(const Eigen::VectorXd& logits);

ProbeOutput probe_forward(const Probe& probe, const Eigen::VectorXd& f);
// Class probabilities for every column of `features` (K x n).
Eigen::MatrixXd probe_probabilities(const Probe& probe, const Eigen::MatrixXd& features);

// Lowest index wins ties.
Eigen::Index argmax(const Eigen::VectorXd& v);

/// Features paired with labels; frames whose mask is false are ignored
/// everywhere (training, accuracy), whatever their contents.
struct LabeledFeatures {
    Eigen::MatrixXd features; // m x n
    std::vector<int> labels;
    std::vector<bool> mask;

    std::size_t valid_count() const;
};

struct ProbeTrainConfig {
    double learning_rate = 1e-2;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch_size = 256;
    int epochs = 5;
    std::uint64_t seed = 0;
    double l2_penalty = 1e-4;
    bool balance_classes = false; // inverse-frequency loss weights
    int threads = 0;
};

/// Cross-entropy training with Adam. Features are first centered and whitened
/// by the shrunk pooled within-class covariance; weights start at the
/// matching shared-covariance Gaussian classifier, and l2_penalty acts on the
/// weights in those whitened coordinates. The result is folded back so that
/// W and b apply to raw features.
Probe train_probe(const LabeledFeatures& data, const ProbeTrainConfig& cfg, const BinSpec& bins);

double accuracy(const Probe& probe, const LabeledFeatures& data);

// K x K counts, rows = true class, columns = predicted class.
Eigen::MatrixXi confusion_matrix(const Probe& probe, const LabeledFeatures& data);

// W[k][j] * f[j]: how much feature j pushes the logit of class k.
double contribution(const Probe& probe, const Eigen::VectorXd& f, Eigen::Index j, Eigen::Index k);

struct RankedFeature {
    Eigen::Index feature = 0;
    double score = 0.0;
};

// Features ranked by W[k][j] * mean_f[j], descending, ties by index.
std::vector<RankedFeature> top_features(const Probe& probe, Eigen::Index k, std::size_t n, const Eigen::VectorXd& mean_f);

void save_probe(const Probe& probe, const std::filesystem::path& path);
Probe load_probe(const std::filesystem::path& path);

} // namespace latent_lens
