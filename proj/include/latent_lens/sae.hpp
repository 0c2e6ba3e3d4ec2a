#pragma once

#include "latent_lens/latent_io.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace latent_lens {

/// Sparse autoencoder with an RMS normalization after the ReLU:
///
///   h = ReLU(W_enc x + b_enc)
///   f = h / sqrt(mean(h^2) + eps)
///   x_hat = W_dec f + b_dec
///
/// f is what both the decoder and the probes consume. The sparsity penalty is
/// applied to h, before normalization.
struct SaeModel {
    Eigen::MatrixXd W_enc; // m x d
    Eigen::VectorXd b_enc; // m
    Eigen::MatrixXd W_dec; // d x m
    Eigen::VectorXd b_dec; // d
    double lambda = 0.0;
    double eps = 1e-8;
    std::uint64_t seed = 0;

    Eigen::Index input_dim() const { return W_enc.cols(); }
    Eigen::Index hidden_dim() const { return W_enc.rows(); }

    // Throws ConfigError on inconsistent shapes or non-finite parameters.
    void validate() const;
};

struct Encoding {
    Eigen::VectorXd h; // post-ReLU activations
    Eigen::VectorXd f; // RMS-normalized features
};

// Dense d x n matrix of frames, one column per frame.
Eigen::MatrixXd frames_matrix(const LatentSequence& seq);
Eigen::MatrixXd frames_matrix(const std::vector<LatentSequence>& seqs);

Eigen::VectorXd rms_normalize(const Eigen::VectorXd& h, double eps);

Encoding encode(const SaeModel& model, const Eigen::VectorXd& x);
// Normalized features for every column of `frames`.
Eigen::MatrixXd encode_features(const SaeModel& model, const Eigen::MatrixXd& frames);
Eigen::VectorXd decode(const SaeModel& model, const Eigen::VectorXd& f);

struct LossParts {
    double total = 0.0;
    double mse = 0.0; // squared L2 reconstruction error
    double l1 = 0.0;  // lambda * sum(h)
};

LossParts loss(const SaeModel& model, const Eigen::VectorXd& x);

struct SaeGradients {
    Eigen::MatrixXd W_enc;
    Eigen::VectorXd b_enc;
    Eigen::MatrixXd W_dec;
    Eigen::VectorXd b_dec;
    double mean_loss = 0.0;
};

// Exact gradient of the batch-mean loss (columns of `batch` are frames).
// Frames are processed in fixed chunks and reduced in a fixed tree, so the
// result is bitwise independent of `threads`.
SaeGradients gradients(const SaeModel& model, const Eigen::MatrixXd& batch, int threads = 1);

struct TrainConfig {
    int hidden_dim = 512;
    double lambda = 0.01;
    double learning_rate = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    int batch_size = 256;
    int epochs = 20;
    std::uint64_t seed = 0;
    int threads = 0; // 0: process-wide worker limit
    double eps = 1e-8;
};

struct EpochStats {
    int epoch = 0;
    double train_loss = 0.0; // mean minibatch loss during the epoch
    double recon_mse = 0.0;  // end-of-epoch, per element
    double l1_mean = 0.0;    // end-of-epoch mean of sum(h)
    double sparsity_ratio = 0.0;
};

struct SaeMetrics {
    double recon_mse = 0.0;
    double l1_mean = 0.0;
    double sparsity_ratio = 0.0;
    std::vector<EpochStats> history;
};

struct DatasetStats {
    double recon_mse = 0.0;
    double l1_mean = 0.0;
    double sparsity_ratio = 0.0;
};

DatasetStats evaluate(const SaeModel& model, const Eigen::MatrixXd& frames, int threads = 1);

// Initial parameters: Gaussian encoder scaled by 1/sqrt(d), decoder W_enc^T / sqrt(m),
// zero biases.
SaeModel init_sae(int input_dim, int hidden_dim, double lambda, std::uint64_t seed, double eps = 1e-8);

struct TrainResult {
    SaeModel model;
    SaeMetrics metrics;
};

// Adam on minibatches drawn from a seeded frame stream. Parameters are
// rounded to f32 at the end so a saved checkpoint reproduces the model exactly.
TrainResult train(const std::vector<LatentSequence>& sequences, const TrainConfig& cfg);
TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg);

double sparsity_ratio(const SaeModel& model, const std::vector<LatentSequence>& sequences);
double sparsity_ratio(const SaeModel& model, const DatasetManifest& manifest);

struct GridCell {
    int hidden_dim = 0;
    double lambda = 0.0;
    std::optional<double> recon_mse;
    std::optional<double> sparsity_ratio;
    std::string error; // empty on success
};

// Trains one model per (m, lambda) pair with the same seed. Failing cells are
// recorded and the remaining cells still run. Rows sorted by (m, lambda).
std::vector<GridCell> grid_search(const std::vector<LatentSequence>& sequences, const std::vector<int>& dims,
    const std::vector<double>& lambdas, const TrainConfig& cfg);

void save_sae(const SaeModel& model, const std::filesystem::path& path);
SaeModel load_sae(const std::filesystem::path& path);

} // namespace latent_lens
