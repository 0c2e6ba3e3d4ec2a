#include "latent_lens/sae.hpp"

#include "latent_lens/adam.hpp"
#include "latent_lens/error.hpp"
#include "latent_lens/parallel.hpp"
#include "latent_lens/tensor_file.hpp"

#include <algorithm>
#include <cmath>
#include <random>

namespace latent_lens {

namespace {

// Frames per gradient chunk. Fixed so chunk boundaries never depend on threads.
constexpr Eigen::Index kChunk = 64;

// Forward pass over a block of frames (columns).
struct ForwardPass {
    Eigen::MatrixXd z;    // m x n pre-activations
    Eigen::MatrixXd h;    // m x n
    Eigen::RowVectorXd r; // per-frame RMS normalizer
    Eigen::MatrixXd f;    // m x n
    Eigen::MatrixXd err;  // d x n, x_hat - x

    ForwardPass(const SaeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x)
    {
        const double m = double(model.hidden_dim());
        z = (model.W_enc * x).colwise() + model.b_enc;
        h = z.cwiseMax(0.0);
        r = ((h.array().square().colwise().sum() / m) + model.eps).sqrt().matrix();
        f = h.array().rowwise() / r.array();
        err = ((model.W_dec * f).colwise() + model.b_dec) - x;
    }
};

// Summed (not averaged) gradient and loss over the columns of x.
SaeGradients chunk_gradients(const SaeModel& model, const Eigen::Ref<const Eigen::MatrixXd>& x)
{
    const ForwardPass fw(model, x);
    const double m = double(model.hidden_dim());

    SaeGradients g;
    g.mean_loss = fw.err.squaredNorm() + model.lambda * fw.h.sum();

    const Eigen::MatrixXd g_out = 2.0 * fw.err;
    g.W_dec = g_out * fw.f.transpose();
    g.b_dec = g_out.rowwise().sum();

    const Eigen::MatrixXd g_f = model.W_dec.transpose() * g_out;
    // RMSNorm Jacobian: df_i/dh_j = delta_ij / r - h_i h_j / (m r^3).
    Eigen::MatrixXd g_h(g_f.rows(), g_f.cols());
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
        const double r = fw.r(c);
        const double proj = fw.h.col(c).dot(g_f.col(c));
        g_h.col(c) = g_f.col(c) / r - fw.h.col(c) * (proj / (m * r * r * r));
    }
    g_h.array() += model.lambda;
    // ReLU subgradient is 0 at z = 0.
    const Eigen::MatrixXd g_z = (fw.z.array() > 0.0).select(g_h, 0.0);
    g.W_enc = g_z * x.transpose();
    g.b_enc = g_z.rowwise().sum();
    return g;
}

SaeGradients add(SaeGradients a, const SaeGradients& b)
{
    a.W_enc += b.W_enc;
    a.b_enc += b.b_enc;
    a.W_dec += b.W_dec;
    a.b_dec += b.b_dec;
    a.mean_loss += b.mean_loss;
    return a;
}

int resolve_threads(int threads) { return threads > 0 ? threads : worker_limit(); }

} // namespace

void SaeModel::validate() const
{
    const auto d = input_dim();
    const auto m = hidden_dim();
    if (d == 0 || m == 0) {
        throw ConfigError("SAE has empty dimensions");
    }
    if (b_enc.size() != m || W_dec.rows() != d || W_dec.cols() != m || b_dec.size() != d) {
        throw ConfigError("SAE parameter shapes are inconsistent");
    }
    if (!W_enc.allFinite() || !b_enc.allFinite() || !W_dec.allFinite() || !b_dec.allFinite()) {
        throw ConfigError("SAE parameters must be finite");
    }
    if (!(lambda >= 0.0) || !(eps > 0.0)) {
        throw ConfigError("SAE needs lambda >= 0 and eps > 0");
    }
}

Eigen::MatrixXd frames_matrix(const LatentSequence& seq)
{
    Eigen::MatrixXd x(seq.channels, static_cast<Eigen::Index>(seq.frames));
    for (std::uint64_t t = 0; t < seq.frames; ++t) {
        const auto frame = seq.frame(t);
        for (std::uint32_t c = 0; c < seq.channels; ++c) {
            x(c, static_cast<Eigen::Index>(t)) = frame[c];
        }
    }
    return x;
}

Eigen::MatrixXd frames_matrix(const std::vector<LatentSequence>& seqs)
{
    if (seqs.empty()) {
        return {};
    }
    Eigen::Index total = 0;
    for (const auto& s : seqs) {
        if (s.channels != seqs.front().channels) {
            throw ConfigError("inconsistent latent dimensionality");
        }
        total += static_cast<Eigen::Index>(s.frames);
    }
    Eigen::MatrixXd x(seqs.front().channels, total);
    Eigen::Index col = 0;
    for (const auto& s : seqs) {
        x.middleCols(col, static_cast<Eigen::Index>(s.frames)) = frames_matrix(s);
        col += static_cast<Eigen::Index>(s.frames);
    }
    return x;
}

Eigen::VectorXd rms_normalize(const Eigen::VectorXd& h, double eps)
{
    const double r = std::sqrt(h.squaredNorm() / double(h.size()) + eps);
    return h / r;
}

Encoding encode(const SaeModel& model, const Eigen::VectorXd& x)
{
    if (x.size() != model.input_dim()) {
        throw ConfigError("dimension mismatch: SAE expects " + std::to_string(model.input_dim())
            + " inputs, got " + std::to_string(x.size()));
    }
    Encoding e;
    e.h = (model.W_enc * x + model.b_enc).cwiseMax(0.0);
    e.f = rms_normalize(e.h, model.eps);
    return e;
}

Eigen::MatrixXd encode_features(const SaeModel& model, const Eigen::MatrixXd& frames)
{
    if (frames.rows() != model.input_dim()) {
        throw ConfigError("dimension mismatch: SAE expects " + std::to_string(model.input_dim())
            + " channels, got " + std::to_string(frames.rows()));
    }
    const double m = double(model.hidden_dim());
    Eigen::MatrixXd h = ((model.W_enc * frames).colwise() + model.b_enc).cwiseMax(0.0);
    const Eigen::RowVectorXd r = ((h.array().square().colwise().sum() / m) + model.eps).sqrt().matrix();
    h.array().rowwise() /= r.array();
    return h;
}

Eigen::VectorXd decode(const SaeModel& model, const Eigen::VectorXd& f)
{
    if (f.size() != model.hidden_dim()) {
        throw ConfigError("dimension mismatch: SAE decoder expects " + std::to_string(model.hidden_dim())
            + " features, got " + std::to_string(f.size()));
    }
    return model.W_dec * f + model.b_dec;
}

LossParts loss(const SaeModel& model, const Eigen::VectorXd& x)
{
    const auto e = encode(model, x);
    LossParts parts;
    parts.mse = (decode(model, e.f) - x).squaredNorm();
    parts.l1 = model.lambda * e.h.sum();
    parts.total = parts.mse + parts.l1;
    return parts;
}

SaeGradients gradients(const SaeModel& model, const Eigen::MatrixXd& batch, int threads)
{
    if (batch.cols() == 0) {
        throw ConfigError("gradient of an empty batch");
    }
    if (batch.rows() != model.input_dim()) {
        throw ConfigError("dimension mismatch in gradient batch");
    }
    const Eigen::Index n = batch.cols();
    const auto chunks = static_cast<std::size_t>((n + kChunk - 1) / kChunk);
    std::vector<SaeGradients> parts(chunks);
    parallel_for(chunks, resolve_threads(threads), [&](std::size_t i) {
        const Eigen::Index begin = static_cast<Eigen::Index>(i) * kChunk;
        parts[i] = chunk_gradients(model, batch.middleCols(begin, std::min(kChunk, n - begin)));
    });
    SaeGradients g = tree_reduce(std::move(parts), add);
    const double inv = 1.0 / double(n);
    g.W_enc *= inv;
    g.b_enc *= inv;
    g.W_dec *= inv;
    g.b_dec *= inv;
    g.mean_loss *= inv;
    return g;
}

DatasetStats evaluate(const SaeModel& model, const Eigen::MatrixXd& frames, int threads)
{
    if (frames.cols() == 0) {
        throw ConfigError("empty dataset");
    }
    if (frames.rows() != model.input_dim()) {
        throw ConfigError("dimension mismatch: SAE expects " + std::to_string(model.input_dim()) + " channels");
    }
    struct Partial {
        double sq = 0.0;
        double l1 = 0.0;
        double zeros = 0.0;
    };
    const Eigen::Index n = frames.cols();
    const Eigen::Index block = 1024;
    const auto blocks = static_cast<std::size_t>((n + block - 1) / block);
    std::vector<Partial> parts(blocks);
    parallel_for(blocks, resolve_threads(threads), [&](std::size_t i) {
        const Eigen::Index begin = static_cast<Eigen::Index>(i) * block;
        const ForwardPass fw(model, frames.middleCols(begin, std::min(block, n - begin)));
        parts[i].sq = fw.err.squaredNorm();
        parts[i].l1 = fw.h.sum();
        parts[i].zeros = double((fw.h.array() == 0.0).count());
    });
    const Partial total = tree_reduce(std::move(parts), [](Partial a, const Partial& b) {
        a.sq += b.sq;
        a.l1 += b.l1;
        a.zeros += b.zeros;
        return a;
    });
    DatasetStats s;
    s.recon_mse = total.sq / double(n * model.input_dim());
    s.l1_mean = total.l1 / double(n);
    s.sparsity_ratio = total.zeros / double(n * model.hidden_dim());
    return s;
}

SaeModel init_sae(int input_dim, int hidden_dim, double lambda, std::uint64_t seed, double eps)
{
    if (input_dim <= 0 || hidden_dim <= 0) {
        throw ConfigError("SAE dimensions must be positive");
    }
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    SaeModel model;
    model.W_enc.resize(hidden_dim, input_dim);
    const double scale = 1.0 / std::sqrt(double(input_dim));
    for (Eigen::Index i = 0; i < model.W_enc.rows(); ++i) {
        for (Eigen::Index j = 0; j < model.W_enc.cols(); ++j) {
            model.W_enc(i, j) = normal(rng) * scale;
        }
    }
    model.b_enc = Eigen::VectorXd::Zero(hidden_dim);
    // f has unit RMS, so ||f|| = sqrt(m).
    model.W_dec = model.W_enc.transpose() / std::sqrt(double(hidden_dim));
    model.b_dec = Eigen::VectorXd::Zero(input_dim);
    model.lambda = lambda;
    model.eps = eps;
    model.seed = seed;
    return model;
}

TrainResult train(const std::vector<LatentSequence>& sequences, const TrainConfig& cfg)
{
    if (sequences.empty()) {
        throw ConfigError("empty dataset");
    }
    if (!(cfg.learning_rate > 0.0) || cfg.batch_size < 1 || cfg.epochs < 1 || cfg.hidden_dim < 1
        || !(cfg.lambda >= 0.0)) {
        throw ConfigError("invalid training configuration");
    }
    const Eigen::MatrixXd all = frames_matrix(sequences);
    if (all.cols() == 0) {
        throw ConfigError("empty dataset");
    }
    const int d = static_cast<int>(all.rows());
    const int threads = resolve_threads(cfg.threads);

    TrainResult result;
    SaeModel& model = result.model;
    model = init_sae(d, cfg.hidden_dim, cfg.lambda, cfg.seed, cfg.eps);

    const AdamConfig adam{cfg.learning_rate, cfg.beta1, cfg.beta2, 1e-8};
    AdamSlot s_we, s_be, s_wd, s_bd;
    std::int64_t step = 0;
    FrameStream stream(sequences, cfg.seed ^ 0x5eed5eed5eedULL);
    Eigen::MatrixXd batch(d, cfg.batch_size);
    double first_epoch_loss = 0.0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        double loss_sum = 0.0;
        std::int64_t batches = 0;
        for (;;) {
            Eigen::Index filled = 0;
            for (; filled < cfg.batch_size; ++filled) {
                const auto frame = stream.next();
                if (frame.empty()) {
                    break;
                }
                for (int c = 0; c < d; ++c) {
                    batch(c, filled) = frame[c];
                }
            }
            if (filled == 0) {
                break;
            }
            const auto g = gradients(model, batch.leftCols(filled), threads);
            ++step;
            if (!std::isfinite(g.mean_loss) || !g.W_enc.allFinite() || !g.W_dec.allFinite()) {
                throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step "
                    + std::to_string(step) + " (non-finite loss)");
            }
            loss_sum += g.mean_loss;
            ++batches;
            adam_update(model.W_enc, g.W_enc, s_we, adam, step);
            adam_update(model.b_enc, g.b_enc, s_be, adam, step);
            adam_update(model.W_dec, g.W_dec, s_wd, adam, step);
            adam_update(model.b_dec, g.b_dec, s_bd, adam, step);
            if (filled < cfg.batch_size) {
                break;
            }
        }
        stream.next_epoch();

        const double epoch_loss = loss_sum / double(std::max<std::int64_t>(batches, 1));
        if (epoch == 1) {
            first_epoch_loss = epoch_loss;
        } else if (!std::isfinite(epoch_loss) || epoch_loss > 100.0 * first_epoch_loss) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step "
                + std::to_string(step) + " (loss grew 100x over epoch 1)");
        }
        const auto stats = evaluate(model, all, threads);
        if (!std::isfinite(stats.recon_mse)) {
            throw NumericError("training diverged at epoch " + std::to_string(epoch) + ", step "
                + std::to_string(step) + " (non-finite reconstruction)");
        }
        result.metrics.history.push_back({epoch, epoch_loss, stats.recon_mse, stats.l1_mean, stats.sparsity_ratio});
    }

    round_to_f32(model.W_enc);
    round_to_f32(model.b_enc);
    round_to_f32(model.W_dec);
    round_to_f32(model.b_dec);
    const auto final_stats = evaluate(model, all, threads);
    result.metrics.recon_mse = final_stats.recon_mse;
    result.metrics.l1_mean = final_stats.l1_mean;
    result.metrics.sparsity_ratio = final_stats.sparsity_ratio;
    return result;
}

TrainResult train(const DatasetManifest& manifest, const TrainConfig& cfg)
{
    if (manifest.entries.empty()) {
        throw ConfigError("empty dataset");
    }
    return train(load_all_latents(manifest), cfg);
}

double sparsity_ratio(const SaeModel& model, const std::vector<LatentSequence>& sequences)
{
    if (sequences.empty()) {
        throw ConfigError("empty dataset");
    }
    return evaluate(model, frames_matrix(sequences)).sparsity_ratio;
}

double sparsity_ratio(const SaeModel& model, const DatasetManifest& manifest)
{
    if (manifest.entries.empty()) {
        throw ConfigError("empty dataset");
    }
    return sparsity_ratio(model, load_all_latents(manifest));
}

std::vector<GridCell> grid_search(const std::vector<LatentSequence>& sequences, const std::vector<int>& dims,
    const std::vector<double>& lambdas, const TrainConfig& cfg)
{
    if (dims.empty() || lambdas.empty()) {
        throw ConfigError("grid search needs at least one hidden dimension and one lambda");
    }
    std::vector<GridCell> rows;
    for (int m : dims) {
        for (double lambda : lambdas) {
            GridCell cell;
            cell.hidden_dim = m;
            cell.lambda = lambda;
            rows.push_back(cell);
        }
    }
    std::sort(rows.begin(), rows.end(), [](const GridCell& a, const GridCell& b) {
        return std::tie(a.hidden_dim, a.lambda) < std::tie(b.hidden_dim, b.lambda);
    });
    for (auto& cell : rows) {
        TrainConfig c = cfg;
        c.hidden_dim = cell.hidden_dim;
        c.lambda = cell.lambda;
        try {
            const auto r = train(sequences, c);
            cell.recon_mse = r.metrics.recon_mse;
            cell.sparsity_ratio = r.metrics.sparsity_ratio;
        } catch (const Error& e) {
            cell.error = e.what();
        }
    }
    return rows;
}

void save_sae(const SaeModel& model, const std::filesystem::path& path)
{
    model.validate();
    nlohmann::json header = {
        {"format", "sae-v1"},
        {"d", model.input_dim()},
        {"m", model.hidden_dim()},
        {"lambda", model.lambda},
        {"eps", model.eps},
        {"seed", model.seed},
    };
    write_tensor_file(path, header, {model.W_enc, model.b_enc, model.W_dec, model.b_dec});
}

SaeModel load_sae(const std::filesystem::path& path)
{
    const auto file = read_tensor_file(path);
    const auto& h = file.header;
    if (!h.is_object() || h.value("format", "") != "sae-v1") {
        throw FormatError(path.string() + ": not an sae-v1 checkpoint");
    }
    SaeModel model;
    Eigen::Index d = 0;
    Eigen::Index m = 0;
    try {
        d = h.at("d").get<Eigen::Index>();
        m = h.at("m").get<Eigen::Index>();
        model.lambda = h.at("lambda").get<double>();
        model.eps = h.at("eps").get<double>();
        model.seed = h.at("seed").get<std::uint64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": invalid checkpoint header: " + e.what());
    }
    if (d <= 0 || m <= 0) {
        throw FormatError(path.string() + ": invalid checkpoint dimensions");
    }
    std::size_t offset = 0;
    model.W_enc = take_tensor(file, offset, m, d);
    model.b_enc = take_tensor(file, offset, m, 1);
    model.W_dec = take_tensor(file, offset, d, m);
    model.b_dec = take_tensor(file, offset, d, 1);
    if (offset != file.payload.size()) {
        throw FormatError(path.string() + ": corrupt file: trailing checkpoint payload");
    }
    return model;
}

} // namespace latent_lens
