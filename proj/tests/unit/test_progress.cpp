#include "test_util.hpp"

#include "../support/oracles.hpp"

#include "latent_lens/error.hpp"
#include "latent_lens/progress.hpp"

#include <cmath>

using namespace latent_lens;

namespace {

Eigen::VectorXd vec(std::initializer_list<double> v)
{
    Eigen::VectorXd out(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double x : v) {
        out(i++) = x;
    }
    return out;
}

Probe small_probe(int K, int m, std::uint64_t seed, double scale)
{
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n(0.0, scale);
    Probe p;
    p.attribute = Attribute::centroid_hz;
    p.bins.attribute = Attribute::centroid_hz;
    p.bins.scheme = BinScheme::linear;
    p.bins.K = K;
    p.bins.v_min = 0.0;
    p.bins.v_max = 8000.0;
    p.W.resize(K, m);
    p.b = Eigen::VectorXd::Zero(K);
    for (Eigen::Index i = 0; i < p.W.size(); ++i) {
        p.W.data()[i] = n(rng);
    }
    return p;
}

LatentSequence sequence_from(const Eigen::MatrixXd& frames)
{
    LatentSequence s;
    s.channels = static_cast<std::uint32_t>(frames.rows());
    s.frames = static_cast<std::uint64_t>(frames.cols());
    s.frame_rate = 25.0;
    for (Eigen::Index t = 0; t < frames.cols(); ++t) {
        for (Eigen::Index c = 0; c < frames.rows(); ++c) {
            s.data.push_back(static_cast<float>(frames(c, t)));
        }
    }
    return s;
}

std::vector<TrajectorySnapshot> snapshots(int T, int d, int frames, std::uint64_t seed)
{
    std::vector<TrajectorySnapshot> out;
    for (int t = 0; t <= T; ++t) {
        out.push_back({t, sequence_from(oracles::random_batch(d, frames, seed + static_cast<std::uint64_t>(t)))});
    }
    return out;
}

ProgressReport report_of(std::vector<double> scores)
{
    ProgressReport r;
    r.attribute = Attribute::rms;
    r.T = static_cast<int>(scores.size()) - 1;
    r.scores = std::move(scores);
    r.excluded.resize(r.scores.size());
    return r;
}

} // namespace

TEST_SUITE("progress")
{
    TEST_CASE("score at the endpoints and the midpoint")
    {
        const auto p0 = vec({0.7, 0.2, 0.1});
        const auto pT = vec({0.1, 0.3, 0.6});
        CHECK(progress_score(p0, p0, pT).score == 0.0);
        CHECK(progress_score(pT, p0, pT).score == 1.0);
        CHECK(progress_score((p0 + pT) / 2.0, p0, pT).score == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(progress_score(p0, p0, pT).excluded.empty());
    }

    TEST_CASE("overshoot is clamped")
    {
        const auto p0 = vec({0.5, 0.5});
        const auto pT = vec({0.6, 0.4});
        const auto s = progress_score(vec({0.9, 0.1}), p0, pT);
        CHECK(s.score == 1.0);
    }

    TEST_CASE("denominator guard")
    {
        const auto p0 = vec({0.5, 0.25, 0.25});
        const auto pT = vec({0.25, 0.5, 0.25});
        const auto s = progress_score(vec({0.4, 0.35, 0.25}), p0, pT);
        CHECK(s.excluded == std::vector<int>{2});
        CHECK(s.score == doctest::Approx(0.4).epsilon(1e-12));
        CHECK(!s.all_excluded);

        const auto none = progress_score(p0, p0, p0);
        CHECK(none.all_excluded);
        CHECK(none.score == 0.0);
        CHECK(none.excluded.size() == 3);

        CHECK_THROWS_AS(progress_score(vec({1.0}), p0, pT), ConfigError);
    }

    TEST_CASE("scores stay in range")
    {
        std::mt19937_64 rng(8);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        auto dist = [&] {
            Eigen::VectorXd p(6);
            for (Eigen::Index k = 0; k < 6; ++k) {
                p(k) = u(rng);
            }
            return Eigen::VectorXd(p / p.sum());
        };
        for (int i = 0; i < 500; ++i) {
            const double s = progress_score(dist(), dist(), dist()).score;
            CHECK(s >= 0.0);
            CHECK(s <= 1.0);
        }
    }

    TEST_CASE("pooled distribution")
    {
        const auto sae = oracles::random_sae(6, 24, 2);
        const auto probe = small_probe(4, 24, 3, 1.0);
        const auto one = oracles::random_batch(6, 1, 4);
        const auto p1 = pooled_distribution(sae, probe, sequence_from(one));
        const auto f = encode_features(sae, frames_matrix(sequence_from(one)));
        CHECK((p1 - probe_forward(probe, f.col(0)).p).cwiseAbs().maxCoeff() <= 1e-15);

        const auto many = frames_matrix(sequence_from(oracles::random_batch(6, 17, 5)));
        const auto p = pooled_distribution(sae, probe, sequence_from(many));
        CHECK(p.sum() == doctest::Approx(1.0).epsilon(1e-9));
        const auto each = probe_probabilities(probe, encode_features(sae, many));
        CHECK((p - each.rowwise().mean()).cwiseAbs().maxCoeff() <= 1e-12);

        Probe uniform = probe;
        uniform.W.setZero();
        uniform.b.setConstant(0.3);
        const auto pu = pooled_distribution(sae, uniform, sequence_from(many));
        for (Eigen::Index k = 0; k < 4; ++k) {
            CHECK(pu(k) == doctest::Approx(0.25).epsilon(1e-15));
        }

        LatentSequence empty;
        empty.channels = 6;
        empty.frame_rate = 25.0;
        CHECK_THROWS_AS(pooled_distribution(sae, probe, empty), ConfigError);
        CHECK_THROWS_AS(pooled_distribution(sae, probe, sequence_from(oracles::random_batch(5, 3, 1))), ConfigError);
    }

    TEST_CASE("two frames with opposite certainties pool to one half")
    {
        // Identity-like SAE with two features; a steep probe makes each frame certain.
        SaeModel sae;
        sae.W_enc = Eigen::MatrixXd::Identity(2, 2);
        sae.b_enc = Eigen::VectorXd::Zero(2);
        sae.W_dec = Eigen::MatrixXd::Identity(2, 2);
        sae.b_dec = Eigen::VectorXd::Zero(2);
        Probe probe = small_probe(2, 2, 1, 1.0);
        probe.W << 1000.0, -1000.0, -1000.0, 1000.0;
        Eigen::MatrixXd frames(2, 2);
        frames << 1.0, 0.0, 0.0, 1.0;
        const auto p = pooled_distribution(sae, probe, sequence_from(frames));
        CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-12));
        CHECK(p(1) == doctest::Approx(0.5).epsilon(1e-12));
    }

    TEST_CASE("trajectory endpoints are exact")
    {
        const auto sae = oracles::random_sae(6, 24, 2);
        const std::vector<Probe> probes = {small_probe(4, 24, 3, 1.0), small_probe(7, 24, 4, 1.0)};
        const auto endpoints = trajectory_report(snapshots(1, 6, 10, 20), sae, probes);
        REQUIRE(endpoints.size() == 2);
        for (const auto& r : endpoints) {
            CHECK(r.T == 1);
            CHECK(r.scores == std::vector<double>{0.0, 1.0});
        }
        const auto longer = trajectory_report(snapshots(9, 6, 10, 30), sae, probes);
        for (const auto& r : longer) {
            CHECK(r.scores.front() == 0.0);
            CHECK(r.scores.back() == 1.0);
            CHECK(r.excluded.size() == 10);
        }
    }

    TEST_CASE("snapshot order does not matter")
    {
        const auto sae = oracles::random_sae(6, 24, 2);
        const std::vector<Probe> probes = {small_probe(4, 24, 3, 1.0)};
        auto snaps = snapshots(5, 6, 8, 40);
        const auto a = trajectory_report(snaps, sae, probes);
        std::reverse(snaps.begin(), snaps.end());
        CHECK(trajectory_report(snaps, sae, probes)[0].scores == a[0].scores);
    }

    TEST_CASE("trajectory errors")
    {
        const auto sae = oracles::random_sae(6, 24, 2);
        const std::vector<Probe> probes = {small_probe(4, 24, 3, 1.0)};
        auto gap = snapshots(4, 6, 8, 50);
        gap.erase(gap.begin() + 2);
        CHECK_THROWS_WITH_AS(trajectory_report(gap, sae, probes), doctest::Contains("missing step 2"), FormatError);

        auto dup = snapshots(3, 6, 8, 50);
        dup[2].step = 1;
        CHECK_THROWS_WITH_AS(trajectory_report(dup, sae, probes), doctest::Contains("duplicate step 1"), FormatError);

        auto shapes = snapshots(3, 6, 8, 50);
        shapes[3].latent = sequence_from(oracles::random_batch(6, 9, 1));
        CHECK_THROWS_AS(trajectory_report(shapes, sae, probes), FormatError);

        CHECK_THROWS_AS(trajectory_report(snapshots(0, 6, 8, 50), sae, probes), FormatError);
    }

    TEST_CASE("constant trajectory warns")
    {
        const auto sae = oracles::random_sae(6, 24, 2);
        const std::vector<Probe> probes = {small_probe(4, 24, 3, 1.0)};
        auto snaps = snapshots(3, 6, 8, 60);
        for (auto& s : snaps) {
            s.latent = snaps[0].latent;
        }
        const auto r = trajectory_report(snaps, sae, probes)[0];
        CHECK(r.scores == std::vector<double>(4, 0.0));
        CHECK(r.warnings.size() == 1);
    }

    TEST_CASE("aggregate")
    {
        const auto single = aggregate({report_of({0.0, 0.3, 1.0})});
        CHECK(single.mean == std::vector<double>{0.0, 0.3, 1.0});
        CHECK(single.std == std::vector<double>{0.0, 0.0, 0.0});

        const std::vector<double> s = {0.0, 0.2, 0.9, 0.4};
        std::vector<double> flipped;
        for (double v : s) {
            flipped.push_back(1.0 - v);
        }
        const auto sym = aggregate({report_of(s), report_of(flipped)});
        for (std::size_t t = 0; t < s.size(); ++t) {
            CHECK(sym.mean[t] == doctest::Approx(0.5).epsilon(1e-15));
            CHECK(sym.std[t] == doctest::Approx(std::abs(s[t] - 0.5)).epsilon(1e-12));
        }

        CHECK_THROWS_AS(aggregate({}), ConfigError);
        CHECK_THROWS_AS(aggregate({report_of({0.0, 1.0}), report_of({0.0, 0.5, 1.0})}), ConfigError);
    }

    TEST_CASE("monotone fit")
    {
        CHECK(monotone_fit({}).empty());
        CHECK(monotone_fit({0.0, 0.2, 0.5, 1.0}) == std::vector<double>{0.0, 0.2, 0.5, 1.0});
        CHECK(monotone_fit({1.0, 0.0}) == std::vector<double>{0.5, 0.5});
        CHECK(monotone_fit({0.0, 0.6, 0.4, 1.0}) == std::vector<double>{0.0, 0.5, 0.5, 1.0});

        std::mt19937_64 rng(3);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int trial = 0; trial < 50; ++trial) {
            std::vector<double> c(33);
            for (auto& v : c) {
                v = u(rng);
            }
            const auto fit = monotone_fit(c);
            REQUIRE(fit.size() == c.size());
            double sum_c = 0.0;
            double sum_f = 0.0;
            for (std::size_t i = 0; i < c.size(); ++i) {
                sum_c += c[i];
                sum_f += fit[i];
                if (i > 0) {
                    CHECK(fit[i] >= fit[i - 1]);
                }
            }
            CHECK(sum_f == doctest::Approx(sum_c).epsilon(1e-12));
            CHECK(monotone_fit(fit) == fit);
        }
    }
}
