#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "synthaug/dgp.hpp"

using namespace synthaug;

namespace {

WorldConfig small_cfg() {
    WorldConfig c;
    c.d = 16;
    c.r = 3;
    c.n_subjects = 2;
    c.n_functions = 3;
    c.hidden = 4;
    c.sup_samples = 2000;
    return c;
}

/** d = 3, r = 2 with identity-free functions: f(u) = u + W2 relu(W1 u). */
LatentWorld hand_world() {
    LatentWorld w;
    w.d = 3;
    w.r = 2;
    w.eta = 0.7;
    w.U.resize(3, 2);
    w.U << 1.0, 0.0, 0.0, 1.0, -0.5, 0.5;
    w.subjects = {Eigen::Vector2d(0.6, 0.8)};
    FfnWeights l;
    l.W1 = Eigen::MatrixXd::Identity(2, 2);
    l.W2 = Eigen::MatrixXd::Zero(2, 2);
    l.W2(0, 1) = 0.5;
    w.functions = {FunctionStack{{l}}};
    return w;
}

}  // namespace

TEST(World, SeedDeterminismAndUnitSubjects) {
    auto a = sample_world(small_cfg(), 4), b = sample_world(small_cfg(), 4);
    EXPECT_TRUE(a.U == b.U);
    for (std::size_t t = 0; t < a.n_subjects(); ++t) {
        EXPECT_TRUE(a.subjects[t] == b.subjects[t]);
        EXPECT_NEAR(a.subjects[t].norm(), 1.0, 1e-12);
    }
    EXPECT_THROW(sample_world([] { auto c = small_cfg(); c.n_functions = 1; return c; }(), 1), InvalidArgument);
}

TEST(World, EmbeddingNormMoment) {
    WorldConfig c = small_cfg();
    c.d = 500;
    c.r = 64;
    c.n_functions = 2;
    c.sup_samples = 200;
    auto w = sample_world(c, 9);
    EXPECT_NEAR(w.U.rowwise().squaredNorm().mean(), 1.0, 0.1);
}

TEST(World, FunctionsBoundedOnBall) {
    auto w = sample_world(small_cfg(), 5);
    Rng rng(77);
    for (auto& f : w.functions)
        for (int k = 0; k < 5000; ++k) EXPECT_LE(f(ball_sample(w.r, w.bound_radius, rng)).norm(), 1.0 + 1e-12);
    EXPECT_NEAR(w.bound_radius, std::log(16.0), 1e-15);
}

TEST(Joint, HandWorldMatchesDirectSoftmax) {
    auto w = hand_world();
    auto jt = joint_table(w, 0, 0);
    for (int x = 0; x < 3; ++x) {
        double zx = 0, zy = 0;
        Eigen::Vector2d u = w.U.row(x).transpose(), f = u;
        f(0) += 0.5 * std::max(u(1), 0.0);
        for (int k = 0; k < 3; ++k) zx += std::exp(w.U.row(k).dot(w.subjects[0]) / w.eta);
        for (int k = 0; k < 3; ++k) zy += std::exp(w.U.row(k).dot(f) / w.eta);
        for (int y = 0; y < 3; ++y) {
            double p = std::exp(w.U.row(x).dot(w.subjects[0]) / w.eta) / zx * std::exp(w.U.row(y).dot(f) / w.eta) / zy;
            EXPECT_NEAR(jt.probs(x, y), p, 1e-12);
        }
    }
    EXPECT_THROW(joint_table(w, 1, 0), InvalidArgument);
}

TEST(Joint, OrthogonalSubjectGivesUniformMarginal) {
    auto w = hand_world();
    w.U << 1.0, 0.0, 2.0, 0.0, -3.0, 0.0;
    w.subjects = {Eigen::Vector2d(0.0, 1.0)};
    auto px = subject_marginal(w, 0);
    for (int x = 0; x < 3; ++x) EXPECT_NEAR(px(x), 1.0 / 3.0, 1e-15);
}

TEST(Joint, HugeTemperatureIsUniform) {
    auto w = sample_world(small_cfg(), 6);
    w.eta = 1e9;
    auto jt = joint_table(w, 1, 2);
    EXPECT_LT((jt.probs.array() - 1.0 / (16.0 * 16.0)).abs().maxCoeff(), 1e-6);
}

TEST(Joint, NormalizationProperties) {
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto w = sample_world(small_cfg(), s);
        for (std::size_t t = 0; t < w.n_subjects(); ++t)
            for (std::size_t m = 0; m < w.n_functions(); ++m) {
                auto jt = joint_table(w, t, m);
                EXPECT_NEAR(jt.total(), 1.0, 1e-12);
                EXPECT_LT((jt.marginal_x() - subject_marginal(w, t)).cwiseAbs().maxCoeff(), 1e-12);
                auto cond = function_conditional(w, m);
                EXPECT_LT((cond.rowwise().sum().array() - 1.0).abs().maxCoeff(), 1e-12);
                EXPECT_GE(jt.probs.minCoeff(), 0.0);
            }
    }
    Eigen::VectorXd big(3);
    big << 1000.0, 0.0, -1000.0;
    EXPECT_NEAR(softmax(big).sum(), 1.0, 1e-15);
}

TEST(Sampling, FrequenciesMatchTableChiSquare) {
    auto w = hand_world();
    auto jt = joint_table(w, 0, 0);
    Rng rng(12);
    auto pairs = sample_seed_data(w, 0, 0, 100000, rng);
    Eigen::MatrixXd cnt = Eigen::MatrixXd::Zero(3, 3);
    for (auto [x, y] : pairs) cnt(x, y) += 1.0;
    double chi2 = 0.0;
    for (int x = 0; x < 3; ++x)
        for (int y = 0; y < 3; ++y) {
            double e = 1e5 * jt.probs(x, y);
            chi2 += (cnt(x, y) - e) * (cnt(x, y) - e) / e;
        }
    EXPECT_LT(chi2, 26.12);  // 0.999 quantile with 8 degrees of freedom
}

TEST(Sampling, DeterministicAndDegenerate) {
    auto w = hand_world();
    Rng a(3), b(3);
    EXPECT_EQ(sample_seed_data(w, 0, 0, 50, a), sample_seed_data(w, 0, 0, 50, b));
    w.subjects = {Eigen::Vector2d(1.0, 0.0)};
    w.eta = 1e-3;
    Rng c(4);
    int hits = 0;
    for (int k = 0; k < 1000; ++k) hits += sample_pair(w, 0, 0, c).first == 0;
    EXPECT_EQ(hits, 1000);
}

TEST(Kl, IdentityGibbsAndHandValue) {
    JointTable p, q;
    p.probs.resize(2, 2);
    q.probs.resize(2, 2);
    p.probs << 0.1, 0.2, 0.3, 0.4;
    q.probs << 0.25, 0.25, 0.25, 0.25;
    EXPECT_EQ(kl(p, p), 0.0);
    double hand = 0.1 * std::log(0.4) + 0.2 * std::log(0.8) + 0.3 * std::log(1.2) + 0.4 * std::log(1.6);
    EXPECT_NEAR(kl(p, q), hand, 1e-15);
    q.probs << 0.0, 0.5, 0.25, 0.25;
    EXPECT_TRUE(std::isinf(kl(p, q)));
    Rng rng(5);
    for (int t = 0; t < 200; ++t) {
        JointTable a, b;
        a.probs = Eigen::MatrixXd::Random(4, 4).cwiseAbs();
        b.probs = Eigen::MatrixXd::Random(4, 4).cwiseAbs() + Eigen::MatrixXd::Constant(4, 4, 1e-3);
        a.probs /= a.probs.sum();
        b.probs /= b.probs.sum();
        EXPECT_GE(kl(a, b), 0.0);
    }
}

TEST(Margins, SubjectMarginAndFilter) {
    auto w = hand_world();
    w.subjects = {Eigen::Vector2d(1.0, 0.0), Eigen::Vector2d(0.0, 1.0)};
    EXPECT_NEAR(subject_margin(w), 1.0, 1e-15);
    MarginFilter f{0.3, 0.0, 200};
    int tries = 0;
    auto fw = sample_filtered_world(small_cfg(), f, 3, &tries);
    EXPECT_GE(subject_margin(fw), 0.3);
    EXPECT_GE(tries, 1);
    MarginFilter impossible{2.5, 0.0, 3};
    EXPECT_THROW(sample_filtered_world(small_cfg(), impossible, 3), NumericError);
}

TEST(Discretize, QuartilesStableTokensAndConstantColumn) {
    Rng rng(6);
    Dataset ds;
    ds.features.resize(20000, 2);
    for (Eigen::Index i = 0; i < 20000; ++i) {
        ds.features(i, 0) = rng.uniform();
        ds.features(i, 1) = 3.0;
    }
    ds.labels.assign(20000, 0);
    ds.feature_names = {"u", "c"};
    auto [td, cb] = discretize(ds, 4);
    ASSERT_EQ(cb.edges[0].size(), 3u);
    for (int k = 0; k < 3; ++k) EXPECT_NEAR(cb.edges[0][static_cast<std::size_t>(k)], 0.25 * (k + 1), 0.02);
    EXPECT_EQ(cb.bins_of(1), 1);
    EXPECT_EQ(cb.warnings.size(), 1u);
    EXPECT_EQ(apply_codebook(cb, ds).tokens, td.tokens);
    EXPECT_THROW(discretize(ds, 1), InvalidArgument);
}

TEST(Bundle, WorldRoundTrip) {
    auto w = sample_world(small_cfg(), 8);
    auto dir = std::filesystem::temp_directory_path() / "synthaug_world_test";
    std::filesystem::create_directories(dir);
    save_world(w, (dir / "w").string());
    auto v = load_world((dir / "w").string());
    EXPECT_TRUE(v.U == w.U);
    for (std::size_t t = 0; t < 3; ++t) {
        auto a = joint_table(w, t % 2, t), b = joint_table(v, t % 2, t);
        EXPECT_TRUE(a.probs == b.probs);
    }
    std::filesystem::remove_all(dir);
}
