// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit if any criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numeric>
#include <sstream>
#include <string>

#include "oracles.hpp"
#include "synthaug/experiments.hpp"

using namespace synthaug;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

/** Accumulates named sub-checks; the first failure is kept for the report. */
struct Checks {
    bool ok = true;
    std::string first_failure;
    long count = 0;
    void expect(bool cond, const std::string& what) {
        ++count;
        if (!cond && ok) {
            ok = false;
            first_failure = what;
        }
    }
};

std::string num(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

std::vector<long> doubling(long lo, long hi) {
    std::vector<long> g;
    for (long n = lo; n <= hi; n *= 2) g.push_back(n);
    return g;
}

// ---------------------------------------------------------------- scaling

Outcome gaussian_slope() {
    GaussianSeqConfig cfg;  // r = 2, p = 3, alpha = 1, no bias
    cfg.delta = 0.0;
    auto fit = fit_curve(gaussian_curve(cfg, doubling(64, 16384), 100, 1));
    return {fit.slope >= -0.95 && fit.slope <= -0.65,
            "slope " + num(fit.slope) + " (target -" + num(cfg.schedule().beta()) + ", window [-0.95, -0.65])"};
}

Outcome fourier_slope() {
    FourierSimConfig cfg;  // d' = 1, r = 2, p = 2
    double beta = cfg.schedule().beta();
    auto fit = fit_curve(fourier_curve(cfg, doubling(64, 16384), 100, 2));
    return {std::abs(fit.slope + beta) <= 0.15, "slope " + num(fit.slope) + " vs -" + num(beta) + " +/- 0.15"};
}

Outcome bias_floor() {
    GaussianSeqConfig cfg;
    cfg.delta = 0.1;
    double floor = gaussian_problem(cfg).bias_floor();
    auto c = gaussian_curve(cfg, {1L << 20}, 100, 3);
    double gap = std::abs(c[0].mean - floor);
    return {gap <= 2.0 * c[0].sd, "risk at N=2^20 " + num(c[0].mean) + ", floor " + num(floor) + ", MC sd " +
                                      num(c[0].sd)};
}

// ---------------------------------------------------------------- transformer generator

Outcome kl_decay() {
    KlExperimentConfig k;
    k.replicates = 50;
    k.seed = 5;
    auto r = kl_decay_experiment(k);
    bool mono = true;
    std::string trace;
    for (std::size_t i = 0; i < r.summary.size(); ++i) {
        if (i > 0 && !(r.summary[i].mean_kl <= r.summary[i - 1].mean_kl)) mono = false;
        trace += (i ? ", " : "") + std::to_string(r.summary[i].n) + ":" + num(r.summary[i].mean_kl);
    }
    double rec = r.summary.back().recovery;
    return {mono && rec >= 0.95, "mean KL " + trace + "; recovery at largest n " + num(rec)};
}

LatentWorld random_small_world(Rng& rng, std::uint64_t seed) {
    WorldConfig c;
    c.d = 2 + static_cast<int>(rng.index(7));
    c.r = 1 + static_cast<int>(rng.index(3));
    c.n_functions = 1 + static_cast<int>(rng.index(3));
    c.n_subjects = 1 + static_cast<int>(rng.index(static_cast<std::size_t>(c.n_functions)));
    c.L0 = 1 + static_cast<int>(rng.index(2));
    c.hidden = 1 + static_cast<int>(rng.index(4));
    c.sup_samples = 500;
    return sample_world(c, seed);
}

Outcome construction_equivalence() {
    Checks ck;
    Rng rng(2024);
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        auto w = random_small_world(rng, 1000 + static_cast<std::uint64_t>(trial));
        double omega = default_omega(w.d, w.r);
        auto st = build_generator(w, omega);
        ck.expect(st.layers.size() == w.functions[0].depth() + 9, "layer count");
        long n = 1 + static_cast<long>(rng.index(5));
        auto seed = sample_seed_data(w, rng.index(w.n_subjects()), rng.index(w.n_functions()), n, rng);
        auto H = oracle::context_with_generated(w, seed, static_cast<int>(rng.index(3)), rng);
        auto g = oracle::generator_states(w, H, n, omega);
        const std::pair<const char*, const Eigen::MatrixXd*> steps[] = {
            {"step1_ffn", &g.step1_ffn}, {"step1", &g.step1}, {"step2", &g.step2}, {"step3", &g.step3},
            {"step4", &g.step4}};
        for (auto [name, expect] : steps) {
            double err = (run_stack(st, H, st.step_end.at(name)) - *expect).cwiseAbs().maxCoeff();
            worst = std::max(worst, err);
            ck.expect(err <= 1e-9, std::string(name) + " mismatch in world " + std::to_string(trial));
        }
    }
    // Min block against the argmin / window-hull oracle.
    for (int trial = 0; trial < 200; ++trial) {
        int M = 2 + static_cast<int>(rng.index(3)), r = 1 + static_cast<int>(rng.index(3));
        TokenLayout L{r, M};
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(L.D(), 3);
        for (Eigen::Index c = 0; c < 3; ++c) {
            auto p = positional(c + 1, 2);
            for (int k = 0; k < 4; ++k) H(L.pos(k), c) = p[static_cast<std::size_t>(k)];
            for (int m = 0; m < M; ++m) H.col(c).segment(L.scratch(m), r) = Eigen::VectorXd::Random(r);
            H.col(c).segment(L.slot(0), M) = 2.0 * Eigen::VectorXd::Random(M);
        }
        for (bool maximize : {false, true}) {
            auto out = run_layers(build_min_block(1.0, M, r, maximize), H);
            for (Eigen::Index c = 0; c < 3; ++c) {
                double err = (out.col(c) - oracle::selection_column(L, H.col(c), 1.0, maximize)).cwiseAbs().maxCoeff();
                worst = std::max(worst, err);
                ck.expect(err <= 1e-9, "min block mismatch");
            }
        }
    }
    // Gated identity.
    double gate_err = 0.0;
    for (int k = 0; k < 100000; ++k) {
        double B = 0.1 + 10.0 * rng.uniform(), x = B * (2.0 * rng.uniform() - 1.0);
        double s = static_cast<double>(rng.index(6)), t = static_cast<double>(rng.index(6));
        gate_err = std::max(gate_err, std::abs(phi_gate(x, s, t, B) - (s == t ? x : 0.0)) / std::max(1.0, B));
    }
    ck.expect(gate_err <= 1e-12, "gated identity error " + num(gate_err));
    return {ck.ok, ck.ok ? "200 worlds and 400 min blocks, max abs error " + num(worst) + "; gate error " +
                               num(gate_err)
                         : ck.first_failure};
}

// ---------------------------------------------------------------- oversampling benefit

Outcome oversampling_benefit() {
    CompareConfig cfg;
    cfg.dataset = "craft";
    cfg.ratios = {6};
    cfg.methods = {"raw", "oracle_llm"};
    cfg.seeds = 5;
    cfg.N = {0, 600};
    cfg.alpha = 1.0 / 3.0;
    auto rows = oversample_compare(cfg, 17);
    std::vector<double> raw, ovs, aug;
    for (auto& r : rows) {
        if (r.method == "raw")
            raw.push_back(r.minority);
        else
            (r.N == 0 ? ovs : aug).push_back(r.minority);
    }
    if (raw.size() != 5 || ovs.size() != 5 || aug.size() != 5) return {false, "unexpected row count"};
    double m_raw = mean_of(raw), m_ovs = mean_of(ovs), s_ovs = sd_of(ovs), m_aug = mean_of(aug);
    return {m_ovs < m_raw && m_aug <= m_ovs + s_ovs,
            "minority CE raw " + num(m_raw) + ", oversampled " + num(m_ovs) + " (sd " + num(s_ovs) + "), augmented " +
                num(m_aug)};
}

// ---------------------------------------------------------------- quality term

std::vector<LinearGroup> shared_cov_world(double shift) {
    Eigen::MatrixXd S(3, 3);
    S << 1.0, 0.2, 0.0, 0.2, 0.5, 0.1, 0.0, 0.1, 2.0;
    Eigen::VectorXd t0(3), t1(3), d(3);
    t0 << 1.0, -0.5, 0.3;
    t1 << 0.4, 0.2, -0.6;
    d << 1.0, -1.0, 0.5;
    return {{"0", 5.0 / 6.0, S, S, t0, t0 + shift * d}, {"1", 0.0, S, S, t1, t1 + shift * d}};
}

Outcome quality_check() {
    auto gs = shared_cov_world(0.3);
    auto tb = linear_theta_bal(gs);
    auto closed = quality_linear_closed(gs, tb);
    std::vector<GroupLaws> laws;
    for (auto& g : gs)
        laws.push_back({g.name, g.rho, linear_gaussian_sampler(g.S, g.theta, 1.0),
                        linear_gaussian_sampler(g.S_tilde, g.theta_tilde, 1.0)});
    auto mc = quality_term_mc(laws, tb, LossKind::Squared, QualityMcConfig{200000, 50, 8, 1});
    Checks ck;
    std::string zs;
    for (auto& [g, q] : closed.q) {
        double z = (q - mc.q.at(g)) / mc.q_se.at(g);
        zs += " " + g + ":z=" + num(z);
        ck.expect(std::abs(z) <= 3.0, "group " + g + " disagrees, z = " + num(z));
    }
    for (auto& g : gs) g.rho = 0.0;
    auto zero = quality_linear_closed(gs, linear_theta_bal(gs));
    for (auto& [g, q] : zero.q) ck.expect(q == 0.0, "rho = 0 gives q = " + num(q));
    return {ck.ok, ck.ok ? "closed vs MC" + zs + "; rho = 0 gives q = 0 exactly" : ck.first_failure};
}

// ---------------------------------------------------------------- identities and normalisation

Dataset random_rows(Rng& rng, std::size_t n, std::size_t d) {
    Dataset ds;
    ds.features.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
    for (Eigen::Index i = 0; i < ds.features.size(); ++i) ds.features.data()[i] = rng.normal();
    for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(rng.uniform() < 0.5 ? 0 : 1);
    for (std::size_t j = 0; j < d; ++j) ds.feature_names.push_back("x" + std::to_string(j));
    return ds;
}

std::vector<std::size_t> iota_idx(std::size_t n, std::size_t from = 0) {
    std::vector<std::size_t> v(n);
    std::iota(v.begin(), v.end(), from);
    return v;
}

double dist_to_segment(const Eigen::RowVectorXd& p, const Eigen::RowVectorXd& a, const Eigen::RowVectorXd& b) {
    Eigen::RowVectorXd ab = b - a;
    double L = ab.squaredNorm();
    double t = L == 0.0 ? 0.0 : std::clamp((p - a).dot(ab) / L, 0.0, 1.0);
    return (a + t * ab - p).norm();
}

Outcome identity_suite() {
    Checks ck;
    Rng rng(31);

    // Combined risk: the weighted objective equals the two-part average exactly at the endpoints and in between.
    for (int t = 0; t < 200; ++t) {
        auto raw = random_rows(rng, 5 + rng.index(20), 3), ovs = random_rows(rng, rng.index(10), 3),
             aug = random_rows(rng, 1 + rng.index(15), 3);
        double alpha = rng.uniform();
        Eigen::VectorXd th(4);
        for (auto& v : th) v = rng.normal();
        for (auto kind : {LossKind::Logistic, LossKind::Squared}) {
            double direct = combined_empirical_risk(kind, th, raw, ovs, aug, alpha);
            double via = weighted_objective(kind, th, combined_weights(raw, ovs, aug, alpha)).value;
            ck.expect(std::abs(direct - via) <= 1e-12 * std::max(1.0, std::abs(direct)), "combined risk identity");
            auto w = combined_weights(raw, ovs, aug, alpha);
            ck.expect(std::abs(w.w.sum() - 1.0) <= 1e-12, "combined weights sum to one");
        }
    }

    // Probability tables.
    for (std::uint64_t s = 0; s < 20; ++s) {
        WorldConfig c;
        c.d = 16;
        c.r = 3;
        c.n_subjects = 2;
        c.n_functions = 3;
        c.hidden = 4;
        c.sup_samples = 1000;
        auto w = sample_world(c, s);
        for (std::size_t t = 0; t < w.n_subjects(); ++t) {
            ck.expect(std::abs(subject_marginal(w, t).sum() - 1.0) <= 1e-10, "subject marginal sums to one");
            for (std::size_t m = 0; m < w.n_functions(); ++m) {
                ck.expect(std::abs(joint_table(w, t, m).total() - 1.0) <= 1e-10, "joint table sums to one");
                auto cond = function_conditional(w, m);
                ck.expect((cond.rowwise().sum().array() - 1.0).abs().maxCoeff() <= 1e-10, "conditional rows sum to one");
            }
        }
        auto st = build_generator(w, default_omega(w.d, w.r));
        TokenLayout L{w.r, static_cast<int>(w.n_functions())};
        Rng r2(s);
        auto law = generated_distribution(st, encode_tokens(sample_seed_data(w, 0, 0, 4, r2), w, L), w, w.eta, 1e-6);
        ck.expect(std::abs(law.Q.total() - 1.0) <= 1e-10, "generated table sums to one");
    }

    // Text and CSV round trips.
    for (std::uint64_t s = 0; s < 20; ++s) {
        auto ds = make_craft(40, s);
        ck.expect(deserialize_great(serialize_great(ds)) == ds, "GReaT round trip");
        std::stringstream buf;
        write_csv(buf, ds);
        ck.expect(read_csv(buf, "Y") == ds, "CSV round trip");
    }

    // Gradients and Hessians against central differences.
    double worst_rel = 0.0;
    for (auto kind : {LossKind::Logistic, LossKind::Squared}) {
        for (int t = 0; t < 200; ++t) {
            Eigen::VectorXd th(4), x(4);
            for (auto& v : th) v = rng.normal();
            for (auto& v : x) v = rng.normal();
            double y = kind == LossKind::Logistic ? (rng.uniform() < 0.5 ? 0.0 : 1.0) : rng.normal();
            auto e = loss(kind, th, x, y);
            const double h = 1e-5;
            for (Eigen::Index j = 0; j < 4; ++j) {
                Eigen::VectorXd tp = th, tm = th;
                tp(j) += h;
                tm(j) -= h;
                double fd = (loss(kind, tp, x, y).value - loss(kind, tm, x, y).value) / (2 * h);
                double rel = std::abs(fd - e.grad(j)) / std::max(1.0, std::abs(e.grad(j)));
                worst_rel = std::max(worst_rel, rel);
                ck.expect(rel < 1e-5, "gradient finite difference");
            }
        }
    }

    // SMOTE segment membership.
    for (int t = 0; t < 1000; ++t) {
        std::size_t n = 2 + rng.index(8), d = 1 + rng.index(4);
        auto ds = random_rows(rng, n, d);
        ds.labels.assign(n, 1);
        SmoteOptions opt;
        opt.k = 1 + rng.index(n - 1);
        auto out = smote(ds, iota_idx(n), 5, opt, rng);
        for (Eigen::Index s = 0; s < 5; ++s) {
            double best = 1e300;
            for (std::size_t a = 0; a < n; ++a)
                for (std::size_t b = a + 1; b < n; ++b)
                    best = std::min(best, dist_to_segment(out.features.row(s), ds.features.row(static_cast<Eigen::Index>(a)),
                                                          ds.features.row(static_cast<Eigen::Index>(b))));
            ck.expect(best < 1e-9, "SMOTE sample off every segment");
        }
    }

    // ADASYN allocation: totals, nonnegativity and monotonicity in hardness.
    for (int t = 0; t < 1000; ++t) {
        std::size_t nmin = 2 + rng.index(6), nmaj = 1 + rng.index(10);
        auto ds = random_rows(rng, nmin + nmaj, 2);
        for (std::size_t i = 0; i < ds.rows(); ++i) ds.labels[i] = i < nmin ? 1 : 0;
        long m = static_cast<long>(rng.index(50));
        std::vector<double> r;
        auto g = adasyn_allocation(ds, iota_idx(nmin), iota_idx(nmaj, nmin), m, 1 + rng.index(4), &r);
        ck.expect(std::accumulate(g.begin(), g.end(), 0L) == m, "ADASYN total");
        for (std::size_t i = 0; i < g.size(); ++i) {
            ck.expect(g[i] >= 0, "ADASYN nonnegative");
            for (std::size_t j = 0; j < g.size(); ++j)
                if (r[i] > r[j]) ck.expect(g[i] + 1 >= g[j], "ADASYN monotone in hardness");
        }
    }
    return {ck.ok, ck.ok ? std::to_string(ck.count) + " checks, worst gradient rel. error " + num(worst_rel)
                         : ck.first_failure};
}

struct Criterion {
    const char* name;
    double budget_s;  // wall-clock budget; 0 means none
    std::function<Outcome()> run;
};

}  // namespace

int main() {
    const Criterion all[] = {
        {"gaussian scaling slope", 60, gaussian_slope},
        {"fourier scaling slope", 120, fourier_slope},
        {"bias floor", 0, bias_floor},
        {"KL decay and recovery", 300, kl_decay},
        {"construction equivalence", 0, construction_equivalence},
        {"oversampling benefit", 120, oversampling_benefit},
        {"quality term", 0, quality_check},
        {"identity and normalisation suite", 0, identity_suite},
    };
    int failed = 0, idx = 0;
    for (const auto& c : all) {
        ++idx;
        auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = c.run();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        if (c.budget_s > 0 && secs > c.budget_s) {
            o.pass = false;
            o.detail += "; over the " + num(c.budget_s) + " s budget";
        }
        if (!o.pass) ++failed;
        std::printf("%s %d %s: %s [%.1f s]\n", o.pass ? "PASS" : "FAIL", idx, c.name, o.detail.c_str(), secs);
        std::fflush(stdout);
    }
    return failed == 0 ? 0 : 1;
}
