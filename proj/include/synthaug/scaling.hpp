#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "core.hpp"

namespace synthaug {

/** Standard normal CDF through erfc, accurate to double precision. */
inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

/**
 * Coordinatewise shrinkage problem shared by the sequence and Fourier simulators. Group g observes
 * theta_g + sigma_g/sqrt(n_g) xi (raw), theta~_g + sigma~_g/sqrt(m_g) xi (oversampling) and
 * theta~_g + sigma~_g/sqrt(N) xi (augmentation); the estimator is
 * s_j (1/|G|) sum_g {(1-a)(1-rho_g) z_g + (1-a) rho_g z~_g + a z^_g}, s_j = 1 / (1 + lambda w_j).
 */
struct ShrinkageProblem {
    std::vector<Eigen::VectorXd> theta, theta_tilde;  // per group
    std::vector<double> sigma, sigma_tilde;
    std::vector<long> n;  // raw counts per group
    long N = 0;
    double alpha = 1.0;
    Eigen::VectorXd penalty;  // w_j
    Eigen::VectorXd target;   // the estimand (theta* or the group mean)

    std::size_t groups() const { return theta.size(); }
    long max_n() const { return *std::max_element(n.begin(), n.end()); }
    long m(std::size_t g) const { return max_n() - n[g]; }
    double rho(std::size_t g) const { return static_cast<double>(m(g)) / static_cast<double>(max_n()); }

    void validate() const {
        const std::size_t G = groups();
        require(G >= 1 && theta_tilde.size() == G && sigma.size() == G && sigma_tilde.size() == G && n.size() == G,
                "per-group parameter lists must have equal length");
        for (std::size_t g = 0; g < G; ++g) {
            require(n[g] >= 1, "raw counts must be positive");
            require(theta[g].size() == penalty.size() && theta_tilde[g].size() == penalty.size(),
                    "coefficient lengths must match the penalty");
        }
        require(target.size() == penalty.size(), "target length must match the penalty");
        require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
        require(N >= 0 && !(alpha > 0.0 && N == 0), "alpha > 0 needs N >= 1");
    }

    /** R = (1-a)^2 sigma^2 (1-rho)/n_tot + a^2 sigma'^2/(N |G|) with the pooled noise levels. */
    double rate() const {
        const double G = static_cast<double>(groups());
        double s2 = 0.0, s2p = 0.0, rho_avg = 0.0, ntot = 0.0;
        for (std::size_t g = 0; g < groups(); ++g) {
            s2 += ((1.0 - rho(g)) * sigma[g] * sigma[g] + rho(g) * sigma_tilde[g] * sigma_tilde[g]) / G;
            s2p += sigma_tilde[g] * sigma_tilde[g] / G;
            rho_avg += rho(g) / G;
            ntot += static_cast<double>(n[g]);
        }
        double R = (1.0 - alpha) * (1.0 - alpha) * s2 * (1.0 - rho_avg) / ntot;
        if (alpha > 0.0) R += alpha * alpha * s2p / (static_cast<double>(N) * G);
        return R;
    }

    Eigen::VectorXd shrink(double lambda) const {
        require(lambda >= 0.0, "lambda must be nonnegative");
        return (1.0 + lambda * penalty.array()).inverse().matrix();
    }

    /** Weighted group mean before shrinkage, from freshly drawn sufficient statistics. */
    Eigen::VectorXd weighted_mean(Rng& rng) const {
        const double G = static_cast<double>(groups());
        Eigen::VectorXd acc = Eigen::VectorXd::Zero(penalty.size());
        auto noisy = [&](const Eigen::VectorXd& mean, double sd) {
            Eigen::VectorXd v = mean;
            if (sd > 0.0)
                for (Eigen::Index j = 0; j < v.size(); ++j) v(j) += sd * rng.normal();
            return v;
        };
        for (std::size_t g = 0; g < groups(); ++g) {
            double wr = (1.0 - alpha) * (1.0 - rho(g)), wo = (1.0 - alpha) * rho(g), wa = alpha;
            // Zero-weight terms are skipped, which also avoids dividing by m_g = 0.
            if (wr > 0.0) acc += wr * noisy(theta[g], sigma[g] / std::sqrt(static_cast<double>(n[g])));
            if (wo > 0.0) acc += wo * noisy(theta_tilde[g], sigma_tilde[g] / std::sqrt(static_cast<double>(m(g))));
            if (wa > 0.0) acc += wa * noisy(theta_tilde[g], sigma_tilde[g] / std::sqrt(static_cast<double>(N)));
        }
        return acc / G;
    }

    Eigen::VectorXd estimate(double lambda, Rng& rng) const { return shrink(lambda).cwiseProduct(weighted_mean(rng)); }

    /** Mean of (1/|G|) sum_g ((1-a) rho_g + a)(theta~_g - theta_g): the synthetic bias direction. */
    Eigen::VectorXd bias_vector() const {
        Eigen::VectorXd b = Eigen::VectorXd::Zero(penalty.size());
        for (std::size_t g = 0; g < groups(); ++g)
            b += ((1.0 - alpha) * rho(g) + alpha) * (theta_tilde[g] - theta[g]);
        return b / static_cast<double>(groups());
    }

    /** Squared-bias floor reached as lambda -> 0 and all sample sizes grow. */
    double bias_floor() const { return bias_vector().squaredNorm(); }

    /** Exact E||theta_hat - target||^2 = T1 + T2. */
    double analytic_risk(double lambda, double* t1 = nullptr, double* t2 = nullptr) const {
        const double G = static_cast<double>(groups());
        Eigen::VectorXd s = shrink(lambda);
        Eigen::VectorXd mean = Eigen::VectorXd::Zero(penalty.size());
        for (std::size_t g = 0; g < groups(); ++g) mean += theta[g] / G;
        Eigen::VectorXd bias = (s.array() - 1.0).matrix().cwiseProduct(mean) + s.cwiseProduct(bias_vector()) +
                               (mean - target);
        double var = 0.0;
        for (std::size_t g = 0; g < groups(); ++g) {
            double a1 = (1.0 - alpha) * (1.0 - rho(g)), a2 = (1.0 - alpha) * rho(g);
            if (a1 > 0.0) var += a1 * a1 * sigma[g] * sigma[g] / static_cast<double>(n[g]);
            if (a2 > 0.0) var += a2 * a2 * sigma_tilde[g] * sigma_tilde[g] / static_cast<double>(m(g));
            if (alpha > 0.0) var += alpha * alpha * sigma_tilde[g] * sigma_tilde[g] / static_cast<double>(N);
        }
        double T1 = bias.squaredNorm(), T2 = s.squaredNorm() * var / (G * G);
        if (t1) *t1 = T1;
        if (t2) *t2 = T2;
        return T1 + T2;
    }
};

// ---------------------------------------------------------------- lambda schedule

enum class Regime { Gaussian, Fourier };

struct LambdaSchedule {
    Regime regime = Regime::Gaussian;
    int p = 3;
    int r = 2;
    int dim = 1;     // d' for the Fourier regime
    double c = 1.0;  // calibration constant

    /** r' = p ^ r (sequence) or 2p ^ r (Fourier). */
    int r_prime() const { return regime == Regime::Gaussian ? std::min(p, r) : std::min(2 * p, r); }
    double exponent() const {
        double rp = r_prime();
        return regime == Regime::Gaussian ? p / (2.0 * rp + 1.0) : 2.0 * p / (2.0 * rp + dim);
    }
    double beta() const {
        double rp = r_prime();
        return regime == Regime::Gaussian ? 2.0 * rp / (2.0 * rp + 1.0) : 2.0 * rp / (2.0 * rp + dim);
    }
    double operator()(double R) const {
        require(R > 0.0, "rate R must be positive");
        return c * std::pow(R, exponent());
    }
};

inline double lambda_schedule(double R, const LambdaSchedule& s) { return s(R); }

// ---------------------------------------------------------------- Gaussian sequence model

struct GaussianSeqConfig {
    int J = 2048;
    int r = 2;
    int p = 3;
    double amplitude = 0.9;  // theta*_j = amplitude j^{-(r + 1/2)}
    double delta = 0.0;      // theta~* = theta* + delta e_1
    double sigma = 1.0, sigma_tilde = 1.0;
    std::vector<long> counts{100, 600};  // n_y per label
    long N = 64;
    double alpha = 1.0;
    double lambda = -1.0;  // negative selects the schedule
    double c = 1.0;

    LambdaSchedule schedule() const { return {Regime::Gaussian, p, r, 1, c}; }
};

inline Eigen::VectorXd default_theta_star(int J, int r, double amplitude) {
    Eigen::VectorXd t(J);
    for (int j = 1; j <= J; ++j) t(j - 1) = amplitude * std::pow(static_cast<double>(j), -(r + 0.5));
    return t;
}

/** Label means are folded by the sign (-1)^y, so every group targets theta*. */
inline ShrinkageProblem gaussian_problem(const GaussianSeqConfig& cfg) {
    require(cfg.p >= 2, "penalty exponent p must be at least 2");
    require(cfg.J >= 1, "J must be positive");
    ShrinkageProblem pb;
    Eigen::VectorXd ts = default_theta_star(cfg.J, cfg.r, cfg.amplitude), tt = ts;
    tt(0) += cfg.delta;
    for (std::size_t y = 0; y < cfg.counts.size(); ++y) {
        pb.theta.push_back(ts);
        pb.theta_tilde.push_back(tt);
        pb.sigma.push_back(cfg.sigma);
        pb.sigma_tilde.push_back(cfg.sigma_tilde);
    }
    pb.n = cfg.counts;
    pb.N = cfg.N;
    pb.alpha = cfg.alpha;
    pb.penalty.resize(cfg.J);
    for (int j = 1; j <= cfg.J; ++j) pb.penalty(j - 1) = std::pow(static_cast<double>(j), cfg.p);
    pb.target = ts;
    pb.validate();
    return pb;
}

inline double resolve_lambda(const ShrinkageProblem& pb, double lambda, const LambdaSchedule& s) {
    return lambda >= 0.0 ? lambda : s(pb.rate());
}

inline Eigen::VectorXd gaussian_estimate(const GaussianSeqConfig& cfg, Rng& rng) {
    auto pb = gaussian_problem(cfg);
    return pb.estimate(resolve_lambda(pb, cfg.lambda, cfg.schedule()), rng);
}

struct GaussianRisks {
    double param_risk = 0.0;
    double misclass = 0.5;
    double excess_misclass = 0.0;
    bool degenerate = false;  // theta_hat = 0: misclassification set to 1/2 by convention
};

/** ||theta_hat - theta*||^2 and the balanced error Phi(-theta_hat.theta* / (sigma ||theta_hat||)) minus its floor. */
inline GaussianRisks gaussian_risks(const Eigen::VectorXd& theta_hat, const Eigen::VectorXd& theta_star, double sigma) {
    require(theta_hat.size() == theta_star.size(), "length mismatch");
    GaussianRisks out;
    out.param_risk = (theta_hat - theta_star).squaredNorm();
    double best = normal_cdf(-theta_star.norm() / sigma);
    double nh = theta_hat.norm();
    if (nh == 0.0) {
        out.degenerate = true;
        out.misclass = 0.5;
    } else {
        out.misclass = normal_cdf(-theta_hat.dot(theta_star) / (sigma * nh));
    }
    out.excess_misclass = out.misclass - best;
    return out;
}

// ---------------------------------------------------------------- Fourier white-noise model

struct FourierSimConfig {
    int q_max = 64;  // lattice j in [-q_max, q_max]^dim, q = 2 pi j
    int dim = 1;
    int r = 2;
    int p = 2;
    double zero_coef = 0.5;  // theta(0) before normalisation
    double delta = 0.0;      // theta~ = theta + delta at q = 0 for every group
    std::vector<double> sigma{1.0, 1.0}, sigma_tilde{1.0, 1.0};
    std::vector<long> counts{100, 600};
    std::vector<double> group_scale{1.0, 1.0};  // theta_g = scale_g theta
    long N = 64;
    double alpha = 1.0;
    double lambda = -1.0;
    double c = 1.0;
    double tail_tol = 1e-6;

    LambdaSchedule schedule() const { return {Regime::Fourier, p, r, dim, c}; }
};

/** Lattice points with |j|_inf <= radius, as integer vectors. */
inline std::vector<std::vector<int>> lattice(int radius, int dim) {
    std::vector<std::vector<int>> pts{{}};
    for (int k = 0; k < dim; ++k) {
        std::vector<std::vector<int>> next;
        for (auto& p : pts)
            for (int j = -radius; j <= radius; ++j) {
                auto q = p;
                q.push_back(j);
                next.push_back(std::move(q));
            }
        pts = std::move(next);
    }
    return pts;
}

/** Unnormalised coefficient |j|^{-(r + dim/2)}, with a fixed value at the origin. */
inline double fourier_profile(const std::vector<int>& j, int r, int dim, double zero_coef) {
    double n2 = 0.0;
    for (int v : j) n2 += static_cast<double>(v) * v;
    if (n2 == 0.0) return zero_coef;
    return std::pow(n2, -0.5 * (r + 0.5 * dim));
}

/** Share of squared coefficient mass outside the truncated lattice, measured out to 16 q_max (dim 1) or 4 q_max. */
inline double fourier_tail_mass(const FourierSimConfig& cfg) {
    int outer = cfg.dim == 1 ? 16 * cfg.q_max : 4 * cfg.q_max;
    double in = 0.0, out = 0.0;
    for (auto& j : lattice(outer, cfg.dim)) {
        int inf = 0;
        for (int v : j) inf = std::max(inf, std::abs(v));
        double c = fourier_profile(j, cfg.r, cfg.dim, cfg.zero_coef);
        (inf <= cfg.q_max ? in : out) += c * c;
    }
    return out / (in + out);
}

/** Builds the per-frequency problem; theta is normalised so that sum (1 + |q|^{2r}) theta^2 = 1. */
inline ShrinkageProblem fourier_problem(const FourierSimConfig& cfg, double* tail_out = nullptr) {
    require(cfg.dim >= 1 && cfg.dim <= 3, "dimension must be 1, 2 or 3");
    require(cfg.p >= 1 && cfg.r >= 1, "p and r must be positive");
    double tail = fourier_tail_mass(cfg);
    if (tail_out) *tail_out = tail;
    if (!(tail < cfg.tail_tol))
        throw InvalidArgument("lattice truncation leaves tail mass " + std::to_string(tail) + " >= tolerance");
    auto pts = lattice(cfg.q_max, cfg.dim);
    Eigen::VectorXd base(static_cast<Eigen::Index>(pts.size())), pen(base.size());
    double norm = 0.0;
    const double two_pi = 2.0 * std::acos(-1.0);
    for (std::size_t k = 0; k < pts.size(); ++k) {
        double q2 = 0.0;
        for (int v : pts[k]) q2 += (two_pi * v) * (two_pi * v);
        double c = fourier_profile(pts[k], cfg.r, cfg.dim, cfg.zero_coef);
        base(static_cast<Eigen::Index>(k)) = c;
        pen(static_cast<Eigen::Index>(k)) = 1.0 + std::pow(q2, cfg.p);
        norm += (1.0 + std::pow(q2, cfg.r)) * c * c;
    }
    base /= std::sqrt(norm);
    std::size_t G = cfg.counts.size();
    require(cfg.sigma.size() == G && cfg.sigma_tilde.size() == G && cfg.group_scale.size() == G,
            "per-group lists must have equal length");
    ShrinkageProblem pb;
    Eigen::Index origin = static_cast<Eigen::Index>(pts.size() / 2);
    pb.target = Eigen::VectorXd::Zero(base.size());
    for (std::size_t g = 0; g < G; ++g) {
        Eigen::VectorXd th = cfg.group_scale[g] * base, tt = th;
        tt(origin) += cfg.delta;
        pb.theta.push_back(th);
        pb.theta_tilde.push_back(tt);
        pb.target += th / static_cast<double>(G);
    }
    pb.sigma = cfg.sigma;
    pb.sigma_tilde = cfg.sigma_tilde;
    pb.n = cfg.counts;
    pb.N = cfg.N;
    pb.alpha = cfg.alpha;
    pb.penalty = pen;
    pb.validate();
    return pb;
}

inline Eigen::VectorXd fourier_estimate(const FourierSimConfig& cfg, Rng& rng) {
    auto pb = fourier_problem(cfg);
    return pb.estimate(resolve_lambda(pb, cfg.lambda, cfg.schedule()), rng);
}

/** ||theta_hat - theta_w||^2 over the lattice. */
inline double fourier_risk(const Eigen::VectorXd& theta_hat, const Eigen::VectorXd& theta_w) {
    require(theta_hat.size() == theta_w.size(), "length mismatch");
    return (theta_hat - theta_w).squaredNorm();
}

// ---------------------------------------------------------------- curves and slopes

struct CurvePoint {
    double size = 0.0;
    double lambda = 0.0;
    double mean = 0.0;
    double sd = 0.0;
    double analytic = 0.0;
    std::vector<double> risks;  // one per replicate
};

/**
 * Monte-Carlo parameter risk along a grid of augmentation sizes N. `make` builds the problem for a given N;
 * replicate k at grid index i draws from the stream (seed, i, k).
 */
template <class Make>
std::vector<CurvePoint> excess_curve(Make make, const LambdaSchedule& sched, double fixed_lambda,
                                     const std::vector<long>& grid, int replicates, std::uint64_t seed, int jobs = 1) {
    require(!grid.empty(), "grid must be non-empty");
    require(replicates >= 1, "need at least one replicate");
    for (std::size_t i = 1; i < grid.size(); ++i) require(grid[i] > grid[i - 1], "grid must be strictly increasing");
    std::vector<CurvePoint> out(grid.size());
    for (std::size_t i = 0; i < grid.size(); ++i) {
        ShrinkageProblem pb = make(grid[i]);
        double lam = resolve_lambda(pb, fixed_lambda, sched);
        CurvePoint& cp = out[i];
        cp.size = static_cast<double>(grid[i]);
        cp.lambda = lam;
        cp.analytic = pb.analytic_risk(lam);
        cp.risks.assign(static_cast<std::size_t>(replicates), 0.0);
        Eigen::VectorXd s = pb.shrink(lam);
        parallel_for(static_cast<std::size_t>(replicates), jobs, [&](std::size_t k) {
            Rng rng(stream_seed(seed, i, k));
            cp.risks[k] = (s.cwiseProduct(pb.weighted_mean(rng)) - pb.target).squaredNorm();
        });
        cp.mean = mean_of(cp.risks);
        cp.sd = sd_of(cp.risks);
    }
    return out;
}

inline std::vector<CurvePoint> gaussian_curve(const GaussianSeqConfig& cfg, const std::vector<long>& grid,
                                              int replicates, std::uint64_t seed, int jobs = 1) {
    return excess_curve(
        [&](long N) {
            auto c = cfg;
            c.N = N;
            return gaussian_problem(c);
        },
        cfg.schedule(), cfg.lambda, grid, replicates, seed, jobs);
}

inline std::vector<CurvePoint> fourier_curve(const FourierSimConfig& cfg, const std::vector<long>& grid,
                                             int replicates, std::uint64_t seed, int jobs = 1) {
    return excess_curve(
        [&](long N) {
            auto c = cfg;
            c.N = N;
            return fourier_problem(c);
        },
        cfg.schedule(), cfg.lambda, grid, replicates, seed, jobs);
}

/** Mean excess misclassification per grid point, replaying the replicate streams of `gaussian_curve`. */
inline std::vector<double> gaussian_misclass_curve(const GaussianSeqConfig& cfg, const std::vector<long>& grid,
                                                   int replicates, std::uint64_t seed, int jobs = 1) {
    std::vector<double> out;
    for (std::size_t i = 0; i < grid.size(); ++i) {
        auto c = cfg;
        c.N = grid[i];
        auto pb = gaussian_problem(c);
        Eigen::VectorXd s = pb.shrink(resolve_lambda(pb, cfg.lambda, cfg.schedule()));
        std::vector<double> ex(static_cast<std::size_t>(replicates));
        parallel_for(ex.size(), jobs, [&](std::size_t k) {
            Rng rng(stream_seed(seed, i, k));
            ex[k] = gaussian_risks(s.cwiseProduct(pb.weighted_mean(rng)), pb.target, cfg.sigma).excess_misclass;
        });
        out.push_back(mean_of(ex));
    }
    return out;
}

struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};

/** OLS of log y on log x. */
inline SlopeFit fit_loglog_slope(const std::vector<std::pair<double, double>>& pts) {
    require(pts.size() >= 3, "slope fit needs at least three points");
    double n = static_cast<double>(pts.size()), sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (auto [x, y] : pts) {
        require(x > 0.0 && y > 0.0, "log-log fit needs positive values");
        double lx = std::log(x), ly = std::log(y);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        syy += ly * ly;
    }
    double vx = sxx - sx * sx / n, vy = syy - sy * sy / n, cxy = sxy - sx * sy / n;
    require(vx > 0.0, "x values must not all be equal");
    SlopeFit f;
    f.slope = cxy / vx;
    f.intercept = (sy - f.slope * sx) / n;
    f.r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
    return f;
}

inline SlopeFit fit_curve(const std::vector<CurvePoint>& c) {
    std::vector<std::pair<double, double>> pts;
    for (auto& p : c) pts.push_back({p.size, p.mean});
    return fit_loglog_slope(pts);
}

}  // namespace synthaug
