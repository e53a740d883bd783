#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <map>
#include <string>
#include <vector>

#include "balance.hpp"
#include "core.hpp"
#include "data.hpp"
#include "json.hpp"

namespace synthaug {

enum class LossKind { Logistic, Squared, Misclassification };

inline double sigmoid(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    double e = std::exp(t);
    return e / (1.0 + e);
}

/** log(1 + exp(t)) without overflow. */
inline double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

struct LossEval {
    double value = 0.0;
    Eigen::VectorXd grad;
    Eigen::MatrixXd hess;
};

/**
 * Per-sample loss with closed-form derivatives.
 * Logistic: log(1 + exp(-y' theta.x)) with y' = 2y - 1 for y in {0,1}.
 * Squared: (y - theta.x)^2 / 2 with real y. Misclassification: 1{y != 1{theta.x > 0}}, no derivatives.
 */
inline LossEval loss(LossKind kind, const Eigen::VectorXd& theta, const Eigen::VectorXd& x, double y,
                     bool with_hessian = true) {
    require(theta.size() == x.size(), "theta and x dimensions differ");
    LossEval out;
    double t = theta.dot(x);
    switch (kind) {
        case LossKind::Logistic: {
            require(y == 0.0 || y == 1.0, "logistic loss needs y in {0,1}");
            double ys = 2.0 * y - 1.0;
            out.value = softplus(-ys * t);
            out.grad = -ys * sigmoid(-ys * t) * x;
            if (with_hessian) {
                double s = sigmoid(t);
                out.hess = s * (1.0 - s) * x * x.transpose();
            }
            break;
        }
        case LossKind::Squared: {
            double res = y - t;
            out.value = 0.5 * res * res;
            out.grad = -res * x;
            if (with_hessian) out.hess = x * x.transpose();
            break;
        }
        case LossKind::Misclassification:
            out.value = (t > 0.0 ? 1.0 : 0.0) != y ? 1.0 : 0.0;
            break;
    }
    return out;
}

/** Design matrix from a dataset, with an optional leading intercept column. */
inline Eigen::MatrixXd design(const Dataset& ds, bool intercept = true) {
    Eigen::MatrixXd X(ds.features.rows(), ds.features.cols() + (intercept ? 1 : 0));
    if (intercept) {
        X.col(0).setOnes();
        X.rightCols(ds.features.cols()) = ds.features;
    } else {
        X = ds.features;
    }
    return X;
}

/** Weighted sample set for a smooth objective sum_i w_i loss(theta; x_i, y_i). */
struct WeightedData {
    Eigen::MatrixXd X;
    Eigen::VectorXd y;
    Eigen::VectorXd w;

    void append(const Eigen::MatrixXd& Xs, const Eigen::VectorXd& ys, double weight) {
        if (Xs.rows() == 0) return;
        if (X.size() == 0) X.resize(0, Xs.cols());
        require(Xs.cols() == X.cols(), "design width mismatch");
        auto n0 = X.rows();
        X.conservativeResize(n0 + Xs.rows(), Xs.cols());
        X.bottomRows(Xs.rows()) = Xs;
        y.conservativeResize(n0 + Xs.rows());
        y.tail(Xs.rows()) = ys;
        w.conservativeResize(n0 + Xs.rows());
        w.tail(Xs.rows()).setConstant(weight);
    }
};

inline Eigen::VectorXd labels_vector(const Dataset& ds) {
    Eigen::VectorXd y(static_cast<Eigen::Index>(ds.rows()));
    for (std::size_t i = 0; i < ds.rows(); ++i) y(static_cast<Eigen::Index>(i)) = ds.labels[i];
    return y;
}

/**
 * Weights realising (1 - alpha) R_ovs + alpha R_aug: raw and oversampled rows share (1 - alpha)/(n_tot + m_tot),
 * augmented rows get alpha/(N |G|).
 */
inline WeightedData combined_weights(const Dataset& raw, const Dataset& oversampled, const Dataset& augmented,
                                     double alpha, bool intercept = true) {
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    require(!(alpha > 0.0 && augmented.rows() == 0), "alpha > 0 requires a non-empty augmented set");
    double n_ovs = static_cast<double>(raw.rows() + oversampled.rows());
    require(n_ovs > 0 || alpha == 1.0, "raw data is empty");
    WeightedData wd;
    if (alpha < 1.0) {
        wd.append(design(raw, intercept), labels_vector(raw), (1.0 - alpha) / n_ovs);
        wd.append(design(oversampled, intercept), labels_vector(oversampled), (1.0 - alpha) / n_ovs);
    }
    if (alpha > 0.0)
        wd.append(design(augmented, intercept), labels_vector(augmented),
                  alpha / static_cast<double>(augmented.rows()));
    return wd;
}

inline WeightedData combined_weights(const TaggedDataset& td, double alpha, bool intercept = true) {
    return combined_weights(td.data.subset(td.rows_with(Origin::Raw)),
                            td.data.subset(td.rows_with(Origin::Oversampled)),
                            td.data.subset(td.rows_with(Origin::Augmented)), alpha, intercept);
}

/** Value, gradient and (optionally) Hessian of sum_i w_i loss_i. */
inline LossEval weighted_objective(LossKind kind, const Eigen::VectorXd& theta, const WeightedData& wd,
                                   bool with_hessian = false) {
    require(wd.X.cols() == theta.size(), "theta dimension does not match design");
    LossEval out;
    out.grad = Eigen::VectorXd::Zero(theta.size());
    if (with_hessian) out.hess = Eigen::MatrixXd::Zero(theta.size(), theta.size());
    Eigen::VectorXd t = wd.X * theta;
    Eigen::VectorXd coef(t.size()), curv(t.size());
    for (Eigen::Index i = 0; i < t.size(); ++i) {
        double y = wd.y(i);
        if (kind == LossKind::Logistic) {
            double ys = 2.0 * y - 1.0;
            out.value += wd.w(i) * softplus(-ys * t(i));
            coef(i) = -wd.w(i) * ys * sigmoid(-ys * t(i));
            double s = sigmoid(t(i));
            curv(i) = wd.w(i) * s * (1.0 - s);
        } else if (kind == LossKind::Squared) {
            double res = y - t(i);
            out.value += wd.w(i) * 0.5 * res * res;
            coef(i) = -wd.w(i) * res;
            curv(i) = wd.w(i);
        } else {
            throw InvalidArgument("objective requires a smooth loss");
        }
    }
    out.grad = wd.X.transpose() * coef;
    if (with_hessian) out.hess = wd.X.transpose() * curv.asDiagonal() * wd.X;
    return out;
}

/** (1 - alpha) R_ovs(theta) + alpha R_aug(theta), each an unweighted average over its rows. */
inline double combined_empirical_risk(LossKind kind, const Eigen::VectorXd& theta, const Dataset& raw,
                                      const Dataset& oversampled, const Dataset& augmented, double alpha,
                                      bool intercept = true) {
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    require(!(alpha > 0.0 && augmented.rows() == 0), "alpha > 0 requires a non-empty augmented set");
    auto avg = [&](std::initializer_list<const Dataset*> parts) {
        double s = 0.0;
        std::size_t n = 0;
        for (auto* p : parts) {
            auto X = design(*p, intercept);
            for (std::size_t i = 0; i < p->rows(); ++i)
                s += loss(kind, theta, X.row(static_cast<Eigen::Index>(i)).transpose(), p->labels[i], false).value;
            n += p->rows();
        }
        return n ? s / static_cast<double>(n) : 0.0;
    };
    double r_ovs = alpha < 1.0 ? avg({&raw, &oversampled}) : 0.0;
    double r_aug = alpha > 0.0 ? avg({&augmented}) : 0.0;
    return (1.0 - alpha) * r_ovs + alpha * r_aug;
}

struct FitConfig {
    int max_iters = 20000;
    double tol = 1e-8;
    double step = 1.0;         // first trial step
    double armijo = 1e-4;      // sufficient-decrease constant
    double shrink = 0.5;       // backtracking factor
    double diverge_norm = 1e8; // coefficient norm regarded as divergence (separable data)
};

struct FitResult {
    Eigen::VectorXd theta;
    bool converged = false;
    bool diverged = false;
    /** Logistic only: every weighted sample is strictly separated at the final theta, so no finite minimiser. */
    bool separable = false;
    int iterations = 0;
    double grad_norm = 0.0;
    double objective = 0.0;
};

/**
 * Full-batch gradient descent with Armijo backtracking. Trial steps start from the Barzilai-Borwein length,
 * which keeps plain gradient descent practical on the poorly scaled product features of Craft.
 */
inline FitResult fit_gd(LossKind kind, const WeightedData& wd, const FitConfig& cfg = {},
                        const Eigen::VectorXd* init = nullptr) {
    require(wd.X.rows() > 0, "no samples to fit");
    if (kind == LossKind::Logistic) {
        bool has0 = false, has1 = false;
        for (Eigen::Index i = 0; i < wd.y.size(); ++i) (wd.y(i) > 0.5 ? has1 : has0) = true;
        require(has0 && has1, "logistic fit needs both labels");
    }
    FitResult res;
    Eigen::VectorXd theta = init ? *init : Eigen::VectorXd::Zero(wd.X.cols());
    auto cur = weighted_objective(kind, theta, wd);
    double step = cfg.step;
    Eigen::VectorXd prev_theta, prev_grad;
    int it = 0;
    for (; it < cfg.max_iters; ++it) {
        double gn = cur.grad.norm();
        if (gn <= cfg.tol) {
            res.converged = true;
            break;
        }
        if (it > 0) {
            Eigen::VectorXd s = theta - prev_theta, yv = cur.grad - prev_grad;
            double sy = s.dot(yv);
            if (sy > 0) step = s.squaredNorm() / sy;
        }
        double t = step;
        LossEval next;
        Eigen::VectorXd cand;
        while (true) {
            cand = theta - t * cur.grad;
            next = weighted_objective(kind, cand, wd);
            if (std::isfinite(next.value) && next.value <= cur.value - cfg.armijo * t * gn * gn) break;
            t *= cfg.shrink;
            if (t < 1e-300) break;
        }
        if (t < 1e-300) break;  // no descent possible at machine precision
        prev_theta = theta;
        prev_grad = cur.grad;
        theta = cand;
        cur = next;
        if (theta.norm() > cfg.diverge_norm) {
            res.diverged = true;
            break;
        }
    }
    res.theta = theta;
    res.iterations = it;
    res.grad_norm = cur.grad.norm();
    res.objective = cur.value;
    if (!res.converged && res.grad_norm <= cfg.tol) res.converged = true;
    if (kind == LossKind::Logistic) {
        Eigen::VectorXd t = wd.X * theta;
        res.separable = true;
        for (Eigen::Index i = 0; i < t.size() && res.separable; ++i)
            if (wd.w(i) > 0.0 && (2.0 * wd.y(i) - 1.0) * t(i) <= 0.0) res.separable = false;
    }
    return res;
}

inline FitResult fit_logistic(const WeightedData& wd, const FitConfig& cfg = {}) {
    return fit_gd(LossKind::Logistic, wd, cfg);
}

/** Weighted least squares by Cholesky-type solve of the normal equations. */
inline Eigen::VectorXd fit_least_squares(const WeightedData& wd) {
    Eigen::MatrixXd A = wd.X.transpose() * wd.w.asDiagonal() * wd.X;
    Eigen::VectorXd b = wd.X.transpose() * (wd.w.array() * wd.y.array()).matrix();
    Eigen::LDLT<Eigen::MatrixXd> ldlt(A);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) throw NumericError("normal equations are singular");
    return ldlt.solve(b);
}

// ---------------------------------------------------------------- evaluation

struct RiskReport {
    std::map<std::string, double> per_group;
    double balanced = 0.0;
    double minority = 0.0;
    std::string minority_group;
    double objective = std::numeric_limits<double>::quiet_NaN();

    nlohmann::json to_json() const {
        nlohmann::json j;
        j["per_group"] = per_group;
        j["balanced"] = balanced;
        j["minority"] = minority;
        j["objective"] = std::isfinite(objective) ? nlohmann::json(objective) : nlohmann::json(nullptr);
        return j;
    }
};

constexpr double kProbClamp = 1e-12;

inline double cross_entropy(double p, int y, double eps = kProbClamp) {
    p = std::clamp(p, eps, 1.0 - eps);
    return y == 1 ? -std::log(p) : -std::log(1.0 - p);
}

/**
 * Per-group mean cross-entropy of predicted probabilities. The minority loss is reported for `minority_group`
 * when given, otherwise for the group with the fewest test rows.
 */
inline RiskReport evaluate_probs(const std::vector<double>& probs, const Dataset& test, const GroupPartition& part,
                                 const std::string& minority_group = "", double eps = kProbClamp) {
    require(probs.size() == test.rows() && part.group_of.size() == test.rows(), "prediction count mismatch");
    std::vector<double> sum(part.groups.size(), 0.0);
    std::vector<long> cnt(part.groups.size(), 0);
    for (std::size_t i = 0; i < probs.size(); ++i) {
        sum[part.group_of[i]] += cross_entropy(probs[i], test.labels[i], eps);
        ++cnt[part.group_of[i]];
    }
    RiskReport rep;
    std::size_t smallest = 0;
    for (std::size_t g = 0; g < part.groups.size(); ++g) {
        require(cnt[g] > 0, "test group " + part.groups[g] + " is empty");
        rep.per_group[part.groups[g]] = sum[g] / static_cast<double>(cnt[g]);
        if (cnt[g] < cnt[smallest]) smallest = g;
    }
    double tot = 0.0;
    for (auto& [g, v] : rep.per_group) tot += v;
    rep.balanced = tot / static_cast<double>(rep.per_group.size());
    rep.minority_group = minority_group.empty() ? part.groups[smallest] : minority_group;
    require(rep.per_group.count(rep.minority_group), "unknown minority group " + rep.minority_group);
    rep.minority = rep.per_group[rep.minority_group];
    return rep;
}

inline RiskReport evaluate(const Eigen::VectorXd& theta, const Dataset& test, const GroupPartition& part,
                           const std::string& minority_group = "", bool intercept = true) {
    Eigen::VectorXd t = design(test, intercept) * theta;
    std::vector<double> p(static_cast<std::size_t>(t.size()));
    for (Eigen::Index i = 0; i < t.size(); ++i) p[static_cast<std::size_t>(i)] = sigmoid(t(i));
    return evaluate_probs(p, test, part, minority_group);
}

// ---------------------------------------------------------------- quality term

/** Draws n design rows X (n x p) and responses y from one group's law. */
using GroupSampler = std::function<void(Rng&, long n, Eigen::MatrixXd& X, Eigen::VectorXd& y)>;

struct GroupLaws {
    std::string name;
    double rho = 0.0;
    GroupSampler raw;
    GroupSampler synthetic;
};

struct BiasDiagnostics {
    std::map<std::string, Eigen::VectorXd> grad_risk;  // grad R^(g)(theta_bal)
    std::map<std::string, Eigen::VectorXd> grad_bias;  // grad B^(g)(theta_bal)
    Eigen::VectorXd b;
    Eigen::MatrixXd hessian;  // H_bal
    std::map<std::string, double> q;
    std::map<std::string, double> q_se;  // Monte-Carlo standard error; zero for closed forms

    nlohmann::json to_json() const {
        auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
        nlohmann::json j;
        for (auto& [g, v] : grad_risk) j["grad_risk"][g] = vec(v);
        for (auto& [g, v] : grad_bias) j["grad_bias"][g] = vec(v);
        j["b"] = vec(b);
        std::vector<std::vector<double>> H;
        for (Eigen::Index i = 0; i < hessian.rows(); ++i) H.push_back(vec(hessian.row(i).transpose()));
        j["hessian"] = H;
        j["q"] = q;
        j["q_se"] = q_se;
        return j;
    }
};

/** Solves H x = b after checking H is positive definite; reports the smallest eigenvalue otherwise. */
inline Eigen::VectorXd solve_spd(const Eigen::MatrixXd& H, const Eigen::VectorXd& b) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (H + H.transpose()));
    double lo = es.eigenvalues().minCoeff(), hi = es.eigenvalues().maxCoeff();
    if (!(lo > 1e-12 * std::max(1.0, hi)))
        throw NumericError("Hessian is not positive definite; smallest eigenvalue " + format_double(lo));
    return es.eigenvectors() * (es.eigenvectors().transpose() * b).cwiseQuotient(es.eigenvalues());
}

namespace detail {

/** q^(g) = grad R^(g)' H^{-1} b from assembled moments. */
inline void finish_quality(BiasDiagnostics& d, const std::vector<GroupLaws>& groups) {
    double G = static_cast<double>(groups.size());
    d.b = Eigen::VectorXd::Zero(d.hessian.rows());
    for (auto& g : groups) d.b += g.rho / G * d.grad_bias[g.name];
    Eigen::VectorXd hb = solve_spd(d.hessian, d.b);
    for (auto& g : groups) d.q[g.name] = d.grad_risk[g.name].dot(hb);
}

struct Moments {
    std::vector<Eigen::VectorXd> grad_raw, grad_syn;
    std::vector<Eigen::MatrixXd> hess;
};

}  // namespace detail

struct QualityMcConfig {
    long samples = 200000;  // per group and law
    int batches = 50;       // batch-means standard errors
    std::uint64_t seed = 0;
    int jobs = 1;
};

/**
 * Monte-Carlo estimates of grad R^(g), H_bal, grad B^(g), b and q^(g) at theta_bal. Each batch draws from its own
 * stream and batches are reduced in order, so results do not depend on the job count.
 */
inline BiasDiagnostics quality_term_mc(const std::vector<GroupLaws>& groups, const Eigen::VectorXd& theta_bal,
                                       LossKind kind, const QualityMcConfig& cfg) {
    require(!groups.empty(), "at least one group required");
    require(cfg.batches >= 2 && cfg.samples >= cfg.batches, "need at least two non-empty batches");
    require(kind != LossKind::Misclassification, "quality term needs a smooth loss");
    const long per = cfg.samples / cfg.batches;
    const auto p = theta_bal.size();
    const std::size_t K = static_cast<std::size_t>(cfg.batches), G = groups.size();
    std::vector<detail::Moments> mom(K);
    parallel_for(K, cfg.jobs, [&](std::size_t k) {
        auto& m = mom[k];
        for (std::size_t g = 0; g < G; ++g) {
            Eigen::VectorXd gr = Eigen::VectorXd::Zero(p), gs = Eigen::VectorXd::Zero(p);
            Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
            Eigen::MatrixXd X;
            Eigen::VectorXd y;
            Rng r1(stream_seed(cfg.seed, 2 * g, k));
            groups[g].raw(r1, per, X, y);
            WeightedData wd{X, y, Eigen::VectorXd::Constant(X.rows(), 1.0 / static_cast<double>(per))};
            auto e = weighted_objective(kind, theta_bal, wd, true);
            gr = e.grad;
            h = e.hess;
            Rng r2(stream_seed(cfg.seed, 2 * g + 1, k));
            groups[g].synthetic(r2, per, X, y);
            WeightedData ws{X, y, Eigen::VectorXd::Constant(X.rows(), 1.0 / static_cast<double>(per))};
            gs = weighted_objective(kind, theta_bal, ws, false).grad;
            m.grad_raw.push_back(gr);
            m.grad_syn.push_back(gs);
            m.hess.push_back(h);
        }
    });
    auto assemble_diag = [&](std::size_t from, std::size_t to) {
        BiasDiagnostics d;
        d.hessian = Eigen::MatrixXd::Zero(p, p);
        double cnt = static_cast<double>(to - from);
        for (std::size_t g = 0; g < G; ++g) {
            Eigen::VectorXd gr = Eigen::VectorXd::Zero(p), gs = Eigen::VectorXd::Zero(p);
            Eigen::MatrixXd h = Eigen::MatrixXd::Zero(p, p);
            for (std::size_t k = from; k < to; ++k) {
                gr += mom[k].grad_raw[g];
                gs += mom[k].grad_syn[g];
                h += mom[k].hess[g];
            }
            d.grad_risk[groups[g].name] = gr / cnt;
            d.grad_bias[groups[g].name] = (gs - gr) / cnt;
            d.hessian += h / cnt / static_cast<double>(G);
        }
        detail::finish_quality(d, groups);
        return d;
    };
    BiasDiagnostics pooled = assemble_diag(0, K);
    std::map<std::string, std::vector<double>> per_batch;
    for (std::size_t k = 0; k < K; ++k) {
        auto d = assemble_diag(k, k + 1);
        for (auto& [g, v] : d.q) per_batch[g].push_back(v);
    }
    for (auto& [g, v] : per_batch) pooled.q_se[g] = sd_of(v) / std::sqrt(static_cast<double>(K));
    return pooled;
}

/** Linear-regression group: y = x'theta + eps with E[xx'] = S, for raw and synthetic laws. */
struct LinearGroup {
    std::string name;
    double rho = 0.0;
    Eigen::MatrixXd S, S_tilde;
    Eigen::VectorXd theta, theta_tilde;
};

/** Closed form for squared loss with group-specific covariances. */
inline BiasDiagnostics quality_linear_closed(const std::vector<LinearGroup>& groups, const Eigen::VectorXd& theta_bal) {
    require(!groups.empty(), "at least one group required");
    BiasDiagnostics d;
    auto p = theta_bal.size();
    d.hessian = Eigen::MatrixXd::Zero(p, p);
    std::vector<GroupLaws> names;
    for (auto& g : groups) {
        d.grad_risk[g.name] = g.S * (theta_bal - g.theta);
        d.grad_bias[g.name] = g.S_tilde * (theta_bal - g.theta_tilde) - g.S * (theta_bal - g.theta);
        d.hessian += g.S / static_cast<double>(groups.size());
        names.push_back({g.name, g.rho, {}, {}});
        d.q_se[g.name] = 0.0;
    }
    detail::finish_quality(d, names);
    return d;
}

/** Shared covariance simplification: q^(g) = -(1/|G|) sum_g' rho_g' (theta_bal - theta^(g))' S (theta~ - theta)^(g'). */
inline std::map<std::string, double> quality_linear_shared(const std::vector<LinearGroup>& groups,
                                                           const Eigen::MatrixXd& S,
                                                           const Eigen::VectorXd& theta_bal) {
    Eigen::VectorXd acc = Eigen::VectorXd::Zero(theta_bal.size());
    for (auto& g : groups) acc += g.rho * (g.theta_tilde - g.theta);
    acc /= static_cast<double>(groups.size());
    std::map<std::string, double> q;
    for (auto& g : groups) q[g.name] = -(theta_bal - g.theta).dot(S * acc);
    return q;
}

/** Population minimiser of the balanced squared risk: (sum S)^{-1} sum S theta. */
inline Eigen::VectorXd linear_theta_bal(const std::vector<LinearGroup>& groups) {
    Eigen::MatrixXd A = Eigen::MatrixXd::Zero(groups[0].S.rows(), groups[0].S.cols());
    Eigen::VectorXd b = Eigen::VectorXd::Zero(groups[0].theta.size());
    for (auto& g : groups) {
        A += g.S;
        b += g.S * g.theta;
    }
    return solve_spd(A, b);
}

/** Gaussian design x ~ N(0, S) with y = x'theta + N(0, noise^2). */
inline GroupSampler linear_gaussian_sampler(const Eigen::MatrixXd& S, const Eigen::VectorXd& theta, double noise) {
    Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(S).matrixL();
    return [L, theta, noise](Rng& rng, long n, Eigen::MatrixXd& X, Eigen::VectorXd& y) {
        Eigen::MatrixXd Z(n, L.rows());
        for (long i = 0; i < n; ++i)
            for (Eigen::Index j = 0; j < L.rows(); ++j) Z(i, j) = rng.normal();
        X = Z * L.transpose();
        y = X * theta;
        for (long i = 0; i < n; ++i) y(i) += noise * rng.normal();
    };
}

/** Logistic group: covariate laws for raw and synthetic data with logistic label models. */
struct LogisticGroup {
    std::string name;
    double rho = 0.0;
    std::function<Eigen::MatrixXd(Rng&, long)> x_raw, x_syn;
    Eigen::VectorXd theta, theta_tilde;
};

/**
 * Moment form for logistic regression: s = E[x s_bal(x)], mu_xy = E[x s(x'theta)], H = E[xx' s_bal(1 - s_bal)],
 * with the label expectations taken analytically and only covariates drawn.
 */
inline BiasDiagnostics quality_logistic_moments(const std::vector<LogisticGroup>& groups,
                                                const Eigen::VectorXd& theta_bal, long samples, std::uint64_t seed) {
    BiasDiagnostics d;
    auto p = theta_bal.size();
    d.hessian = Eigen::MatrixXd::Zero(p, p);
    std::vector<GroupLaws> names;
    std::size_t gi = 0;
    for (auto& g : groups) {
        Rng r1(stream_seed(seed, 2 * gi, 7)), r2(stream_seed(seed, 2 * gi + 1, 7));
        Eigen::MatrixXd X = g.x_raw(r1, samples), Xt = g.x_syn(r2, samples);
        Eigen::VectorXd s = Eigen::VectorXd::Zero(p), mu = s, st = s, mut = s;
        Eigen::MatrixXd H = Eigen::MatrixXd::Zero(p, p);
        for (long i = 0; i < samples; ++i) {
            Eigen::VectorXd x = X.row(i).transpose(), xt = Xt.row(i).transpose();
            double sb = sigmoid(x.dot(theta_bal));
            s += x * sb;
            mu += x * sigmoid(x.dot(g.theta));
            H += sb * (1.0 - sb) * x * x.transpose();
            st += xt * sigmoid(xt.dot(theta_bal));
            mut += xt * sigmoid(xt.dot(g.theta_tilde));
        }
        double n = static_cast<double>(samples);
        d.grad_risk[g.name] = (s - mu) / n;
        d.grad_bias[g.name] = ((st - s) - (mut - mu)) / n;
        d.hessian += H / n / static_cast<double>(groups.size());
        names.push_back({g.name, g.rho, {}, {}});
        d.q_se[g.name] = 0.0;
        ++gi;
    }
    detail::finish_quality(d, names);
    return d;
}

}  // namespace synthaug
