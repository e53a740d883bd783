#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"
#include "json.hpp"

namespace synthaug {

/** One residual feed-forward map v -> v + W2 relu(W1 v). */
struct FfnWeights {
    Eigen::MatrixXd W1;  // hidden x in
    Eigen::MatrixXd W2;  // out x hidden

    Eigen::VectorXd apply(const Eigen::VectorXd& v) const {
        Eigen::VectorXd h = (W1 * v).cwiseMax(0.0);
        return v + W2 * h;
    }
};

/** Discriminative function f = FFN_L0 o ... o FFN_1 on R^r. */
struct FunctionStack {
    std::vector<FfnWeights> layers;

    Eigen::VectorXd operator()(const Eigen::VectorXd& u) const {
        Eigen::VectorXd v = u;
        for (const auto& l : layers) v = l.apply(v);
        return v;
    }
    /** Applies f to every row of U. */
    Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& U) const {
        Eigen::MatrixXd V = U.transpose();
        for (const auto& l : layers) V += l.W2 * (l.W1 * V).cwiseMax(0.0);
        return V.transpose();
    }
    std::size_t depth() const { return layers.size(); }
    Eigen::Index width() const { return layers.empty() ? 0 : layers.front().W1.rows(); }
};

/** Ground-truth generative model over d tokens with r-dimensional embeddings. */
struct LatentWorld {
    int d = 0;
    int r = 0;
    double eta = 1.0;
    Eigen::MatrixXd U;  // d x r, row x is u_x
    std::vector<Eigen::VectorXd> subjects;
    std::vector<FunctionStack> functions;
    double bound_radius = 0.0;  // f is bounded by 1 on the ball of this radius

    std::size_t n_subjects() const { return subjects.size(); }
    std::size_t n_functions() const { return functions.size(); }
};

struct WorldConfig {
    int d = 512;
    int r = 4;
    int n_subjects = 2;
    int n_functions = 2;
    int L0 = 1;
    int hidden = 8;  // ReLU width of each block; the FFN width r0 is hidden + 2r
    double eta = 1.0;
    double bound_radius = 0.0;  // 0 selects log d
    int sup_samples = 10000;
    double sup_safety = 1.05;
};

/** Uniform draw from the ball of radius R in R^r. */
inline Eigen::VectorXd ball_sample(int r, double R, Rng& rng) {
    Eigen::VectorXd v(r);
    for (int j = 0; j < r; ++j) v(j) = rng.normal();
    double nv = v.norm();
    if (nv == 0.0) return v;
    return v / nv * (R * std::pow(rng.uniform(), 1.0 / r));
}

/**
 * Random f in F(L0, r0). Blocks 1..L0-1 are residual v + B relu(A v); the last block realises the non-residual
 * kappa B relu(A v) through the identity relu(v) - relu(-v) = v, which is what makes a bound by 1 attainable.
 * kappa is set from the empirical sup over ball samples.
 */
inline FunctionStack sample_function(const WorldConfig& cfg, double radius, Rng& rng) {
    require(cfg.L0 >= 1 && cfg.hidden >= 1, "L0 and hidden width must be positive");
    const int r = cfg.r, h = cfg.hidden, r0 = h + 2 * r;
    auto gauss = [&](int rows, int cols, double sd) {
        Eigen::MatrixXd M(rows, cols);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < cols; ++j) M(i, j) = sd * rng.normal();
        return M;
    };
    FunctionStack f;
    for (int k = 0; k < cfg.L0; ++k) {
        Eigen::MatrixXd A = gauss(h, r, 1.0), B = gauss(r, h, 1.0 / std::sqrt(static_cast<double>(h)));
        FfnWeights w;
        w.W1 = Eigen::MatrixXd::Zero(r0, r);
        w.W2 = Eigen::MatrixXd::Zero(r, r0);
        w.W1.topRows(h) = A;
        w.W2.leftCols(h) = B;
        if (k + 1 == cfg.L0) {
            w.W1.middleRows(h, r).setIdentity();
            w.W1.bottomRows(r) = -Eigen::MatrixXd::Identity(r, r);
            w.W2.middleCols(h, r) = -Eigen::MatrixXd::Identity(r, r);
            w.W2.rightCols(r).setIdentity();
        }
        f.layers.push_back(std::move(w));
    }
    double sup = 0.0;
    for (int s = 0; s < cfg.sup_samples; ++s) sup = std::max(sup, f(ball_sample(r, radius, rng)).norm());
    if (sup > 0.0) f.layers.back().W2.leftCols(h) /= cfg.sup_safety * sup;
    return f;
}

/** U rows i.i.d. N(0, I/r); subjects normalised Gaussians; functions rescaled to the unit bound. */
inline LatentWorld sample_world(const WorldConfig& cfg, std::uint64_t seed) {
    require(cfg.d >= 2 && cfg.r >= 1, "need d >= 2 and r >= 1");
    require(cfg.n_subjects >= 1 && cfg.n_functions >= cfg.n_subjects, "need n_functions >= n_subjects >= 1");
    require(cfg.eta > 0.0, "eta must be positive");
    Rng rng(seed);
    LatentWorld w;
    w.d = cfg.d;
    w.r = cfg.r;
    w.eta = cfg.eta;
    w.bound_radius = cfg.bound_radius > 0.0 ? cfg.bound_radius : std::log(static_cast<double>(cfg.d));
    w.U.resize(cfg.d, cfg.r);
    double sd = 1.0 / std::sqrt(static_cast<double>(cfg.r));
    for (int x = 0; x < cfg.d; ++x)
        for (int j = 0; j < cfg.r; ++j) w.U(x, j) = sd * rng.normal();
    for (int t = 0; t < cfg.n_subjects; ++t) {
        Eigen::VectorXd z(cfg.r);
        do {
            for (int j = 0; j < cfg.r; ++j) z(j) = rng.normal();
        } while (z.norm() == 0.0);
        w.subjects.push_back(z / z.norm());
    }
    for (int m = 0; m < cfg.n_functions; ++m) w.functions.push_back(sample_function(cfg, w.bound_radius, rng));
    return w;
}

// ---------------------------------------------------------------- probability tables

/** Softmax of a logit vector with max subtraction. */
inline Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    double mx = logits.maxCoeff();
    Eigen::VectorXd e = (logits.array() - mx).exp();
    return e / e.sum();
}

/** Row-wise softmax. */
inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& L) {
    Eigen::MatrixXd out(L.rows(), L.cols());
    for (Eigen::Index i = 0; i < L.rows(); ++i) out.row(i) = softmax(L.row(i).transpose()).transpose();
    return out;
}

/** Joint law of one (x, y) pair; row index x, column index y. */
struct JointTable {
    Eigen::MatrixXd probs;

    double total() const { return probs.sum(); }
    Eigen::VectorXd marginal_x() const { return probs.rowwise().sum(); }
};

inline void check_indices(const LatentWorld& w, std::size_t t, std::size_t m) {
    require(t < w.n_subjects(), "subject index out of range");
    require(m < w.n_functions(), "function index out of range");
}

/** P(X = x) proportional to exp(<z_t, u_x> / eta). */
inline Eigen::VectorXd subject_marginal(const LatentWorld& w, std::size_t t) {
    require(t < w.n_subjects(), "subject index out of range");
    return softmax(w.U * w.subjects[t] / w.eta);
}

/** Row x holds P(Y = . | X = x) proportional to exp(<f_m(u_x), u_y> / eta). */
inline Eigen::MatrixXd function_conditional(const LatentWorld& w, std::size_t m) {
    require(m < w.n_functions(), "function index out of range");
    Eigen::MatrixXd F = w.functions[m].apply_rows(w.U);
    return softmax_rows(F * w.U.transpose() / w.eta);
}

/** Joint table from a marginal and a row-stochastic conditional. */
inline JointTable make_joint(const Eigen::VectorXd& px, const Eigen::MatrixXd& cond) {
    JointTable jt;
    jt.probs = px.asDiagonal() * cond;
    return jt;
}

inline JointTable joint_table(const LatentWorld& w, std::size_t t, std::size_t m) {
    check_indices(w, t, m);
    return make_joint(subject_marginal(w, t), function_conditional(w, m));
}

/** Categorical draw from a probability vector by inversion. */
inline int draw_index(const Eigen::VectorXd& p, Rng& rng) {
    double u = rng.uniform(), acc = 0.0;
    for (Eigen::Index i = 0; i < p.size(); ++i) {
        acc += p(i);
        if (u < acc) return static_cast<int>(i);
    }
    for (Eigen::Index i = p.size(); i-- > 0;)
        if (p(i) > 0.0) return static_cast<int>(i);
    return static_cast<int>(p.size() - 1);
}

using TokenPair = std::pair<int, int>;

/** Sampler for one (t, m) with the tables cached. */
struct PairSampler {
    Eigen::VectorXd px;
    Eigen::MatrixXd cond;

    PairSampler(const LatentWorld& w, std::size_t t, std::size_t m)
        : px(subject_marginal(w, t)), cond(function_conditional(w, m)) {
        check_indices(w, t, m);
    }
    TokenPair operator()(Rng& rng) const {
        int x = draw_index(px, rng);
        int y = draw_index(cond.row(x).transpose(), rng);
        return {x, y};
    }
};

inline TokenPair sample_pair(const LatentWorld& w, std::size_t t, std::size_t m, Rng& rng) {
    return PairSampler(w, t, m)(rng);
}

inline std::vector<TokenPair> sample_seed_data(const LatentWorld& w, std::size_t t, std::size_t m, long n, Rng& rng) {
    require(n >= 1, "need n >= 1");
    PairSampler s(w, t, m);
    std::vector<TokenPair> out;
    out.reserve(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) out.push_back(s(rng));
    return out;
}

/** KL(p || q) = sum p log(p / q); +infinity when q vanishes where p does not. Rounding below 0 is clamped. */
inline double kl(const JointTable& p, const JointTable& q) {
    require(p.probs.rows() == q.probs.rows() && p.probs.cols() == q.probs.cols(), "table shapes differ");
    double s = 0.0;
    for (Eigen::Index i = 0; i < p.probs.rows(); ++i)
        for (Eigen::Index j = 0; j < p.probs.cols(); ++j) {
            double a = p.probs(i, j), b = q.probs(i, j);
            if (a <= 0.0) continue;
            if (b <= 0.0) return std::numeric_limits<double>::infinity();
            s += a * std::log(a / b);
        }
    return std::max(s, 0.0);
}

// ---------------------------------------------------------------- margins

/** 1 - max over other subjects of the cosine with subject t (inf with a single subject). */
inline double subject_margin(const LatentWorld& w, std::size_t t) {
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t t2 = 0; t2 < w.n_subjects(); ++t2)
        if (t2 != t) best = std::max(best, w.subjects[t].dot(w.subjects[t2]));
    return 1.0 - best;
}

inline double subject_margin(const LatentWorld& w) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < w.n_subjects(); ++t) m = std::min(m, subject_margin(w, t));
    return m;
}

/** min over m of E_t||f_m(u_X)||^2 - max_{m' != m} E_t<f_m'(u_X), f_m(u_X)> under subject t. */
inline double function_margin(const LatentWorld& w, std::size_t t) {
    Eigen::VectorXd px = subject_marginal(w, t);
    std::vector<Eigen::MatrixXd> F;
    for (auto& f : w.functions) F.push_back(f.apply_rows(w.U));
    double out = std::numeric_limits<double>::infinity();
    for (std::size_t m = 0; m < F.size(); ++m) {
        double self = px.dot(F[m].rowwise().squaredNorm());
        double cross = -std::numeric_limits<double>::infinity();
        for (std::size_t m2 = 0; m2 < F.size(); ++m2)
            if (m2 != m) cross = std::max(cross, px.dot(F[m].cwiseProduct(F[m2]).rowwise().sum()));
        out = std::min(out, self - cross);
    }
    return out;
}

inline double function_margin(const LatentWorld& w) {
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < w.n_subjects(); ++t) m = std::min(m, function_margin(w, t));
    return m;
}

struct MarginFilter {
    double min_subject = 0.0;
    double min_function = 0.0;
    int max_tries = 500;
};

/** Resamples worlds until both margins clear the thresholds; reports the attempts used. */
inline LatentWorld sample_filtered_world(const WorldConfig& cfg, const MarginFilter& filt, std::uint64_t seed,
                                         int* tries_out = nullptr) {
    for (int k = 0; k < filt.max_tries; ++k) {
        auto w = sample_world(cfg, stream_seed(seed, 0xF17E4, static_cast<std::uint64_t>(k)));
        if (subject_margin(w) >= filt.min_subject && function_margin(w) >= filt.min_function) {
            if (tries_out) *tries_out = k + 1;
            return w;
        }
    }
    throw NumericError("no world met the margin thresholds within " + std::to_string(filt.max_tries) + " tries");
}

// ---------------------------------------------------------------- discretisation

/** Per-feature quantile cut points; token id = feature offset + bin. */
struct Codebook {
    std::vector<std::string> feature_names;
    std::vector<std::vector<double>> edges;  // interior cut points, strictly increasing
    std::vector<std::string> warnings;

    int bins_of(std::size_t j) const { return static_cast<int>(edges[j].size()) + 1; }
    int offset_of(std::size_t j) const {
        int o = 0;
        for (std::size_t k = 0; k < j; ++k) o += bins_of(k);
        return o;
    }
    int vocabulary() const { return offset_of(edges.size()); }
    int bin(std::size_t j, double v) const {
        return static_cast<int>(std::upper_bound(edges[j].begin(), edges[j].end(), v) - edges[j].begin());
    }
};

struct TokenDataset {
    std::vector<std::vector<int>> tokens;  // one global token id per feature per row
    std::vector<int> labels;
};

/** Linear-interpolated sample quantile (type 7). */
inline double quantile_sorted(const std::vector<double>& s, double q) {
    double pos = q * static_cast<double>(s.size() - 1);
    auto lo = static_cast<std::size_t>(std::floor(pos));
    auto hi = std::min(lo + 1, s.size() - 1);
    return s[lo] + (pos - static_cast<double>(lo)) * (s[hi] - s[lo]);
}

inline Codebook fit_codebook(const Dataset& ds, int bins) {
    require(bins >= 2, "need at least two bins");
    require(ds.rows() >= 1, "cannot discretise an empty dataset");
    Codebook cb;
    cb.feature_names = ds.feature_names;
    for (std::size_t j = 0; j < ds.dim(); ++j) {
        std::vector<double> col(ds.rows());
        for (std::size_t i = 0; i < ds.rows(); ++i)
            col[i] = ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        std::sort(col.begin(), col.end());
        std::vector<double> e;
        if (col.front() == col.back()) {
            cb.warnings.push_back("feature " + ds.feature_names[j] + " is constant; using one bin");
        } else {
            for (int k = 1; k < bins; ++k) {
                double c = quantile_sorted(col, static_cast<double>(k) / bins);
                if (c < col.back() && (e.empty() || c > e.back())) e.push_back(c);
            }
        }
        cb.edges.push_back(std::move(e));
    }
    return cb;
}

inline TokenDataset apply_codebook(const Codebook& cb, const Dataset& ds) {
    require(ds.feature_names == cb.feature_names, "dataset schema differs from codebook");
    TokenDataset td;
    td.labels = ds.labels;
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        std::vector<int> row;
        for (std::size_t j = 0; j < ds.dim(); ++j)
            row.push_back(cb.offset_of(j) +
                          cb.bin(j, ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
        td.tokens.push_back(std::move(row));
    }
    return td;
}

inline std::pair<TokenDataset, Codebook> discretize(const Dataset& ds, int bins) {
    auto cb = fit_codebook(ds, bins);
    return {apply_codebook(cb, ds), cb};
}

// ---------------------------------------------------------------- bundle IO

/** Little-endian float64 blob writer; matrices are stored row-major. */
struct BlobWriter {
    std::vector<char> bytes;

    nlohmann::json put(const Eigen::MatrixXd& M) {
        nlohmann::json ref = {{"offset", bytes.size()}, {"rows", M.rows()}, {"cols", M.cols()}};
        for (Eigen::Index i = 0; i < M.rows(); ++i)
            for (Eigen::Index j = 0; j < M.cols(); ++j) put_double(M(i, j));
        return ref;
    }
    void put_double(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int k = 0; k < 8; ++k) bytes.push_back(static_cast<char>((bits >> (8 * k)) & 0xFF));
    }
};

struct BlobReader {
    std::vector<char> bytes;

    Eigen::MatrixXd get(const nlohmann::json& ref) const {
        auto off = ref.at("offset").get<std::size_t>();
        auto rows = ref.at("rows").get<Eigen::Index>(), cols = ref.at("cols").get<Eigen::Index>();
        if (off + static_cast<std::size_t>(rows * cols) * 8 > bytes.size()) throw ParseError(off, "blob truncated");
        Eigen::MatrixXd M(rows, cols);
        std::size_t p = off;
        for (Eigen::Index i = 0; i < rows; ++i)
            for (Eigen::Index j = 0; j < cols; ++j) {
                std::uint64_t bits = 0;
                for (int k = 0; k < 8; ++k)
                    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[p + static_cast<std::size_t>(k)])) << (8 * k);
                std::memcpy(&M(i, j), &bits, 8);
                p += 8;
            }
        return M;
    }
};

inline void write_bundle(const std::string& prefix, const nlohmann::json& meta, const BlobWriter& blob) {
    std::ofstream j(prefix + ".json");
    std::ofstream b(prefix + ".bin", std::ios::binary);
    if (!j || !b) throw InvalidArgument("cannot write bundle " + prefix);
    j << meta.dump(2) << '\n';
    b.write(blob.bytes.data(), static_cast<std::streamsize>(blob.bytes.size()));
}

inline std::pair<nlohmann::json, BlobReader> read_bundle(const std::string& prefix) {
    std::ifstream j(prefix + ".json");
    std::ifstream b(prefix + ".bin", std::ios::binary);
    if (!j || !b) throw InvalidArgument("cannot open bundle " + prefix);
    nlohmann::json meta = nlohmann::json::parse(j);
    BlobReader r;
    r.bytes.assign(std::istreambuf_iterator<char>(b), std::istreambuf_iterator<char>());
    return {meta, r};
}

inline void save_world(const LatentWorld& w, const std::string& prefix) {
    BlobWriter blob;
    nlohmann::json meta;
    meta["schema"] = "latent_world_v1";
    meta["d"] = w.d;
    meta["r"] = w.r;
    meta["eta"] = w.eta;
    meta["bound_radius"] = w.bound_radius;
    meta["U"] = blob.put(w.U);
    for (auto& z : w.subjects) meta["subjects"].push_back(blob.put(z.transpose()));
    for (auto& f : w.functions) {
        nlohmann::json layers = nlohmann::json::array();
        for (auto& l : f.layers) layers.push_back({{"W1", blob.put(l.W1)}, {"W2", blob.put(l.W2)}});
        meta["functions"].push_back(layers);
    }
    write_bundle(prefix, meta, blob);
}

inline LatentWorld load_world(const std::string& prefix) {
    auto [meta, blob] = read_bundle(prefix);
    if (meta.value("schema", "") != "latent_world_v1")
        throw ParseError(0, "unsupported world schema " + meta.value("schema", std::string("?")));
    LatentWorld w;
    w.d = meta.at("d");
    w.r = meta.at("r");
    w.eta = meta.at("eta");
    w.bound_radius = meta.at("bound_radius");
    w.U = blob.get(meta.at("U"));
    for (auto& z : meta.at("subjects")) w.subjects.push_back(blob.get(z).transpose());
    for (auto& f : meta.at("functions")) {
        FunctionStack fs;
        for (auto& l : f) fs.layers.push_back({blob.get(l.at("W1")), blob.get(l.at("W2"))});
        w.functions.push_back(std::move(fs));
    }
    return w;
}

}  // namespace synthaug
