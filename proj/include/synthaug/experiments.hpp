#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "balance.hpp"
#include "core.hpp"
#include "data.hpp"
#include "dgp.hpp"
#include "risk.hpp"
#include "scaling.hpp"
#include "tfgen.hpp"
#include "json.hpp"

#ifndef SYNTHAUG_BUILD_ID
#define SYNTHAUG_BUILD_ID "dev"
#endif

namespace synthaug {

using nlohmann::json;

// ---------------------------------------------------------------- provenance and versioned files

/** Schemas this build can read, keyed by name with the supported version. */
inline const std::map<std::string, int>& known_schemas() {
    static const std::map<std::string, int> s{{"craft", 1},          {"craft_great", 1}, {"oversample_compare", 1},
                                              {"scaling_curve", 1},  {"scaling_summary", 1}, {"kl_curve", 1},
                                              {"kl_summary", 1},     {"quality", 1}};
    return s;
}

inline std::string config_hash(const json& effective) { return hex64(fnv1a64(effective.dump())); }

/** "# schema=<name>_v1 config_hash=<hash> build=<id>". */
inline std::string provenance_line(const std::string& schema, const std::string& hash) {
    return "# schema=" + schema + "_v" + std::to_string(known_schemas().at(schema)) + " config_hash=" + hash +
           " build=" + SYNTHAUG_BUILD_ID;
}

struct Provenance {
    std::string schema;
    int version = 0;
    std::string config_hash;
    std::string build;
};

/** Parses a provenance line; rejects unknown schema names and unsupported versions. */
inline Provenance parse_provenance(const std::string& line) {
    if (line.rfind("# ", 0) != 0) throw ParseError(0, "missing provenance line");
    Provenance p;
    std::istringstream in(line.substr(2));
    std::string tok;
    while (in >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos) throw ParseError(0, "malformed provenance field " + tok);
        std::string k = tok.substr(0, eq), v = tok.substr(eq + 1);
        if (k == "schema") {
            auto us = v.rfind("_v");
            if (us == std::string::npos) throw ParseError(0, "schema " + v + " has no version");
            p.schema = v.substr(0, us);
            try {
                p.version = std::stoi(v.substr(us + 2));
            } catch (const std::exception&) {
                throw ParseError(0, "schema " + v + " has a malformed version");
            }
        } else if (k == "config_hash") {
            p.config_hash = v;
        } else if (k == "build") {
            p.build = v;
        }
    }
    auto it = known_schemas().find(p.schema);
    if (it == known_schemas().end()) throw ParseError(0, "unknown schema " + p.schema);
    if (it->second != p.version)
        throw ParseError(0, "unsupported version " + std::to_string(p.version) + " of schema " + p.schema);
    return p;
}

/** A versioned CSV artifact: provenance plus header and string cells. */
struct VersionedTable {
    Provenance provenance;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline VersionedTable read_versioned_csv(std::istream& in, const std::string& expected_schema) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(0, "empty file");
    VersionedTable t;
    t.provenance = parse_provenance(line);
    if (t.provenance.schema != expected_schema)
        throw ParseError(0, "expected schema " + expected_schema + ", found " + t.provenance.schema);
    if (!std::getline(in, line)) throw ParseError(0, "missing header row");
    t.header = split_csv_line(line);
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        ++row;
        auto cells = split_csv_line(line);
        if (cells.size() != t.header.size()) throw ParseError(row, "wrong cell count");
        t.rows.push_back(std::move(cells));
    }
    return t;
}

inline VersionedTable load_versioned_csv(const std::string& path, const std::string& expected_schema) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    return read_versioned_csv(in, expected_schema);
}

/** Reads a JSON artifact and checks its embedded schema tag. */
inline json load_versioned_json(const std::string& path, const std::string& expected_schema) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    json j = json::parse(in);
    auto p = parse_provenance("# schema=" + j.value("schema", std::string("?")));
    if (p.schema != expected_schema) throw ParseError(0, "expected schema " + expected_schema + ", found " + p.schema);
    return j;
}

/** Loads a dataset CSV, accepting either a plain file or one written by craft-gen with a provenance line. */
inline Dataset load_dataset_csv(const std::string& path, const std::string& label) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    if (in.peek() == '#') {
        std::string line;
        std::getline(in, line);
        auto p = parse_provenance(line);
        if (p.schema != "craft") throw ParseError(0, "expected a dataset CSV, found schema " + p.schema);
    }
    return read_csv(in, label);
}

// ---------------------------------------------------------------- configuration

/** Typed access to a JSON object that rejects keys nobody read. */
class ConfigReader {
public:
    ConfigReader(const json& j, std::string where) : j_(j), where_(std::move(where)) {
        if (!j_.is_object()) throw InvalidArgument(where_ + " must be a JSON object");
    }

    bool has(const std::string& key) const { return j_.contains(key); }

    template <class T>
    T get(const std::string& key, const T& fallback) {
        used_.insert(key);
        if (!j_.contains(key)) return fallback;
        try {
            return j_.at(key).get<T>();
        } catch (const json::exception& e) {
            throw InvalidArgument(where_ + "." + key + ": " + e.what());
        }
    }

    const json& raw(const std::string& key) {
        used_.insert(key);
        return j_.at(key);
    }

    ConfigReader sub(const std::string& key) {
        used_.insert(key);
        static const json empty = json::object();
        return ConfigReader(j_.contains(key) ? j_.at(key) : empty, where_ + "." + key);
    }

    /** Throws on any key that was never requested. */
    void finish() const {
        for (auto it = j_.begin(); it != j_.end(); ++it)
            if (!used_.count(it.key())) throw InvalidArgument("unknown config key " + where_ + "." + it.key());
    }

private:
    const json& j_;
    std::string where_;
    std::set<std::string> used_;
};

struct RunOptions {
    std::uint64_t seed = 0;
    bool seed_given = false;  // an explicit seed overrides the one in the config
    int jobs = 1;
    std::string out_dir = ".";
};

inline std::ofstream open_out(const RunOptions& o, const std::string& name) {
    std::filesystem::create_directories(o.out_dir);
    auto path = (std::filesystem::path(o.out_dir) / name).string();
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    return f;
}

inline std::string fmt(double v) { return format_double(v); }

// ---------------------------------------------------------------- world config helpers

inline WorldConfig read_world(ConfigReader c, WorldConfig w) {
    w.d = c.get("d", w.d);
    w.r = c.get("r", w.r);
    w.n_subjects = c.get("n_subjects", w.n_subjects);
    w.n_functions = c.get("n_functions", w.n_functions);
    w.L0 = c.get("L0", w.L0);
    w.hidden = c.get("hidden", w.hidden);
    w.eta = c.get("eta", w.eta);
    w.bound_radius = c.get("bound_radius", w.bound_radius);
    w.sup_samples = c.get("sup_samples", w.sup_samples);
    w.sup_safety = c.get("sup_safety", w.sup_safety);
    c.finish();
    return w;
}

inline MarginFilter read_filter(ConfigReader c, MarginFilter f) {
    f.min_subject = c.get("min_subject", f.min_subject);
    f.min_function = c.get("min_function", f.min_function);
    f.max_tries = c.get("max_tries", f.max_tries);
    c.finish();
    return f;
}

inline json world_json(const WorldConfig& w) {
    return {{"d", w.d},          {"r", w.r},         {"n_subjects", w.n_subjects}, {"n_functions", w.n_functions},
            {"L0", w.L0},        {"hidden", w.hidden}, {"eta", w.eta},           {"bound_radius", w.bound_radius},
            {"sup_samples", w.sup_samples}, {"sup_safety", w.sup_safety}};
}

// ---------------------------------------------------------------- craft-gen

struct CraftGenConfig {
    long n = 8000;
    std::string format = "csv";  // csv | great
};

inline CraftGenConfig read_craft_gen(const json& j) {
    ConfigReader c(j, "config");
    CraftGenConfig cfg;
    c.get<std::uint64_t>("seed", 0);
    cfg.n = c.get("n", cfg.n);
    cfg.format = c.get("format", cfg.format);
    c.finish();
    require(cfg.format == "csv" || cfg.format == "great", "format must be csv or great");
    require(cfg.n >= 2, "make_craft needs n >= 2");
    return cfg;
}

inline void run_craft_gen(const json& j, const RunOptions& o, const std::string& hash) {
    auto cfg = read_craft_gen(j);
    auto ds = make_craft(cfg.n, o.seed);
    if (cfg.format == "csv") {
        auto f = open_out(o, "craft.csv");
        f << provenance_line("craft", hash) << '\n';
        write_csv(f, ds);
    } else {
        auto f = open_out(o, "craft.txt");
        f << provenance_line("craft_great", hash) << '\n';
        for (auto& rec : serialize_great(ds)) f << rec << '\n';
    }
}

// ---------------------------------------------------------------- oversample-compare

inline const std::vector<std::string>& known_methods() {
    static const std::vector<std::string> m{"raw", "ros", "smote", "adasyn", "oracle_llm", "tf_gen"};
    return m;
}

inline bool is_generator_method(const std::string& m) { return m == "oracle_llm" || m == "tf_gen"; }

struct CompareConfig {
    std::string dataset = "craft";  // craft | dgp-tokens | csv
    std::vector<double> ratios{1, 2, 3, 4, 5, 6, 7, 8, 9, 10};
    long n_min = 100;
    std::vector<std::string> methods{"raw", "ros", "smote", "adasyn", "oracle_llm"};
    int seeds = 5;
    std::vector<long> N{0};
    double alpha = 1.0 / 3.0;
    std::size_t k = 5;
    bool standardize = false;
    double test_fraction = 0.3;
    long craft_n = 8000;
    std::string csv_path, csv_label = "Y";
    int minority_label = 1;
    WorldConfig world = kl_world_defaults();
    MarginFilter filter{0.3, 0.3, 500};
    long test_per_label = 1000;
    double stationarity_tol = 1e-7;
    FitConfig fit;
};

inline CompareConfig read_compare(const json& j) {
    ConfigReader c(j, "config");
    CompareConfig cfg;
    c.get<std::uint64_t>("seed", 0);
    cfg.dataset = c.get("dataset", cfg.dataset);
    cfg.ratios = c.get("ratios", cfg.ratios);
    cfg.n_min = c.get("n_min", cfg.n_min);
    cfg.methods = c.get("methods", cfg.methods);
    cfg.seeds = c.get("seeds", cfg.seeds);
    cfg.N = c.get("N", cfg.N);
    cfg.alpha = c.get("alpha", cfg.alpha);
    cfg.k = c.get("k", cfg.k);
    cfg.standardize = c.get("standardize", cfg.standardize);
    cfg.test_fraction = c.get("test_fraction", cfg.test_fraction);
    cfg.craft_n = c.get("craft_n", cfg.craft_n);
    cfg.csv_path = c.get("csv_path", cfg.csv_path);
    cfg.csv_label = c.get("csv_label", cfg.csv_label);
    cfg.minority_label = c.get("minority_label", cfg.minority_label);
    cfg.world = read_world(c.sub("world"), cfg.world);
    cfg.filter = read_filter(c.sub("filter"), cfg.filter);
    cfg.test_per_label = c.get("test_per_label", cfg.test_per_label);
    cfg.stationarity_tol = c.get("stationarity_tol", cfg.stationarity_tol);
    {
        auto f = c.sub("fit");
        cfg.fit.max_iters = f.get("max_iters", cfg.fit.max_iters);
        cfg.fit.tol = f.get("tol", cfg.fit.tol);
        f.finish();
    }
    c.finish();

    require(cfg.dataset == "craft" || cfg.dataset == "dgp-tokens" || cfg.dataset == "csv",
            "dataset must be craft, dgp-tokens or csv");
    require(!cfg.ratios.empty() && !cfg.methods.empty() && !cfg.N.empty(), "ratios, methods and N must be non-empty");
    require(cfg.seeds >= 1, "seeds must be positive");
    require(cfg.n_min >= 2, "n_min must be at least 2");
    for (double r : cfg.ratios) require(r >= 1.0, "ratios must be at least 1");
    for (long n : cfg.N) require(n >= 0, "N must be nonnegative");
    require(cfg.alpha >= 0.0 && cfg.alpha <= 1.0, "alpha must lie in [0, 1]");
    require(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0, "test_fraction must lie in (0, 1)");
    require(cfg.minority_label == 0 || cfg.minority_label == 1, "minority_label must be 0 or 1");
    for (auto& m : cfg.methods) {
        require(std::find(known_methods().begin(), known_methods().end(), m) != known_methods().end(),
                "unknown method " + m);
        if (cfg.dataset == "csv") require(!is_generator_method(m), "method " + m + " needs a known law; csv has none");
        if (cfg.dataset == "craft") require(m != "tf_gen", "tf_gen generates token data; use dataset dgp-tokens");
    }
    if (cfg.dataset == "csv") require(!cfg.csv_path.empty(), "csv dataset needs csv_path");
    if (cfg.dataset == "dgp-tokens") require(cfg.world.n_subjects >= 2, "dgp-tokens needs two subjects");
    return cfg;
}

struct CompareRow {
    double ratio = 1.0;
    long n_min = 0, n_maj = 0;
    std::string method;
    long N = 0;
    double alpha = 0.0;
    int seed = 0;
    double balanced = 0.0, minority = 0.0;
    bool converged = false;
};

namespace detail {

/** Raw training data, the balanced test set and, when the law is known, per-label samplers. */
struct CompareInstance {
    Dataset raw, test;
    std::vector<TokenPair> raw_pairs;  // dgp-tokens only, aligned with raw rows
    std::function<Dataset(int label, long count, Rng&)> oracle;
    std::shared_ptr<LatentWorld> world;
};

inline Dataset token_rows(const LatentWorld& w, const std::vector<TokenPair>& pairs, int label) {
    Dataset ds;
    for (int j = 0; j < w.r; ++j) ds.feature_names.push_back("ux" + std::to_string(j + 1));
    for (int j = 0; j < w.r; ++j) ds.feature_names.push_back("uy" + std::to_string(j + 1));
    ds.features.resize(static_cast<Eigen::Index>(pairs.size()), 2 * w.r);
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        ds.features.row(static_cast<Eigen::Index>(i)) << w.U.row(pairs[i].first), w.U.row(pairs[i].second);
    }
    ds.labels.assign(pairs.size(), label);
    return ds;
}

inline std::vector<TokenPair> draw_pairs(const Eigen::VectorXd& px, const Eigen::MatrixXd& cond, long n, Rng& rng) {
    std::vector<TokenPair> out;
    for (long i = 0; i < n; ++i) {
        int x = draw_index(px, rng);
        out.push_back({x, draw_index(cond.row(x).transpose(), rng)});
    }
    return out;
}

/** Draws `need` rows per label without replacement from `pool` rows carrying that label. */
inline Dataset take_labels(const Dataset& pool, const std::map<int, long>& need, Rng& rng) {
    std::vector<std::size_t> pick;
    for (auto [label, count] : need) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < pool.rows(); ++i)
            if (pool.labels[i] == label) idx.push_back(i);
        require(static_cast<long>(idx.size()) >= count,
                "training pool has " + std::to_string(idx.size()) + " rows of label " + std::to_string(label) +
                    ", need " + std::to_string(count));
        std::shuffle(idx.begin(), idx.end(), rng.engine());
        pick.insert(pick.end(), idx.begin(), idx.begin() + count);
    }
    return pool.subset(pick);
}

inline std::pair<Dataset, Dataset> split_holdout(const Dataset& ds, double test_fraction, Rng& rng) {
    std::vector<std::size_t> idx(ds.rows());
    std::iota(idx.begin(), idx.end(), 0);
    std::shuffle(idx.begin(), idx.end(), rng.engine());
    auto n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(ds.rows())));
    std::vector<std::size_t> test(idx.begin(), idx.begin() + static_cast<long>(n_test)),
        train(idx.begin() + static_cast<long>(n_test), idx.end());
    std::sort(test.begin(), test.end());
    std::sort(train.begin(), train.end());
    return {ds.subset(train), ds.subset(test)};
}

inline CompareInstance make_instance(const CompareConfig& cfg, const Dataset* csv_data, long n_maj,
                                     std::uint64_t seed) {
    CompareInstance inst;
    Rng rng(seed);
    const int minority = cfg.minority_label, majority = 1 - minority;
    std::map<int, long> need{{minority, cfg.n_min}, {majority, n_maj}};
    if (cfg.dataset == "craft" || cfg.dataset == "csv") {
        Dataset full;
        double threshold = 0.0;
        if (cfg.dataset == "craft") {
            full = make_craft(cfg.craft_n, stream_seed(seed, 1), &threshold);
        } else {
            full = *csv_data;
        }
        auto [train, test] = split_holdout(full, cfg.test_fraction, rng);
        inst.raw = take_labels(train, need, rng);
        inst.test = std::move(test);
        if (cfg.dataset == "craft")
            inst.oracle = [threshold](int label, long count, Rng& r) {
                return sample_craft_label(label, count, threshold, r);
            };
        return inst;
    }
    // dgp-tokens: label y is the world with subject y and function y.
    auto w = std::make_shared<LatentWorld>(sample_filtered_world(cfg.world, cfg.filter, stream_seed(seed, 2)));
    inst.world = w;
    std::vector<PairSampler> samplers{PairSampler(*w, 0, 0), PairSampler(*w, 1, 1)};
    for (int label : {0, 1}) {
        auto& s = samplers[static_cast<std::size_t>(label)];
        auto pairs = draw_pairs(s.px, s.cond, need[label], rng);
        inst.raw = concat(inst.raw, token_rows(*w, pairs, label));
        inst.raw_pairs.insert(inst.raw_pairs.end(), pairs.begin(), pairs.end());
        inst.test = concat(inst.test, token_rows(*w, draw_pairs(s.px, s.cond, cfg.test_per_label, rng), label));
    }
    inst.oracle = [w, samplers](int label, long count, Rng& r) {
        auto& s = samplers[static_cast<std::size_t>(label)];
        return token_rows(*w, draw_pairs(s.px, s.cond, count, r), label);
    };
    return inst;
}

/** Per-feature affine map to zero mean and unit variance on the raw data, for neighbour searches. */
struct Standardizer {
    Eigen::RowVectorXd mean, scale;

    explicit Standardizer(const Dataset& ds) {
        mean = ds.features.colwise().mean();
        Eigen::MatrixXd c = ds.features.rowwise() - mean;
        scale = (c.colwise().squaredNorm() / std::max<double>(1.0, static_cast<double>(ds.rows()) - 1.0)).cwiseSqrt();
        for (Eigen::Index j = 0; j < scale.size(); ++j)
            if (scale(j) == 0.0) scale(j) = 1.0;
    }
    Dataset forward(Dataset ds) const {
        ds.features = (ds.features.rowwise() - mean).array().rowwise() / scale.array();
        return ds;
    }
    Dataset backward(Dataset ds) const {
        ds.features = (ds.features.array().rowwise() * scale.array()).matrix().rowwise() + mean;
        return ds;
    }
};

}  // namespace detail

/** Runs every (ratio, seed) cell; rows come back in (ratio, seed, method, N) order. */
inline std::vector<CompareRow> oversample_compare(const CompareConfig& cfg, std::uint64_t master, int jobs = 1) {
    Dataset csv_data;
    if (cfg.dataset == "csv") csv_data = load_dataset_csv(cfg.csv_path, cfg.csv_label);
    const std::size_t R = cfg.ratios.size(), S = static_cast<std::size_t>(cfg.seeds);
    std::vector<std::vector<CompareRow>> cells(R * S);
    parallel_for(R * S, jobs, [&](std::size_t cell) {
        std::size_t ri = cell / S, si = cell % S;
        long n_maj = std::lround(cfg.ratios[ri] * static_cast<double>(cfg.n_min));
        // The dataset depends on the seed only, so every ratio shares its test set and law.
        auto inst = detail::make_instance(cfg, &csv_data, n_maj, stream_seed(master, 0, si));
        auto part = partition_groups(inst.raw, PartitionMode::ByLabel);
        auto test_part = partition_groups(inst.test, PartitionMode::ByLabel);
        auto plan = plan_balancing(imbalance_profile(part.counts()), 0, cfg.alpha);
        const std::string minority = label_group(cfg.minority_label);
        std::size_t mg = part.find(minority);
        auto min_idx = part.members(mg);
        std::vector<std::size_t> maj_idx;
        for (std::size_t i = 0; i < inst.raw.rows(); ++i)
            if (part.group_of[i] != mg) maj_idx.push_back(i);
        long m = plan.m.at(minority);

        std::optional<TransformerStack> stack;
        std::map<int, std::pair<Eigen::VectorXd, Eigen::MatrixXd>> tf_law;
        auto tf_sampler = [&](int label, long count, Rng& r) {
            const auto& w = *inst.world;
            if (!stack) stack = build_generator(w, default_omega(w.d, w.r));
            if (!tf_law.count(label)) {
                std::vector<TokenPair> ctx;
                for (std::size_t i = 0; i < inst.raw.rows(); ++i)
                    if (inst.raw.labels[i] == label) ctx.push_back(inst.raw_pairs[i]);
                TokenLayout L{w.r, static_cast<int>(w.n_functions())};
                auto law = generated_distribution(*stack, encode_tokens(ctx, w, L), w, w.eta, cfg.stationarity_tol);
                Eigen::VectorXd px = law.Q.probs.rowwise().sum();
                Eigen::MatrixXd cond = law.Q.probs;
                for (Eigen::Index x = 0; x < cond.rows(); ++x)
                    if (px(x) > 0.0) cond.row(x) /= px(x);
                tf_law[label] = {px, cond};
            }
            auto& [px, cond] = tf_law[label];
            return detail::token_rows(w, detail::draw_pairs(px, cond, count, r), label);
        };

        for (std::size_t mi = 0; mi < cfg.methods.size(); ++mi) {
            const auto& method = cfg.methods[mi];
            std::vector<long> Ns = is_generator_method(method) ? cfg.N : std::vector<long>{0};
            for (std::size_t ni = 0; ni < Ns.size(); ++ni) {
                const long N = Ns[ni];
                Rng rng(stream_seed(master, cell + 1, mi * 1000 + ni));
                GroupedRows ovs{empty_like(inst.raw), {}}, aug{empty_like(inst.raw), {}};
                if (m == 0 && !is_generator_method(method)) {
                    // Already balanced: every classical method reduces to the raw fit.
                } else if (method == "ros") {
                    ovs.data = ros(inst.raw, min_idx, m, rng);
                } else if (method == "smote" || method == "adasyn") {
                    SmoteOptions opt;
                    opt.k = cfg.k;
                    std::optional<detail::Standardizer> z;
                    Dataset base = inst.raw;
                    if (cfg.standardize) {
                        z.emplace(inst.raw);
                        base = z->forward(inst.raw);
                    }
                    ovs.data = method == "smote" ? smote(base, min_idx, m, opt, rng)
                                                 : adasyn(base, min_idx, maj_idx, m, opt, rng);
                    if (z) ovs.data = z->backward(ovs.data);
                } else if (is_generator_method(method)) {
                    SyntheticPool pool{empty_like(inst.raw), {}, method};
                    auto gplan = plan_balancing(imbalance_profile(part.counts()), N, cfg.alpha);
                    for (const auto& g : part.groups) {
                        long need = gplan.m.at(g) + N;
                        if (need == 0) continue;
                        int label = std::stoi(g);
                        Dataset drawn = method == "oracle_llm" ? inst.oracle(label, need, rng) : tf_sampler(label, need, rng);
                        pool.dataset = concat(pool.dataset, drawn);
                        pool.group_of.insert(pool.group_of.end(), drawn.rows(), g);
                    }
                    auto sel = pool_select(pool, gplan, rng);
                    ovs = sel.oversample;
                    aug = sel.augment;
                }
                ovs.group_of.assign(ovs.data.rows(), minority);
                if (is_generator_method(method)) {
                    ovs.group_of.clear();
                    for (int y : ovs.data.labels) ovs.group_of.push_back(label_group(y));
                    aug.group_of.clear();
                    for (int y : aug.data.labels) aug.group_of.push_back(label_group(y));
                }
                auto tagged = assemble(inst.raw, part, ovs, aug);
                double alpha = aug.data.rows() > 0 ? cfg.alpha : 0.0;
                auto fit = fit_logistic(combined_weights(tagged, alpha), cfg.fit);
                auto rep = evaluate(fit.theta, inst.test, test_part, minority);
                CompareRow row;
                row.ratio = cfg.ratios[ri];
                row.n_min = cfg.n_min;
                row.n_maj = n_maj;
                row.method = method;
                row.N = N;
                row.alpha = alpha;
                row.seed = static_cast<int>(si);
                row.balanced = rep.balanced;
                row.minority = rep.minority;
                row.converged = fit.converged && !fit.diverged && !fit.separable;
                cells[cell].push_back(row);
            }
        }
    });
    std::vector<CompareRow> out;
    for (auto& c : cells) out.insert(out.end(), c.begin(), c.end());
    return out;
}

inline void write_compare(std::ostream& f, const std::vector<CompareRow>& rows, const std::string& hash) {
    f << provenance_line("oversample_compare", hash) << '\n';
    f << "ratio,n_min,n_maj,method,N,alpha,seed,balanced,minority,converged\n";
    for (auto& r : rows)
        f << fmt(r.ratio) << ',' << r.n_min << ',' << r.n_maj << ',' << r.method << ',' << r.N << ',' << fmt(r.alpha)
          << ',' << r.seed << ',' << fmt(r.balanced) << ',' << fmt(r.minority) << ',' << (r.converged ? 1 : 0) << '\n';
}

// ---------------------------------------------------------------- scaling

struct ScalingSweep {
    std::string vary = "N";  // N | n_tot
    std::vector<long> grid{64, 128, 256, 512, 1024, 2048, 4096, 8192, 16384};
    int replicates = 100;
};

inline ScalingSweep read_sweep(ConfigReader& c) {
    ScalingSweep s;
    s.vary = c.get("vary", s.vary);
    s.grid = c.get("grid", s.grid);
    s.replicates = c.get("replicates", s.replicates);
    require(s.vary == "N" || s.vary == "n_tot", "vary must be N or n_tot");
    require(s.grid.size() >= 3, "slope fit needs a grid of at least three sizes");
    for (std::size_t i = 1; i < s.grid.size(); ++i) require(s.grid[i] > s.grid[i - 1], "grid must be strictly increasing");
    require(s.grid.front() >= 1, "grid sizes must be positive");
    require(s.replicates >= 10, "replicates must be at least 10");
    return s;
}

/** Counts scaled to total `n_tot` in the configured proportions (each at least 1). */
inline std::vector<long> scale_counts(const std::vector<long>& counts, long n_tot) {
    double tot = static_cast<double>(std::accumulate(counts.begin(), counts.end(), 0L));
    std::vector<long> out;
    for (long c : counts) out.push_back(std::max(1L, std::lround(static_cast<double>(n_tot) * c / tot)));
    return out;
}

inline double read_lambda(ConfigReader& c) {
    if (!c.has("lambda")) return -1.0;
    const json& v = c.raw("lambda");
    if (v.is_string()) {
        require(v.get<std::string>() == "auto", "lambda must be a number or \"auto\"");
        return -1.0;
    }
    require(v.is_number() && v.get<double>() >= 0.0, "lambda must be a nonnegative number or \"auto\"");
    return v.get<double>();
}

inline GaussianSeqConfig read_gauss(ConfigReader& c) {
    GaussianSeqConfig g;
    g.J = c.get("J", g.J);
    g.r = c.get("r", g.r);
    g.p = c.get("p", g.p);
    g.amplitude = c.get("amplitude", g.amplitude);
    g.delta = c.get("delta", g.delta);
    g.sigma = c.get("sigma", g.sigma);
    g.sigma_tilde = c.get("sigma_tilde", g.sigma_tilde);
    g.counts = c.get("counts", g.counts);
    g.N = c.get("N", g.N);
    g.alpha = c.get("alpha", g.alpha);
    g.lambda = read_lambda(c);
    g.c = c.get("c", g.c);
    require(g.p >= 2, "p must be at least 2");
    require(g.p != g.r, "p must differ from r");
    return g;
}

inline FourierSimConfig read_fourier(ConfigReader& c) {
    FourierSimConfig f;
    f.q_max = c.get("q_max", f.q_max);
    f.dim = c.get("dim", f.dim);
    f.r = c.get("r", f.r);
    f.p = c.get("p", f.p);
    f.zero_coef = c.get("zero_coef", f.zero_coef);
    f.delta = c.get("delta", f.delta);
    f.sigma = c.get("sigma", f.sigma);
    f.sigma_tilde = c.get("sigma_tilde", f.sigma_tilde);
    f.counts = c.get("counts", f.counts);
    f.group_scale = c.get("group_scale", f.group_scale);
    f.N = c.get("N", f.N);
    f.alpha = c.get("alpha", f.alpha);
    f.lambda = read_lambda(c);
    f.c = c.get("c", f.c);
    f.tail_tol = c.get("tail_tol", f.tail_tol);
    return f;
}

struct ScalingOutput {
    std::vector<CurvePoint> curve;
    SlopeFit fit;
    double beta = 0.0;
    double exponent = 0.0;
    double bias_floor = 0.0;
    std::vector<double> excess_misclass;  // sequence model only
};

template <class Cfg, class Problem>
ScalingOutput run_sweep(const Cfg& base, const ScalingSweep& sw, Problem problem, std::uint64_t seed, int jobs) {
    ScalingOutput out;
    auto make = [&](long size) {
        auto c = base;
        if (sw.vary == "N")
            c.N = size;
        else
            c.counts = scale_counts(base.counts, size);
        return problem(c);
    };
    out.curve = excess_curve(make, base.schedule(), base.lambda, sw.grid, sw.replicates, seed, jobs);
    out.fit = fit_curve(out.curve);
    out.beta = base.schedule().beta();
    out.exponent = base.schedule().exponent();
    out.bias_floor = make(sw.grid.back()).bias_floor();
    return out;
}

inline void write_scaling(const RunOptions& o, const std::string& hash, const std::string& model,
                          const ScalingOutput& s) {
    {
        auto f = open_out(o, "curve.csv");
        f << provenance_line("scaling_curve", hash) << '\n' << "size,replicate,risk\n";
        for (auto& p : s.curve)
            for (std::size_t k = 0; k < p.risks.size(); ++k)
                f << static_cast<long>(p.size) << ',' << k << ',' << fmt(p.risks[k]) << '\n';
    }
    json j;
    j["schema"] = "scaling_summary_v1";
    j["config_hash"] = hash;
    j["build"] = SYNTHAUG_BUILD_ID;
    j["model"] = model;
    j["slope"] = s.fit.slope;
    j["intercept"] = s.fit.intercept;
    j["r2"] = s.fit.r2;
    j["beta"] = s.beta;
    j["lambda_exponent"] = s.exponent;
    j["bias_floor"] = s.bias_floor;
    for (std::size_t i = 0; i < s.curve.size(); ++i) {
        auto& p = s.curve[i];
        json pt{{"size", static_cast<long>(p.size)}, {"lambda", p.lambda}, {"mean", p.mean}, {"sd", p.sd},
                {"analytic", p.analytic}};
        if (!s.excess_misclass.empty()) pt["excess_misclass"] = s.excess_misclass[i];
        j["points"].push_back(pt);
    }
    auto f = open_out(o, "summary.json");
    f << j.dump(2) << '\n';
}

inline ScalingOutput run_scaling_gauss(const json& j, const RunOptions& o) {
    ConfigReader c(j, "config");
    c.get<std::uint64_t>("seed", 0);
    auto g = read_gauss(c);
    auto sw = read_sweep(c);
    c.finish();
    auto out = run_sweep(g, sw, [](const GaussianSeqConfig& x) { return gaussian_problem(x); }, o.seed, o.jobs);
    if (sw.vary == "N") out.excess_misclass = gaussian_misclass_curve(g, sw.grid, sw.replicates, o.seed, o.jobs);
    return out;
}

inline ScalingOutput run_scaling_fourier(const json& j, const RunOptions& o) {
    ConfigReader c(j, "config");
    c.get<std::uint64_t>("seed", 0);
    auto f = read_fourier(c);
    auto sw = read_sweep(c);
    c.finish();
    fourier_problem(f);  // validates the lattice before the sweep
    return run_sweep(f, sw, [](const FourierSimConfig& x) { return fourier_problem(x); }, o.seed, o.jobs);
}

// ---------------------------------------------------------------- tf-kl

inline KlExperimentConfig read_kl(const json& j) {
    ConfigReader c(j, "config");
    KlExperimentConfig k;
    c.get<std::uint64_t>("seed", 0);
    k.world = read_world(c.sub("world"), k.world);
    k.filter = read_filter(c.sub("filter"), k.filter);
    k.n_grid = c.get("n_grid", k.n_grid);
    k.replicates = c.get("replicates", k.replicates);
    k.tau = c.get("tau", k.tau);
    k.omega = c.get("omega", k.omega);
    k.recovery_tol = c.get("recovery_tol", k.recovery_tol);
    k.stationarity_tol = c.get("stationarity_tol", k.stationarity_tol);
    c.finish();
    require(!k.n_grid.empty(), "n_grid must be non-empty");
    for (long n : k.n_grid) require(n >= 1, "n_grid entries must be positive");
    require(k.replicates >= 1, "replicates must be positive");
    return k;
}

inline void write_kl(const RunOptions& o, const std::string& hash, const KlExperimentResult& r) {
    {
        auto f = open_out(o, "kl.csv");
        f << provenance_line("kl_curve", hash) << '\n' << "n,replicate,kl,subject_recovered,function_recovered\n";
        for (auto& row : r.rows)
            f << row.n << ',' << row.replicate << ',' << fmt(row.kl) << ',' << (row.subject_recovered ? 1 : 0) << ','
              << (row.function_recovered ? 1 : 0) << '\n';
    }
    json j;
    j["schema"] = "kl_summary_v1";
    j["config_hash"] = hash;
    j["build"] = SYNTHAUG_BUILD_ID;
    j["world_tries"] = r.world_tries;
    j["max_stationarity_gap"] = r.max_stationarity_gap;
    for (auto& s : r.summary)
        j["summary"].push_back({{"n", s.n}, {"mean_kl", s.mean_kl}, {"sd_kl", s.sd_kl}, {"recovery", s.recovery}});
    auto f = open_out(o, "kl_summary.json");
    f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- quality

struct QualityConfig {
    std::string loss = "squared";  // squared | logistic
    std::vector<std::string> names{"0", "1"};
    std::vector<long> counts{100, 600};
    std::vector<std::vector<double>> theta{{1.0, -0.5, 0.3}, {0.4, 0.2, -0.6}};
    std::vector<std::vector<double>> theta_tilde{{1.3, -0.7, 0.4}, {0.5, 0.0, -0.6}};
    std::vector<std::vector<double>> S{{1.0, 0.2, 0.0}, {0.2, 0.5, 0.1}, {0.0, 0.1, 2.0}};
    std::vector<std::vector<double>> S_tilde;  // empty: shared with S
    double noise = 1.0;
    QualityMcConfig mc;
    long balanced_n = 100000;  // logistic theta_bal fit
};

inline Eigen::MatrixXd to_matrix(const std::vector<std::vector<double>>& rows) {
    require(!rows.empty(), "matrix must be non-empty");
    Eigen::MatrixXd M(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        require(rows[i].size() == rows[0].size(), "ragged matrix");
        for (std::size_t k = 0; k < rows[i].size(); ++k)
            M(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = rows[i][k];
    }
    return M;
}

inline Eigen::VectorXd to_vector(const std::vector<double>& v) {
    return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

inline QualityConfig read_quality(const json& j) {
    ConfigReader c(j, "config");
    QualityConfig q;
    c.get<std::uint64_t>("seed", 0);
    q.loss = c.get("loss", q.loss);
    q.names = c.get("names", q.names);
    q.counts = c.get("counts", q.counts);
    q.theta = c.get("theta", q.theta);
    q.theta_tilde = c.get("theta_tilde", q.theta_tilde);
    q.S = c.get("S", q.S);
    q.S_tilde = c.get("S_tilde", q.S_tilde);
    q.noise = c.get("noise", q.noise);
    q.mc.samples = c.get("mc_samples", q.mc.samples);
    q.mc.batches = c.get("mc_batches", q.mc.batches);
    q.balanced_n = c.get("balanced_n", q.balanced_n);
    c.finish();
    require(q.loss == "squared" || q.loss == "logistic", "loss must be squared or logistic");
    std::size_t G = q.names.size();
    require(G >= 1 && q.counts.size() == G && q.theta.size() == G && q.theta_tilde.size() == G,
            "names, counts, theta and theta_tilde need one entry per group");
    auto p = q.S.size();
    require(to_matrix(q.S).cols() == static_cast<Eigen::Index>(p), "S must be square");
    for (std::size_t g = 0; g < G; ++g)
        require(q.theta[g].size() == p && q.theta_tilde[g].size() == p, "coefficient length must match S");
    return q;
}

struct QualityOutput {
    Eigen::VectorXd theta_bal;
    BiasDiagnostics closed, mc;
    std::map<std::string, double> shared, rho;
    bool shared_cov = true;
};

inline QualityOutput run_quality(const QualityConfig& q, std::uint64_t seed, int jobs) {
    std::map<std::string, long> counts;
    for (std::size_t g = 0; g < q.names.size(); ++g) counts[q.names[g]] = q.counts[g];
    auto prof = imbalance_profile(counts);
    Eigen::MatrixXd S = to_matrix(q.S), St = q.S_tilde.empty() ? S : to_matrix(q.S_tilde);
    QualityOutput out;
    out.rho = prof.rho;
    out.shared_cov = q.S_tilde.empty();
    QualityMcConfig mc = q.mc;
    mc.seed = seed;
    mc.jobs = jobs;
    std::vector<GroupLaws> laws;
    if (q.loss == "squared") {
        std::vector<LinearGroup> lg;
        for (std::size_t g = 0; g < q.names.size(); ++g)
            lg.push_back({q.names[g], prof.rho.at(q.names[g]), S, St, to_vector(q.theta[g]), to_vector(q.theta_tilde[g])});
        out.theta_bal = linear_theta_bal(lg);
        out.closed = quality_linear_closed(lg, out.theta_bal);
        if (out.shared_cov) out.shared = quality_linear_shared(lg, S, out.theta_bal);
        for (auto& g : lg)
            laws.push_back({g.name, g.rho, linear_gaussian_sampler(S, g.theta, q.noise),
                            linear_gaussian_sampler(St, g.theta_tilde, q.noise)});
        out.mc = quality_term_mc(laws, out.theta_bal, LossKind::Squared, mc);
        return out;
    }
    // Logistic: Gaussian covariates N(0, S) and N(0, S~) with logistic labels; theta_bal fitted on a large
    // balanced sample.
    std::vector<LogisticGroup> lg;
    auto cov_draw = [](const Eigen::MatrixXd& C) {
        Eigen::MatrixXd L = Eigen::LLT<Eigen::MatrixXd>(C).matrixL();
        return [L](Rng& rng, long n) {
            Eigen::MatrixXd Z(n, L.rows());
            for (long i = 0; i < n; ++i)
                for (Eigen::Index k = 0; k < L.rows(); ++k) Z(i, k) = rng.normal();
            return Eigen::MatrixXd(Z * L.transpose());
        };
    };
    for (std::size_t g = 0; g < q.names.size(); ++g)
        lg.push_back({q.names[g], prof.rho.at(q.names[g]), cov_draw(S), cov_draw(St), to_vector(q.theta[g]),
                      to_vector(q.theta_tilde[g])});
    auto logistic_sampler = [](std::function<Eigen::MatrixXd(Rng&, long)> xs, Eigen::VectorXd th) -> GroupSampler {
        return [xs, th](Rng& rng, long n, Eigen::MatrixXd& X, Eigen::VectorXd& y) {
            X = xs(rng, n);
            y.resize(n);
            for (long i = 0; i < n; ++i) y(i) = rng.uniform() < sigmoid(X.row(i).dot(th)) ? 1.0 : 0.0;
        };
    };
    WeightedData bal;
    for (std::size_t g = 0; g < lg.size(); ++g) {
        Rng rng(stream_seed(seed, 0xBA1, g));
        Eigen::MatrixXd X;
        Eigen::VectorXd y;
        logistic_sampler(lg[g].x_raw, lg[g].theta)(rng, q.balanced_n, X, y);
        bal.append(X, y, 1.0 / static_cast<double>(q.balanced_n * static_cast<long>(lg.size())));
    }
    out.theta_bal = fit_logistic(bal).theta;
    out.closed = quality_logistic_moments(lg, out.theta_bal, q.mc.samples, seed);
    for (auto& g : lg)
        laws.push_back({g.name, g.rho, logistic_sampler(g.x_raw, g.theta), logistic_sampler(g.x_syn, g.theta_tilde)});
    out.mc = quality_term_mc(laws, out.theta_bal, LossKind::Logistic, mc);
    return out;
}

inline void write_quality(const RunOptions& o, const std::string& hash, const QualityOutput& q) {
    json j;
    j["schema"] = "quality_v1";
    j["config_hash"] = hash;
    j["build"] = SYNTHAUG_BUILD_ID;
    j["theta_bal"] = std::vector<double>(q.theta_bal.data(), q.theta_bal.data() + q.theta_bal.size());
    j["rho"] = q.rho;
    j["closed_form"] = q.closed.to_json();
    j["monte_carlo"] = q.mc.to_json();
    if (!q.shared.empty()) j["shared_covariance_q"] = q.shared;
    for (auto& [g, v] : q.closed.q) {
        double se = q.mc.q_se.at(g);
        j["agreement_z"][g] = se > 0.0 ? (v - q.mc.q.at(g)) / se : 0.0;
    }
    auto f = open_out(o, "quality.json");
    f << j.dump(2) << '\n';
}

// ---------------------------------------------------------------- dispatcher

enum ExitCode { kExitOk = 0, kExitConfig = 2, kExitRuntime = 3 };

inline const std::vector<std::string>& subcommands() {
    static const std::vector<std::string> s{"craft-gen", "oversample-compare", "scaling-gauss",
                                            "scaling-fourier", "tf-kl", "quality"};
    return s;
}

/**
 * Runs one subcommand. The effective config (file contents with the resolved seed folded in) is hashed into every
 * output. Configuration problems map to exit code 2, failures during the run to 3.
 */
inline int run_command(const std::string& name, json cfg, RunOptions o, std::ostream& err) {
    try {
        if (cfg.is_null()) cfg = json::object();
        if (!cfg.is_object()) throw InvalidArgument("config must be a JSON object");
        if (o.seed_given) {
            cfg["seed"] = o.seed;
        } else if (cfg.contains("seed")) {
            require(cfg["seed"].is_number_integer() && cfg["seed"].get<std::int64_t>() >= 0,
                    "seed must be a nonnegative integer");
            o.seed = cfg["seed"].get<std::uint64_t>();
        }
        cfg["seed"] = o.seed;
        std::string hash = config_hash(cfg);
        // Validate the whole config before doing any work.
        if (name == "craft-gen") {
            read_craft_gen(cfg);
            run_craft_gen(cfg, o, hash);
        } else if (name == "oversample-compare") {
            auto c = read_compare(cfg);
            auto rows = oversample_compare(c, o.seed, o.jobs);
            auto f = open_out(o, "results.csv");
            write_compare(f, rows, hash);
        } else if (name == "scaling-gauss") {
            write_scaling(o, hash, "gaussian_sequence", run_scaling_gauss(cfg, o));
        } else if (name == "scaling-fourier") {
            write_scaling(o, hash, "fourier_white_noise", run_scaling_fourier(cfg, o));
        } else if (name == "tf-kl") {
            auto k = read_kl(cfg);
            k.seed = o.seed;
            k.jobs = o.jobs;
            write_kl(o, hash, kl_decay_experiment(k));
        } else if (name == "quality") {
            write_quality(o, hash, run_quality(read_quality(cfg), o.seed, o.jobs));
        } else {
            throw InvalidArgument("unknown subcommand " + name);
        }
        return kExitOk;
    } catch (const InvalidArgument& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const json::exception& e) {
        err << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "runtime error: " << e.what() << '\n';
        return kExitRuntime;
    }
}

}  // namespace synthaug
