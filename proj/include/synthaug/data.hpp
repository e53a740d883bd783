#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <charconv>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "core.hpp"

namespace synthaug {

/** Rows of (feature vector, binary label); the universal sample container. */
struct Dataset {
    Eigen::MatrixXd features;  // rows = samples
    std::vector<int> labels;   // values in {0, 1}
    std::vector<std::string> feature_names;
    std::string label_name = "Y";

    std::size_t rows() const { return labels.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(features.cols()); }

    void validate() const {
        require(static_cast<std::size_t>(features.rows()) == labels.size(),
                "labels length must equal row count");
        require(feature_names.size() == dim(), "one name per feature column required");
        std::set<std::string> seen(feature_names.begin(), feature_names.end());
        require(seen.size() == feature_names.size(), "feature names must be unique");
        require(!seen.count(label_name), "label name clashes with a feature name");
        for (int y : labels) require(y == 0 || y == 1, "labels must be 0 or 1");
    }

    /** Rows selected by index, preserving order. */
    Dataset subset(const std::vector<std::size_t>& idx) const {
        Dataset out;
        out.feature_names = feature_names;
        out.label_name = label_name;
        out.features.resize(static_cast<Eigen::Index>(idx.size()), features.cols());
        out.labels.reserve(idx.size());
        for (std::size_t k = 0; k < idx.size(); ++k) {
            out.features.row(static_cast<Eigen::Index>(k)) = features.row(static_cast<Eigen::Index>(idx[k]));
            out.labels.push_back(labels[idx[k]]);
        }
        return out;
    }

    bool operator==(const Dataset& o) const {
        return feature_names == o.feature_names && label_name == o.label_name && labels == o.labels &&
               features.rows() == o.features.rows() && features.cols() == o.features.cols() &&
               (features.array() == o.features.array()).all();
    }
};

/** Row-wise concatenation; schemas must agree. */
inline Dataset concat(const Dataset& a, const Dataset& b) {
    if (a.rows() == 0 && a.feature_names.empty()) return b;
    require(a.dim() == b.dim() || b.rows() == 0, "dimension mismatch in concat");
    Dataset out = a;
    if (b.rows() == 0) return out;
    out.features.conservativeResize(a.features.rows() + b.features.rows(), a.features.cols());
    out.features.bottomRows(b.features.rows()) = b.features;
    out.labels.insert(out.labels.end(), b.labels.begin(), b.labels.end());
    return out;
}

inline Dataset empty_like(const Dataset& d) {
    Dataset out;
    out.feature_names = d.feature_names;
    out.label_name = d.label_name;
    out.features.resize(0, static_cast<Eigen::Index>(d.dim()));
    return out;
}

/** Assignment of samples to the ordered group set. */
struct GroupPartition {
    std::vector<std::size_t> group_of;  // index into groups, one per sample
    std::vector<std::string> groups;

    std::vector<std::size_t> members(std::size_t g) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < group_of.size(); ++i)
            if (group_of[i] == g) out.push_back(i);
        return out;
    }
    std::map<std::string, long> counts() const {
        std::map<std::string, long> c;
        for (const auto& g : groups) c[g] = 0;
        for (auto g : group_of) ++c[groups[g]];
        return c;
    }
    std::size_t find(const std::string& name) const {
        auto it = std::find(groups.begin(), groups.end(), name);
        require(it != groups.end(), "unknown group " + name);
        return static_cast<std::size_t>(it - groups.begin());
    }
};

enum class PartitionMode { ByLabel, ByLabelAndSpurious };

inline std::string label_group(int y) { return std::to_string(y); }
inline std::string spurious_group(int y, int s) {
    return "(" + std::to_string(y) + "," + std::to_string(s) + ")";
}

/** Groups keyed by label, or by (label, value of a binary spurious feature). */
inline GroupPartition partition_groups(const Dataset& ds, PartitionMode mode,
                                       const std::string& spurious_feature = "") {
    GroupPartition p;
    if (mode == PartitionMode::ByLabel) {
        p.groups = {label_group(0), label_group(1)};
        for (int y : ds.labels) p.group_of.push_back(static_cast<std::size_t>(y));
    } else {
        auto it = std::find(ds.feature_names.begin(), ds.feature_names.end(), spurious_feature);
        require(it != ds.feature_names.end(), "unknown spurious feature " + spurious_feature);
        auto col = static_cast<Eigen::Index>(it - ds.feature_names.begin());
        std::set<double> values;
        for (Eigen::Index i = 0; i < ds.features.rows(); ++i) values.insert(ds.features(i, col));
        require(values.size() <= 2, "spurious feature must be binary-valued");
        std::vector<int> vals;
        for (double v : values) {
            require(v == std::round(v), "spurious feature values must be integers");
            vals.push_back(static_cast<int>(v));
        }
        if (vals.size() == 1) vals.push_back(vals[0] == 1 ? -1 : 1);
        for (int y : {0, 1})
            for (int s : vals) p.groups.push_back(spurious_group(y, s));
        for (std::size_t i = 0; i < ds.rows(); ++i) {
            int s = static_cast<int>(ds.features(static_cast<Eigen::Index>(i), col));
            std::size_t si = s == vals[0] ? 0 : 1;
            p.group_of.push_back(static_cast<std::size_t>(ds.labels[i]) * 2 + si);
        }
    }
    auto c = p.counts();
    for (const auto& g : p.groups) require(c[g] > 0, "group " + g + " is empty");
    return p;
}

/** Per-group counts n_g and imbalance ratios rho_g = (max n - n_g) / max n. */
struct ImbalanceProfile {
    std::map<std::string, long> counts;
    std::map<std::string, double> rho;
    double rho_avg = 0.0;

    long max_count() const {
        long m = 0;
        for (auto& [g, n] : counts) m = std::max(m, n);
        return m;
    }
};

inline ImbalanceProfile imbalance_profile(const std::map<std::string, long>& counts) {
    require(!counts.empty(), "at least one group required");
    ImbalanceProfile p;
    p.counts = counts;
    long mx = 0;
    for (auto& [g, n] : counts) {
        require(n >= 1, "group " + g + " has zero count");
        mx = std::max(mx, n);
    }
    double sum = 0.0;
    for (auto& [g, n] : counts) {
        double r = static_cast<double>(mx - n) / static_cast<double>(mx);
        p.rho[g] = r;
        sum += r;
    }
    p.rho_avg = sum / static_cast<double>(counts.size());
    return p;
}

// ---------------------------------------------------------------- Craft

inline const std::vector<std::string>& craft_feature_names() {
    static const std::vector<std::string> names = {"X1", "X2", "X3", "X4", "X5",
                                                   "X6", "X7", "X8", "X9"};
    return names;
}

/** One draw of the nine Craft covariates plus the latent score Z. */
inline std::pair<Eigen::VectorXd, double> craft_row(Rng& rng) {
    Eigen::VectorXd x(9);
    double x1 = rng.normal(), x2 = rng.normal();
    double x3 = 0.5 * x1 + 0.3 * x2 + rng.normal(0.0, 0.5);
    double x4 = x1 * rng.normal();
    double x5 = 0.5 * x3 + rng.normal();
    double x6 = rng.uniform() < 0.5 ? -1.0 : 1.0;
    double x7 = rng.normal();
    double x8 = x2 * x3, x9 = x1 * x2;
    x << x1, x2, x3, x4, x5, x6, x7, x8, x9;
    double z = 1.5 + 0.7 * x1 - 0.6 * x2 + 0.8 * x3 + 0.4 * x9 + rng.normal();
    return {x, z};
}

/** Lower central order statistic, so 1{Z > median} has exactly floor(n/2) positives. */
inline double lower_median(std::vector<double> z) {
    require(!z.empty(), "median of empty sample");
    auto k = (z.size() - 1) / 2;
    std::nth_element(z.begin(), z.begin() + static_cast<long>(k), z.end());
    return z[k];
}

/** The Craft simulated dataset; Y = 1{Z > median(Z)}. */
inline Dataset make_craft(long n, std::uint64_t seed, double* threshold_out = nullptr) {
    require(n >= 2, "make_craft needs n >= 2");
    Rng rng(seed);
    Dataset ds;
    ds.feature_names = craft_feature_names();
    ds.features.resize(n, 9);
    std::vector<double> z(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) {
        auto [x, zi] = craft_row(rng);
        ds.features.row(i) = x.transpose();
        z[static_cast<std::size_t>(i)] = zi;
    }
    double med = lower_median(z);
    ds.labels.resize(static_cast<std::size_t>(n));
    for (long i = 0; i < n; ++i) ds.labels[static_cast<std::size_t>(i)] = z[static_cast<std::size_t>(i)] > med ? 1 : 0;
    if (threshold_out) *threshold_out = med;
    return ds;
}

/** Oracle generator for Craft: exact draws from the law of X given Y = label at a fixed threshold. */
inline Dataset sample_craft_label(int label, long count, double threshold, Rng& rng) {
    Dataset ds;
    ds.feature_names = craft_feature_names();
    ds.features.resize(count, 9);
    ds.labels.assign(static_cast<std::size_t>(count), label);
    for (long i = 0; i < count;) {
        auto [x, z] = craft_row(rng);
        if ((z > threshold ? 1 : 0) != label) continue;
        ds.features.row(i++) = x.transpose();
    }
    return ds;
}

// ---------------------------------------------------------------- number formatting

/** Shortest decimal text that parses back to the identical double. */
inline std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline bool parse_double(const std::string& s, double& out) {
    const char* b = s.data();
    const char* e = s.data() + s.size();
    while (b < e && *b == ' ') ++b;
    while (e > b && (e[-1] == ' ' || e[-1] == '\r')) --e;
    if (b < e && *b == '+') ++b;
    auto res = std::from_chars(b, e, out);
    return res.ec == std::errc() && res.ptr == e;
}

// ---------------------------------------------------------------- GReaT text

/** One record per row: "f1 is v1, f2 is v2, ..., Y is y". */
inline std::vector<std::string> serialize_great(const Dataset& ds) {
    ds.validate();
    for (const auto& n : ds.feature_names)
        require(n.find(',') == std::string::npos && n.find(" is ") == std::string::npos,
                "feature name '" + n + "' cannot be serialised");
    std::vector<std::string> out;
    out.reserve(ds.rows());
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        std::string rec;
        for (std::size_t j = 0; j < ds.dim(); ++j) {
            rec += ds.feature_names[j] + " is " +
                   format_double(ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) + ", ";
        }
        rec += ds.label_name + " is " + std::to_string(ds.labels[i]);
        out.push_back(std::move(rec));
    }
    return out;
}

/**
 * Inverse of serialize_great. The schema is taken from the first record; the last field is the label.
 * Errors report the record index and the 1-based token position.
 */
inline Dataset deserialize_great(const std::vector<std::string>& records) {
    Dataset ds;
    std::vector<std::vector<double>> rows;
    for (std::size_t r = 0; r < records.size(); ++r) {
        std::vector<std::string> fields;
        std::size_t start = 0;
        const std::string& rec = records[r];
        while (true) {
            auto pos = rec.find(", ", start);
            fields.push_back(rec.substr(start, pos == std::string::npos ? std::string::npos : pos - start));
            if (pos == std::string::npos) break;
            start = pos + 2;
        }
        std::vector<std::string> keys;
        std::vector<double> vals;
        for (std::size_t t = 0; t < fields.size(); ++t) {
            auto pos = fields[t].find(" is ");
            if (pos == std::string::npos)
                throw ParseError(r, "token " + std::to_string(t + 1) + " lacks ' is ': '" + fields[t] + "'");
            double v;
            if (!parse_double(fields[t].substr(pos + 4), v))
                throw ParseError(r, "token " + std::to_string(t + 1) + " has a non-numeric value");
            keys.push_back(fields[t].substr(0, pos));
            vals.push_back(v);
        }
        if (keys.size() < 2) throw ParseError(r, "token 1: record needs features and a label");
        if (r == 0) {
            ds.feature_names.assign(keys.begin(), keys.end() - 1);
            ds.label_name = keys.back();
        } else {
            for (std::size_t t = 0; t < keys.size(); ++t) {
                bool ok = t < ds.feature_names.size() ? keys[t] == ds.feature_names[t]
                                                      : (t == ds.feature_names.size() && keys[t] == ds.label_name);
                if (!ok || keys.size() != ds.feature_names.size() + 1)
                    throw ParseError(r, "token " + std::to_string(t + 1) + " has unknown feature '" + keys[t] + "'");
            }
        }
        double y = vals.back();
        if (y != 0.0 && y != 1.0)
            throw ParseError(r, "token " + std::to_string(keys.size()) + " label is not binary");
        ds.labels.push_back(static_cast<int>(y));
        vals.pop_back();
        rows.push_back(std::move(vals));
    }
    ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.feature_names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    return ds;
}

// ---------------------------------------------------------------- CSV

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) out += c == '"' ? std::string("\"\"") : std::string(1, c);
    return out + "\"";
}

/** Reads a headered CSV; every column except the label becomes a numeric feature. */
inline Dataset read_csv(std::istream& in, const std::string& label_column) {
    std::string line;
    if (!std::getline(in, line)) throw ParseError(0, "missing header row");
    auto header = split_csv_line(line);
    auto it = std::find(header.begin(), header.end(), label_column);
    if (it == header.end()) throw InvalidArgument("missing label column " + label_column);
    auto label_idx = static_cast<std::size_t>(it - header.begin());
    Dataset ds;
    ds.label_name = label_column;
    for (std::size_t j = 0; j < header.size(); ++j)
        if (j != label_idx) ds.feature_names.push_back(header[j]);
    std::vector<std::vector<double>> rows;
    std::size_t row = 0;
    while (std::getline(in, line)) {
        if (line.empty() || line == "\r") continue;
        ++row;
        auto cells = split_csv_line(line);
        if (cells.size() != header.size())
            throw ParseError(row, "expected " + std::to_string(header.size()) + " cells");
        std::vector<double> vals;
        for (std::size_t j = 0; j < cells.size(); ++j) {
            double v;
            if (!parse_double(cells[j], v))
                throw ParseError(row, "non-numeric cell in column " + header[j]);
            if (j == label_idx) {
                if (v != 0.0 && v != 1.0) throw ParseError(row, "label " + cells[j] + " is not binary");
                ds.labels.push_back(static_cast<int>(v));
            } else {
                vals.push_back(v);
            }
        }
        rows.push_back(std::move(vals));
    }
    ds.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.feature_names.size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < rows[i].size(); ++j)
            ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
    ds.validate();
    return ds;
}

inline Dataset load_csv(const std::string& path, const std::string& label_column) {
    std::ifstream in(path);
    if (!in) throw InvalidArgument("cannot open " + path);
    return read_csv(in, label_column);
}

/** Writes features then the label; an optional extra string column (e.g. "origin") goes last. */
inline void write_csv(std::ostream& out, const Dataset& ds, const std::vector<std::string>* extra = nullptr,
                      const std::string& extra_name = "origin") {
    ds.validate();
    for (std::size_t j = 0; j < ds.dim(); ++j) out << csv_escape(ds.feature_names[j]) << ',';
    out << csv_escape(ds.label_name);
    if (extra) out << ',' << extra_name;
    out << '\n';
    for (std::size_t i = 0; i < ds.rows(); ++i) {
        for (std::size_t j = 0; j < ds.dim(); ++j)
            out << format_double(ds.features(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))) << ',';
        out << ds.labels[i];
        if (extra) out << ',' << csv_escape((*extra)[i]);
        out << '\n';
    }
}

inline void save_csv(const Dataset& ds, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidArgument("cannot write " + path);
    write_csv(out, ds);
}

}  // namespace synthaug
