#pragma once

#include <algorithm>
#include <map>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "core.hpp"
#include "data.hpp"

namespace synthaug {

/** Oversampling counts m_g, per-group augmentation size N and objective weight alpha. */
struct AugmentationPlan {
    std::map<std::string, long> m;
    long N = 0;
    double alpha = 0.0;
};

/** m_g = max n - n_g for every group. */
inline AugmentationPlan plan_balancing(const ImbalanceProfile& profile, long N, double alpha) {
    require(alpha >= 0.0 && alpha <= 1.0, "alpha must lie in [0, 1]");
    require(N >= 0, "N must be nonnegative");
    AugmentationPlan plan;
    long mx = profile.max_count();
    for (auto& [g, n] : profile.counts) {
        require(n >= 1, "group " + g + " has zero count");
        plan.m[g] = mx - n;
    }
    plan.N = N;
    plan.alpha = alpha;
    return plan;
}

/** Generated samples with their group labels. */
struct SyntheticPool {
    Dataset dataset;
    std::vector<std::string> group_of;
    std::string provenance;
};

struct InsufficientPool : InvalidArgument {
    std::string group;
    long shortfall;
    InsufficientPool(const std::string& g, long s)
        : InvalidArgument("synthetic pool for group " + g + " is short by " + std::to_string(s)),
          group(g),
          shortfall(s) {}
};

/** Rows selected from a pool, keeping their group labels. */
struct GroupedRows {
    Dataset data;
    std::vector<std::string> group_of;
};

struct PoolSelection {
    GroupedRows oversample;
    GroupedRows augment;
    /** Pool row indices, for disjointness checks. */
    std::vector<std::size_t> oversample_idx, augment_idx;
};

/** Disjoint uniform draws without replacement of m_g and N rows per group. */
inline PoolSelection pool_select(const SyntheticPool& pool, const AugmentationPlan& plan, Rng& rng) {
    require(pool.group_of.size() == pool.dataset.rows(), "pool group labels must match its rows");
    PoolSelection sel;
    for (auto& [g, mg] : plan.m) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < pool.group_of.size(); ++i)
            if (pool.group_of[i] == g) idx.push_back(i);
        long need = mg + plan.N;
        if (static_cast<long>(idx.size()) < need) throw InsufficientPool(g, need - static_cast<long>(idx.size()));
        // Partial Fisher-Yates: the first `need` entries are a uniform ordered sample.
        for (long k = 0; k < need; ++k) {
            std::size_t j = static_cast<std::size_t>(k) + rng.index(idx.size() - static_cast<std::size_t>(k));
            std::swap(idx[static_cast<std::size_t>(k)], idx[j]);
        }
        sel.oversample_idx.insert(sel.oversample_idx.end(), idx.begin(), idx.begin() + mg);
        sel.augment_idx.insert(sel.augment_idx.end(), idx.begin() + mg, idx.begin() + need);
    }
    sel.oversample.data = pool.dataset.subset(sel.oversample_idx);
    sel.augment.data = pool.dataset.subset(sel.augment_idx);
    for (auto i : sel.oversample_idx) sel.oversample.group_of.push_back(pool.group_of[i]);
    for (auto i : sel.augment_idx) sel.augment.group_of.push_back(pool.group_of[i]);
    return sel;
}

/** Random oversampling: m rows drawn uniformly with replacement from the group. */
inline Dataset ros(const Dataset& ds, const std::vector<std::size_t>& group, long m, Rng& rng) {
    require(!group.empty(), "ROS needs a non-empty group");
    require(m >= 0, "m must be nonnegative");
    std::vector<std::size_t> pick(static_cast<std::size_t>(m));
    for (auto& p : pick) p = group[rng.index(group.size())];
    return ds.subset(pick);
}

/** Indices (into `candidates`) of the k nearest candidates to row `self`, excluding itself; ties by lower index. */
inline std::vector<std::size_t> nearest_neighbors(const Dataset& ds, std::size_t self,
                                                  const std::vector<std::size_t>& candidates, std::size_t k) {
    std::vector<std::pair<double, std::size_t>> dist;
    dist.reserve(candidates.size());
    auto xi = ds.features.row(static_cast<Eigen::Index>(self));
    for (std::size_t c = 0; c < candidates.size(); ++c) {
        if (candidates[c] == self) continue;
        double d = (ds.features.row(static_cast<Eigen::Index>(candidates[c])) - xi).squaredNorm();
        dist.emplace_back(d, c);
    }
    k = std::min(k, dist.size());
    std::partial_sort(dist.begin(), dist.begin() + static_cast<long>(k), dist.end(),
                      [&](const auto& a, const auto& b) {
                          return a.first < b.first || (a.first == b.first && candidates[a.second] < candidates[b.second]);
                      });
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(dist[i].second);
    return out;
}

struct SmoteOptions {
    std::size_t k = 5;
    /** Fixed interpolation weight, for deterministic tests; otherwise Uniform[0, 1]. */
    std::optional<double> fixed_lambda;
};

namespace detail {

inline Eigen::RowVectorXd interpolate(const Dataset& ds, std::size_t base, std::size_t nb, const SmoteOptions& opt,
                                      Rng& rng) {
    double lam = opt.fixed_lambda ? *opt.fixed_lambda : rng.uniform();
    auto x = ds.features.row(static_cast<Eigen::Index>(base));
    auto y = ds.features.row(static_cast<Eigen::Index>(nb));
    return x + lam * (y - x);
}

inline Dataset rows_with_label(const Dataset& ds, const std::vector<Eigen::RowVectorXd>& rows, int label) {
    Dataset out = empty_like(ds);
    out.features.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ds.dim()));
    for (std::size_t i = 0; i < rows.size(); ++i) out.features.row(static_cast<Eigen::Index>(i)) = rows[i];
    out.labels.assign(rows.size(), label);
    return out;
}

inline int group_label(const Dataset& ds, const std::vector<std::size_t>& group) {
    int y = ds.labels[group.front()];
    for (auto i : group) require(ds.labels[i] == y, "oversampled group must have a single label");
    return y;
}

}  // namespace detail

/** SMOTE: x + lambda (x_nn - x) with x uniform in the group and x_nn uniform among its k nearest group neighbours. */
inline Dataset smote(const Dataset& ds, const std::vector<std::size_t>& group, long m, const SmoteOptions& opt,
                     Rng& rng) {
    require(group.size() >= 2, "SMOTE needs at least two group points");
    require(opt.k >= 1 && opt.k < group.size(), "SMOTE k must satisfy 1 <= k < group size");
    require(m >= 0, "m must be nonnegative");
    int label = detail::group_label(ds, group);
    std::vector<std::vector<std::size_t>> nn(group.size());
    std::vector<Eigen::RowVectorXd> rows;
    for (long s = 0; s < m; ++s) {
        std::size_t b = rng.index(group.size());
        if (nn[b].empty()) nn[b] = nearest_neighbors(ds, group[b], group, opt.k);
        std::size_t nb = group[nn[b][rng.index(nn[b].size())]];
        rows.push_back(detail::interpolate(ds, group[b], nb, opt, rng));
    }
    return detail::rows_with_label(ds, rows, label);
}

/** Splits `total` proportionally to `weights` with largest-remainder rounding; ties go to the lower index. */
inline std::vector<long> largest_remainder(const std::vector<double>& weights, long total) {
    double sum = std::accumulate(weights.begin(), weights.end(), 0.0);
    std::vector<long> out(weights.size(), 0);
    if (weights.empty() || total == 0) return out;
    std::vector<double> exact(weights.size());
    for (std::size_t i = 0; i < weights.size(); ++i)
        exact[i] = sum > 0.0 ? static_cast<double>(total) * weights[i] / sum
                             : static_cast<double>(total) / static_cast<double>(weights.size());
    long assigned = 0;
    std::vector<std::pair<double, std::size_t>> rem;
    for (std::size_t i = 0; i < exact.size(); ++i) {
        // Guard against representation error pushing an exact integer just below itself.
        double fl = std::floor(exact[i] + 1e-9);
        out[i] = static_cast<long>(fl);
        assigned += out[i];
        rem.emplace_back(std::max(0.0, exact[i] - fl), i);
    }
    std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    for (long k = 0; assigned < total; ++k, ++assigned) ++out[rem[static_cast<std::size_t>(k) % rem.size()].second];
    return out;
}

/** ADASYN allocation: hardness r_i = share of majority points among the k nearest neighbours in group + majority. */
inline std::vector<long> adasyn_allocation(const Dataset& ds, const std::vector<std::size_t>& group,
                                           const std::vector<std::size_t>& majority, long m, std::size_t k,
                                           std::vector<double>* hardness_out = nullptr) {
    std::vector<std::size_t> all = group;
    all.insert(all.end(), majority.begin(), majority.end());
    std::vector<char> is_major(all.size(), 0);
    for (std::size_t i = group.size(); i < all.size(); ++i) is_major[i] = 1;
    std::vector<double> r(group.size());
    for (std::size_t i = 0; i < group.size(); ++i) {
        auto nn = nearest_neighbors(ds, group[i], all, k);
        double cnt = 0.0;
        for (auto c : nn) cnt += is_major[c];
        r[i] = nn.empty() ? 0.0 : cnt / static_cast<double>(k);
    }
    if (hardness_out) *hardness_out = r;
    return largest_remainder(r, m);
}

/** ADASYN: SMOTE-style generation with per-point counts proportional to hardness. */
inline Dataset adasyn(const Dataset& ds, const std::vector<std::size_t>& group,
                      const std::vector<std::size_t>& majority, long m, const SmoteOptions& opt, Rng& rng) {
    require(group.size() >= 2, "ADASYN needs at least two group points");
    require(opt.k >= 1, "ADASYN k must be positive");
    require(m >= 0, "m must be nonnegative");
    int label = detail::group_label(ds, group);
    auto alloc = adasyn_allocation(ds, group, majority, m, opt.k);
    std::size_t kk = std::min(opt.k, group.size() - 1);
    std::vector<Eigen::RowVectorXd> rows;
    for (std::size_t i = 0; i < group.size(); ++i) {
        if (alloc[i] == 0) continue;
        auto nn = nearest_neighbors(ds, group[i], group, kk);
        for (long s = 0; s < alloc[i]; ++s) {
            std::size_t nb = group[nn[rng.index(nn.size())]];
            rows.push_back(detail::interpolate(ds, group[i], nb, opt, rng));
        }
    }
    return detail::rows_with_label(ds, rows, label);
}

enum class Origin { Raw, Oversampled, Augmented };

inline const char* origin_name(Origin o) {
    switch (o) {
        case Origin::Raw: return "raw";
        case Origin::Oversampled: return "oversampled";
        default: return "augmented";
    }
}

/** Raw, oversampled and augmented rows with their group and provenance tags. */
struct TaggedDataset {
    Dataset data;
    std::vector<std::string> group_of;
    std::vector<Origin> origin;

    std::map<std::string, long> count(Origin o) const {
        std::map<std::string, long> c;
        for (std::size_t i = 0; i < origin.size(); ++i)
            if (origin[i] == o) ++c[group_of[i]];
        return c;
    }
    std::vector<std::size_t> rows_with(Origin o) const {
        std::vector<std::size_t> out;
        for (std::size_t i = 0; i < origin.size(); ++i)
            if (origin[i] == o) out.push_back(i);
        return out;
    }
    std::vector<std::string> origin_column() const {
        std::vector<std::string> out;
        for (auto o : origin) out.push_back(origin_name(o));
        return out;
    }
};

/** Stacks raw, oversampled and augmented rows, tagging each. */
inline TaggedDataset assemble(const Dataset& raw, const GroupPartition& part, const GroupedRows& oversample,
                              const GroupedRows& augment) {
    require(part.group_of.size() == raw.rows(), "partition does not match raw data");
    for (const GroupedRows* s : {&oversample, &augment}) {
        if (s->data.rows() == 0) continue;
        require(s->data.dim() == raw.dim(), "feature dimension mismatch between raw and synthetic rows");
        require(s->group_of.size() == s->data.rows(), "synthetic group labels must match rows");
        for (auto& g : s->group_of)
            require(std::find(part.groups.begin(), part.groups.end(), g) != part.groups.end(),
                    "synthetic row has unknown group " + g);
    }
    TaggedDataset out;
    out.data = concat(concat(raw, oversample.data), augment.data);
    for (auto g : part.group_of) out.group_of.push_back(part.groups[g]);
    out.origin.assign(raw.rows(), Origin::Raw);
    out.group_of.insert(out.group_of.end(), oversample.group_of.begin(), oversample.group_of.end());
    out.origin.insert(out.origin.end(), oversample.data.rows(), Origin::Oversampled);
    out.group_of.insert(out.group_of.end(), augment.group_of.begin(), augment.group_of.end());
    out.origin.insert(out.origin.end(), augment.data.rows(), Origin::Augmented);
    return out;
}

}  // namespace synthaug
