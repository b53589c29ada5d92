#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cepa/dists.hpp"
#include "cepa/error.hpp"
#include "cepa/panel.hpp"

namespace cepa {

/// Unit-to-cluster assignment. Labels are 0-based internally; reports print them 1-based.
struct Clustering {
    std::vector<int> labels;
    int k = 0;
    std::vector<int> sizes;

    Clustering() = default;
    Clustering(std::vector<int> l, int num_clusters) : labels(std::move(l)), k(num_clusters) {
        if (k < 1) fail_config("number of clusters must be positive");
        sizes.assign(static_cast<std::size_t>(k), 0);
        for (int c : labels) {
            if (c < 0 || c >= k) fail_input("cluster label out of range");
            ++sizes[static_cast<std::size_t>(c)];
        }
    }

    [[nodiscard]] int n() const noexcept { return static_cast<int>(labels.size()); }
    [[nodiscard]] bool all_nonempty() const {
        return std::all_of(sizes.begin(), sizes.end(), [](int s) { return s > 0; });
    }
    [[nodiscard]] int operator[](int i) const { return labels[static_cast<std::size_t>(i)]; }
};

/// K x P matrix of cluster-time means for a clustering. Requires every cluster non-empty.
inline Eigen::MatrixXd cluster_centers(const LossPanel& z, const std::vector<int>& labels, int k) {
    Eigen::MatrixXd centers = Eigen::MatrixXd::Zero(k, z.p());
    std::vector<int> counts(static_cast<std::size_t>(k), 0);
    for (int i = 0; i < z.n(); ++i) {
        const int c = labels[static_cast<std::size_t>(i)];
        centers.row(c) += z.unit_mean(i).transpose();
        ++counts[static_cast<std::size_t>(c)];
    }
    for (int c = 0; c < k; ++c) {
        if (counts[static_cast<std::size_t>(c)] == 0) fail_internal("cluster_centers: empty cluster");
        centers.row(c) /= counts[static_cast<std::size_t>(c)];
    }
    return centers;
}

/// Within-cluster sum over units and periods of squared deviations from cluster-time means.
inline double objective(const LossPanel& z, const Clustering& c) {
    if (c.n() != z.n()) fail_config("clustering does not match the panel");
    const Eigen::MatrixXd centers = cluster_centers(z, c.labels, c.k);
    // sum_t ||z_it - m||^2 = S_i - 2 T <zbar_i, m> + T ||m||^2
    double total = 0.0;
    for (int i = 0; i < z.n(); ++i) {
        const auto m = centers.row(c[i]).transpose();
        total += z.unit_sum_sq(i) - 2.0 * z.t() * z.unit_mean(i).dot(m) + z.t() * m.squaredNorm();
    }
    return std::max(total, 0.0);
}

/// A forced move made when an assignment step emptied a cluster.
struct EmptyClusterRepair {
    int iteration;
    int unit;
    int from_cluster;
    int to_cluster;
};

/**
 * @brief Full history of one Panel Kmeans run.
 *
 * `assignments[0]` is the initial assignment and `assignments[m]` the result of the m-th
 * assignment step, so there are `iterations + 1` entries. The selective p-value replays
 * exactly these steps.
 */
struct ClusteringTrace {
    std::vector<std::vector<int>> assignments;
    int iterations = 0;
    bool hit_max_iter = false;
    std::vector<EmptyClusterRepair> repairs;
    std::vector<double> objective_path;  ///< objective after each assignment (index m)
    Clustering final;
    Eigen::MatrixXd centers;
    double objective = 0.0;

    [[nodiscard]] int k() const noexcept { return final.k; }
};

namespace detail {

inline double center_distance(const LossPanel& z, int i, const Eigen::MatrixXd& centers, int c) {
    return (z.unit_mean(i).transpose() - centers.row(c)).squaredNorm();
}

}  // namespace detail

/**
 * @brief Lloyd iterations for Panel Kmeans from a given initial assignment.
 *
 * The assignment step minimizes sum_t ||z_it - theta_k||^2, which equals T times the
 * squared distance between the unit's time mean and theta_k plus a term that does not
 * depend on k; ties go to the lowest cluster index. Iteration stops as soon as an
 * assignment step reproduces the previous one.
 */
inline ClusteringTrace lloyd_run(const LossPanel& z, int k, const std::vector<int>& initial, int max_iter) {
    const int n = z.n();
    if (k < 1) fail_config("number of clusters must be positive");
    if (k > n) fail_config("number of clusters exceeds the number of units");
    if (static_cast<int>(initial.size()) != n) fail_config("initial assignment has the wrong length");
    if (max_iter < 1) fail_config("max_iter must be >= 1");
    const Clustering init(initial, k);
    if (!init.all_nonempty()) fail_config("initial assignment must cover all clusters");

    ClusteringTrace trace;
    trace.assignments.push_back(initial);
    trace.objective_path.push_back(objective(z, init));
    Eigen::MatrixXd centers = cluster_centers(z, initial, k);
    std::vector<int> labels = initial;
    for (int m = 1;; ++m) {
        std::vector<int> next(static_cast<std::size_t>(n));
        std::vector<double> cost(static_cast<std::size_t>(n));
        for (int i = 0; i < n; ++i) {
            int best = 0;
            double best_d = detail::center_distance(z, i, centers, 0);
            for (int c = 1; c < k; ++c) {
                const double d = detail::center_distance(z, i, centers, c);
                if (d < best_d) {
                    best_d = d;
                    best = c;
                }
            }
            next[static_cast<std::size_t>(i)] = best;
            cost[static_cast<std::size_t>(i)] = best_d;
        }
        // Refill empty clusters, in index order, with the worst-fitting unit (lowest index on
        // ties) among units whose cluster can spare one. A moved unit is never moved again.
        for (int c = 0; c < k; ++c) {
            std::vector<int> sizes(static_cast<std::size_t>(k), 0);
            for (int l : next) ++sizes[static_cast<std::size_t>(l)];
            if (sizes[static_cast<std::size_t>(c)] > 0) continue;
            int worst = -1;
            for (int i = 0; i < n; ++i) {
                if (sizes[static_cast<std::size_t>(next[static_cast<std::size_t>(i)])] < 2) continue;
                if (worst < 0 || cost[static_cast<std::size_t>(i)] > cost[static_cast<std::size_t>(worst)]) worst = i;
            }
            trace.repairs.push_back({m, worst, next[static_cast<std::size_t>(worst)], c});
            next[static_cast<std::size_t>(worst)] = c;
            cost[static_cast<std::size_t>(worst)] = -1.0;
        }
        const bool converged = next == labels;
        labels = std::move(next);
        trace.assignments.push_back(labels);
        centers = cluster_centers(z, labels, k);
        trace.objective_path.push_back(objective(z, Clustering(labels, k)));
        trace.iterations = m;
        if (converged) break;
        if (m >= max_iter) {
            trace.hit_max_iter = true;
            break;
        }
    }
    trace.final = Clustering(labels, k);
    trace.centers = std::move(centers);
    trace.objective = trace.objective_path.back();
    return trace;
}

/// Uniform random assignment of units to k clusters, redrawn until every cluster is used.
inline std::vector<int> random_assignment(int n, int k, std::mt19937_64& rng) {
    if (k < 1 || k > n) fail_config("number of clusters must satisfy 1 <= K <= N");
    std::uniform_int_distribution<int> pick(0, k - 1);
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (;;) {
        std::vector<char> used(static_cast<std::size_t>(k), 0);
        for (auto& l : labels) {
            l = pick(rng);
            used[static_cast<std::size_t>(l)] = 1;
        }
        if (std::all_of(used.begin(), used.end(), [](char u) { return u != 0; })) return labels;
    }
}

struct KmeansOptions {
    int n_init = 10;
    int max_iter = 100;
};

/**
 * @brief Multi-start Panel Kmeans.
 *
 * Initial assignments are drawn in order from a single generator seeded with `seed`, so
 * the first j starts are the same for any n_init >= j. Returns the run with the smallest
 * final objective; ties keep the earliest start.
 */
inline ClusteringTrace fit(const LossPanel& z, int k, std::uint64_t seed, KmeansOptions opt = {}) {
    if (opt.n_init < 1) fail_config("n_init must be >= 1");
    std::mt19937_64 rng(seed);
    std::optional<ClusteringTrace> best;
    for (int s = 0; s < opt.n_init; ++s) {
        auto init = random_assignment(z.n(), k, rng);
        auto trace = lloyd_run(z, k, init, opt.max_iter);
        if (!best || trace.objective < best->objective) best = std::move(trace);
    }
    return std::move(*best);
}

/// Per-K row of an information-criterion search.
struct IcRow {
    int k = 0;
    bool ok = false;
    double ic = 0.0;
    double log_det = 0.0;
    double penalty = 0.0;
    double objective = 0.0;
    std::string message;
};

struct IcSelection {
    int k = 0;
    std::vector<IcRow> rows;
    std::vector<ClusteringTrace> fits;  ///< fits[j] is the trace for rows[j].k
    [[nodiscard]] const ClusteringTrace& selected_fit() const {
        for (std::size_t j = 0; j < rows.size(); ++j)
            if (rows[j].k == k) return fits[j];
        fail_internal("selected K has no stored fit");
    }
};

/// Seed used for the K-cluster fit inside a K search.
inline std::uint64_t seed_for_k(std::uint64_t seed, int k) { return derive_seed(seed, static_cast<std::uint64_t>(k)); }

/**
 * @brief Chooses K in {2..k_max} by
 *   IC(K) = log det( (NT)^{-1} sum V V' ) + (KP + N) varsigma log(NT) / (NT),
 * with V the residual of Z around its fitted cluster center. Ties go to the smaller K.
 */
inline IcSelection select_k_ic(const LossPanel& z, int k_max, double varsigma, std::uint64_t seed,
                               KmeansOptions opt = {}) {
    if (k_max < 2 || k_max > z.n() - 1) fail_config("k_max must satisfy 2 <= k_max <= N - 1");
    const int n = z.n();
    const int t = z.t();
    const int p = z.p();
    const double nt = static_cast<double>(n) * t;
    IcSelection out;
    double best = kInf;
    for (int k = 2; k <= k_max; ++k) {
        auto trace = fit(z, k, seed_for_k(seed, k), opt);
        IcRow row;
        row.k = k;
        row.objective = trace.objective;
        Eigen::MatrixXd cov = Eigen::MatrixXd::Zero(p, p);
        for (int i = 0; i < n; ++i) {
            const Eigen::VectorXd center = trace.centers.row(trace.final[i]).transpose();
            for (int s = 0; s < t; ++s) {
                const auto r = z.row(i, s);
                const Eigen::VectorXd v = Eigen::Map<const Eigen::VectorXd>(r.data(), p) - center;
                cov.noalias() += v * v.transpose();
            }
        }
        cov /= nt;
        cov = 0.5 * (cov + cov.transpose());
        const double det = cov.determinant();
        row.penalty = (k * p + n) * varsigma * std::log(nt) / nt;
        if (!(det > 0.0) || !std::isfinite(det)) {
            row.message = "singular residual covariance";
        } else {
            row.ok = true;
            row.log_det = std::log(det);
            row.ic = row.log_det + row.penalty;
            if (row.ic < best) {
                best = row.ic;
                out.k = k;
            }
        }
        out.rows.push_back(row);
        out.fits.push_back(std::move(trace));
    }
    if (out.k == 0) fail_numerical("information criterion failed for every K (singular residual covariance)");
    return out;
}

struct CvRow {
    int k = 0;
    double error = 0.0;  ///< fold-averaged mean squared validation error per observation
};

struct CvSelection {
    int k = 0;
    std::vector<CvRow> rows;
};

/**
 * @brief Chooses K by time-blocked cross-validation.
 *
 * Periods are cut into `folds` contiguous blocks. For each held-out block, clusters are
 * fitted on the remaining periods and the held-out periods are scored against the
 * training centers with memberships held fixed.
 */
inline CvSelection select_k_cv(const LossPanel& z, int k_max, int folds, std::uint64_t seed,
                               KmeansOptions opt = {}) {
    if (folds < 2) fail_config("cross-validation needs at least 2 folds");
    if (z.t() < folds) fail_config("cross-validation needs T >= folds");
    if (k_max < 2 || k_max > z.n() - 1) fail_config("k_max must satisfy 2 <= k_max <= N - 1");
    const int t = z.t();
    std::vector<int> bounds(static_cast<std::size_t>(folds) + 1);
    for (int f = 0; f <= folds; ++f) bounds[static_cast<std::size_t>(f)] = static_cast<int>((static_cast<long long>(f) * t) / folds);

    CvSelection out;
    double best = kInf;
    for (int k = 2; k <= k_max; ++k) {
        double total = 0.0;
        for (int f = 0; f < folds; ++f) {
            const int lo = bounds[static_cast<std::size_t>(f)];
            const int hi = bounds[static_cast<std::size_t>(f) + 1];
            std::vector<int> train;
            for (int s = 0; s < t; ++s)
                if (s < lo || s >= hi) train.push_back(s);
            if (train.size() < 2) fail_config("cross-validation training block shorter than 2 periods");
            const LossPanel ztrain = z.select_times(train);
            const auto trace = fit(ztrain, k, derive_seed(seed_for_k(seed, k), static_cast<std::uint64_t>(f)), opt);
            double sse = 0.0;
            for (int i = 0; i < z.n(); ++i) {
                const auto center = trace.centers.row(trace.final[i]);
                for (int s = lo; s < hi; ++s) {
                    const auto r = z.row(i, s);
                    for (int q = 0; q < z.p(); ++q) sse += (r[q] - center(q)) * (r[q] - center(q));
                }
            }
            total += sse / (static_cast<double>(z.n()) * (hi - lo));
        }
        const double err = total / folds;
        out.rows.push_back({k, err});
        if (err < best) {
            best = err;
            out.k = k;
        }
    }
    return out;
}

}  // namespace cepa
