#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "cepa/dists.hpp"
#include "cepa/error.hpp"
#include "cepa/kmeans.hpp"
#include "cepa/linalg.hpp"
#include "cepa/lrv.hpp"
#include "cepa/panel.hpp"

namespace cepa {

/**
 * @brief Everything that defines one selective test on an estimated clustering.
 *
 * Pairwise form (g set): delta_i = 1{k_i = k}/|C_k| - 1{k_i = g}/|C_g|, theta_diff =
 * theta_k - theta_g, sigma = omega_kk + omega_gg - omega_kg - omega_gk. Single-center form
 * (g empty): delta_i = 1{k_i = k}/|C_k|, theta_diff = theta_k, sigma = omega_kk.
 */
struct PairwiseSelection {
    int k = 0;
    std::optional<int> g;
    std::vector<double> delta;
    double sum_delta_sq = 0.0;
    Eigen::VectorXd theta_diff;
    Eigen::MatrixXd sigma;
    double d = 0.0;  ///< sqrt(T theta_diff' sigma^{-1} theta_diff)
    Eigen::VectorXd j_dir;
    bool sigma_floored = false;

    /// Per-observation shift direction: the contrast component of z_it is delta_i * shift().
    [[nodiscard]] Eigen::VectorXd shift() const { return theta_diff / sum_delta_sq; }
};

namespace detail {

inline PairwiseSelection make_selection(const LossPanel& z, const ClusteringTrace& trace, const OsLrv& lrv, int k,
                                        std::optional<int> g) {
    const Clustering& c = trace.final;
    const int p = z.p();
    if (c.n() != z.n()) fail_config("trace does not match the panel");
    if (k < 0 || k >= c.k || (g && (*g < 0 || *g >= c.k))) fail_config("cluster index out of range");
    if (g && *g == k) fail_config("pairwise test needs two distinct clusters");
    if (lrv.omega.rows() != static_cast<Eigen::Index>(c.k) * p || lrv.block != p) {
        fail_config("long-run variance does not match the clustering (expected KP x KP blocks of size P)");
    }
    PairwiseSelection sel;
    sel.k = k;
    sel.g = g;
    sel.delta.assign(static_cast<std::size_t>(z.n()), 0.0);
    const double wk = 1.0 / c.sizes[static_cast<std::size_t>(k)];
    const double wg = g ? 1.0 / c.sizes[static_cast<std::size_t>(*g)] : 0.0;
    for (int i = 0; i < z.n(); ++i) {
        if (c[i] == k) sel.delta[static_cast<std::size_t>(i)] = wk;
        else if (g && c[i] == *g) sel.delta[static_cast<std::size_t>(i)] = -wg;
    }
    for (double v : sel.delta) sel.sum_delta_sq += v * v;

    const Eigen::MatrixXd centers = cluster_centers(z, c.labels, c.k);
    sel.theta_diff = centers.row(k).transpose();
    sel.sigma = lrv.block_at(k, k);
    if (g) {
        sel.theta_diff -= centers.row(*g).transpose();
        sel.sigma += lrv.block_at(*g, *g) - lrv.block_at(k, *g) - lrv.block_at(*g, k);
    }
    sel.j_dir = Eigen::VectorXd::Zero(p);
    if (sel.theta_diff.isZero(0.0)) return sel;
    const linalg::FlooredEigen eig(sel.sigma);
    sel.sigma_floored = eig.floored();
    sel.d = std::sqrt(z.t() * eig.inverse_quadratic(sel.theta_diff));
    const Eigen::VectorXd dir = eig.inverse_sqrt() * sel.theta_diff;
    if (dir.norm() > 0.0) sel.j_dir = dir / dir.norm();
    return sel;
}

}  // namespace detail

/// Selection for the pairwise hypothesis theta_k = theta_g (0-based cluster indices).
inline PairwiseSelection pairwise_selection(const LossPanel& z, const ClusteringTrace& trace, const OsLrv& lrv, int k,
                                            int g) {
    return detail::make_selection(z, trace, lrv, k, g);
}

/// Selection for the single-center hypothesis theta_k = 0.
inline PairwiseSelection center_selection(const LossPanel& z, const ClusteringTrace& trace, const OsLrv& lrv, int k) {
    return detail::make_selection(z, trace, lrv, k, std::nullopt);
}

/**
 * @brief Data perturbation along the tested contrast:
 *        z(phi)_it = z_it + delta_i (phi/d - 1) shift.
 *
 * The component orthogonal to the contrast is held fixed, z(d) = z, and z(0) has
 * identical centers for the two tested clusters (or a zero center in single-center form).
 */
inline LossPanel perturb(const LossPanel& z, const PairwiseSelection& sel, double phi) {
    if (!(sel.d > 0.0)) fail_numerical("cannot perturb along a zero statistic");
    const Eigen::VectorXd w = sel.shift();
    const double s = phi / sel.d - 1.0;
    std::vector<double> data = z.data();
    const int p = z.p();
    for (int i = 0; i < z.n(); ++i) {
        const double di = sel.delta[static_cast<std::size_t>(i)];
        if (di == 0.0) continue;
        for (int t = 0; t < z.t(); ++t) {
            double* r = data.data() + (static_cast<std::size_t>(i) * z.t() + t) * p;
            for (int q = 0; q < p; ++q) r[q] += di * s * w(q);
        }
    }
    return LossPanel(z.n(), z.t(), p, std::move(data), z.units(), z.times());
}

namespace detail {

/// Set of u >= 0 with a u^2 + b u + c <= 0. `c_scale` sets the tolerance for constant constraints.
inline IntervalUnion solve_quadratic_le(double a, double b, double c, double c_scale) {
    constexpr double kRel = 1e-14;
    const double scale = std::abs(a) + std::abs(b) + std::abs(c);
    if (scale == 0.0) return IntervalUnion::half_line();
    if (std::abs(a) <= kRel * scale && std::abs(b) <= kRel * scale) {
        if (c <= 1e-12 * std::max(c_scale, std::abs(c))) return IntervalUnion::half_line();
        fail_numerical("infeasible selection constraint (observed assignment violates its own rule)");
    }
    if (std::abs(a) <= kRel * scale) {
        const double root = -c / b;
        return b > 0.0 ? IntervalUnion{{0.0, root}} : IntervalUnion{{root, kInf}};
    }
    const double disc = b * b - 4.0 * a * c;
    if (disc < 0.0) return a > 0.0 ? IntervalUnion{} : IntervalUnion::half_line();
    const double sq = std::sqrt(disc);
    const double q = -0.5 * (b + (b >= 0.0 ? sq : -sq));
    double r1 = q / a;
    double r2 = q != 0.0 ? c / q : r1;
    if (r1 > r2) std::swap(r1, r2);
    if (a > 0.0) return IntervalUnion{{r1, r2}};
    return IntervalUnion{{0.0, r1}, {r2, kInf}};
}

}  // namespace detail

/// Truncation region for the statistic plus numerical diagnostics.
struct TruncationSet {
    IntervalUnion region;
    bool dilated = false;
    double slack = 0.0;
    std::size_t constraints = 0;
};

/**
 * @brief Values phi >= 0 for which every assignment step of `trace` is reproduced on z(phi).
 *
 * Step m assigns unit i to a = k_i^(m) using centers computed from step m-1. Under the
 * perturbation the center of cluster c moves by s Delta_c shift with Delta_c the mean of
 * delta over the cluster's members at step m-1, and unit i's time mean moves by
 * s delta_i shift, s = phi/d - 1. Each pair (a, c) therefore gives the quadratic
 * inequality ||e_a + u beta_a w||^2 <= ||e_c + u beta_c w||^2 in u = phi/d, with
 * beta_c = delta_i - Delta_c and e_c the unit-to-center gap at phi = 0.
 *
 * Empty-cluster repairs are replayed too: the argmin labels before the repair must be
 * reproduced and the moved unit's distance to its argmin center must be at least that of
 * every other unit that was eligible to move. Both are quadratics of the same form.
 */
inline TruncationSet truncation_set(const LossPanel& z, const ClusteringTrace& trace, const PairwiseSelection& sel) {
    if (!(sel.d > 0.0)) fail_numerical("truncation set requested for a zero statistic");
    const int n = z.n();
    const int p = z.p();
    const int k = trace.k();
    const Eigen::VectorXd w = sel.shift();
    const double ww = w.squaredNorm();

    TruncationSet out;
    IntervalUnion region = IntervalUnion::half_line();
    // Adds ||e1 + u b1 w||^2 - ||e2 + u b2 w||^2 <= 0.
    auto add = [&](const Eigen::RowVectorXd& e1, double b1, const Eigen::RowVectorXd& e2, double b2) {
        const double e12 = e1.squaredNorm();
        const double e22 = e2.squaredNorm();
        const double qa = (b1 * b1 - b2 * b2) * ww;
        const double qb = 2.0 * (b1 * e1.dot(w) - b2 * e2.dot(w));
        const double qc = e12 - e22;
        ++out.constraints;
        if (qa == 0.0 && qb == 0.0 && qc <= 0.0) return;
        region = region.intersect(detail::solve_quadratic_le(qa, qb, qc, e12 + e22));
    };

    Eigen::MatrixXd centers(k, p);
    std::vector<double> cdelta(static_cast<std::size_t>(k));
    std::vector<int> counts(static_cast<std::size_t>(k));
    Eigen::VectorXd beta(k);
    Eigen::MatrixXd gaps(k, p);
    Eigen::MatrixXd own_gap(n, p);     // gap to the argmin center, per unit
    Eigen::VectorXd own_beta(n);
    std::size_t next_repair = 0;
    for (int m = 1; m <= trace.iterations; ++m) {
        const auto& prev = trace.assignments[static_cast<std::size_t>(m) - 1];
        std::vector<int> raw = trace.assignments[static_cast<std::size_t>(m)];
        const std::size_t first_repair = next_repair;
        while (next_repair < trace.repairs.size() && trace.repairs[next_repair].iteration == m) ++next_repair;
        for (std::size_t r = next_repair; r-- > first_repair;) {
            raw[static_cast<std::size_t>(trace.repairs[r].unit)] = trace.repairs[r].from_cluster;
        }

        centers.setZero();
        std::fill(cdelta.begin(), cdelta.end(), 0.0);
        std::fill(counts.begin(), counts.end(), 0);
        for (int i = 0; i < n; ++i) {
            const int c = prev[static_cast<std::size_t>(i)];
            centers.row(c) += z.unit_mean(i).transpose();
            cdelta[static_cast<std::size_t>(c)] += sel.delta[static_cast<std::size_t>(i)];
            ++counts[static_cast<std::size_t>(c)];
        }
        for (int c = 0; c < k; ++c) {
            centers.row(c) /= counts[static_cast<std::size_t>(c)];
            cdelta[static_cast<std::size_t>(c)] /= counts[static_cast<std::size_t>(c)];
        }
        for (int i = 0; i < n; ++i) {
            const double di = sel.delta[static_cast<std::size_t>(i)];
            for (int c = 0; c < k; ++c) {
                beta(c) = di - cdelta[static_cast<std::size_t>(c)];
                gaps.row(c) = z.unit_mean(i).transpose() - centers.row(c) - beta(c) * w.transpose();
            }
            const int a = raw[static_cast<std::size_t>(i)];
            own_gap.row(i) = gaps.row(a);
            own_beta(i) = beta(a);
            for (int c = 0; c < k; ++c) {
                if (c != a) add(gaps.row(a), beta(a), gaps.row(c), beta(c));
            }
        }

        if (first_repair == next_repair) continue;
        std::vector<int> sizes(static_cast<std::size_t>(k), 0);
        for (int l : raw) ++sizes[static_cast<std::size_t>(l)];
        std::vector<char> moved(static_cast<std::size_t>(n), 0);
        for (std::size_t r = first_repair; r < next_repair; ++r) {
            const int mover = trace.repairs[r].unit;
            for (int j = 0; j < n; ++j) {
                if (j == mover || moved[static_cast<std::size_t>(j)]) continue;
                if (sizes[static_cast<std::size_t>(raw[static_cast<std::size_t>(j)])] < 2) continue;
                add(own_gap.row(j), own_beta(j), own_gap.row(mover), own_beta(mover));
            }
            --sizes[static_cast<std::size_t>(raw[static_cast<std::size_t>(mover)])];
            raw[static_cast<std::size_t>(mover)] = trace.repairs[r].to_cluster;
            ++sizes[static_cast<std::size_t>(trace.repairs[r].to_cluster)];
            moved[static_cast<std::size_t>(mover)] = 1;
        }
    }
    std::vector<Interval> scaled;
    for (const auto& iv : region.intervals()) scaled.push_back({iv.lo * sel.d, iv.hi * sel.d});
    region = IntervalUnion(std::move(scaled)).drop_shorter_than(1e-12);

    const double gap = region.distance(sel.d);
    if (gap > 0.0) {
        if (!(gap <= 1e-8 * std::max(1.0, sel.d))) {
            fail_internal("observed statistic lies outside its own truncation set");
        }
        region = region.unite(IntervalUnion{{sel.d - gap, sel.d + gap}});
        out.dilated = true;
        out.slack = gap;
    }
    out.region = std::move(region);
    return out;
}

struct SelectivePValue {
    double p = 1.0;
    double d = 0.0;
    TruncationSet truncation;
    bool degenerate = false;  ///< statistic exactly zero, p set to 1
    bool sigma_floored = false;
};

namespace detail {

inline SelectivePValue selective_from(const LossPanel& z, const ClusteringTrace& trace, const PairwiseSelection& sel) {
    SelectivePValue out;
    out.d = sel.d;
    out.sigma_floored = sel.sigma_floored;
    if (!(sel.d > 0.0)) {
        out.degenerate = true;
        out.p = 1.0;
        return out;
    }
    out.truncation = truncation_set(z, trace, sel);
    out.p = truncated_chi_survival(sel.d, z.p(), out.truncation.region);
    return out;
}

}  // namespace detail

/// Selective p-value for theta_k = theta_g given the clustering produced by `trace`.
inline SelectivePValue selective_p(const LossPanel& z, const ClusteringTrace& trace, const OsLrv& lrv, int k, int g) {
    return detail::selective_from(z, trace, pairwise_selection(z, trace, lrv, k, g));
}

/// Selective p-value for theta_k = 0 given the clustering produced by `trace`.
inline SelectivePValue selective_p_center(const LossPanel& z, const ClusteringTrace& trace, const OsLrv& lrv, int k) {
    return detail::selective_from(z, trace, center_selection(z, trace, lrv, k));
}

}  // namespace cepa
