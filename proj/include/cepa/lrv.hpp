#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cepa/error.hpp"
#include "cepa/kmeans.hpp"
#include "cepa/panel.hpp"

namespace cepa {

/// Per-period stacked cluster cross-sectional averages and their time mean.
struct ClusterMeanSeries {
    Eigen::MatrixXd series;  ///< T x KP, row t = (Zbar_{1,t}', ..., Zbar_{K,t}')
    Eigen::VectorXd mean;    ///< KP, stacked cluster centers theta_hat
};

inline ClusterMeanSeries cluster_mean_series(const LossPanel& z, const Clustering& c) {
    if (c.n() != z.n()) fail_config("clustering does not match the panel");
    if (!c.all_nonempty()) fail_config("clustering has an empty cluster");
    const int p = z.p();
    ClusterMeanSeries out;
    out.series = Eigen::MatrixXd::Zero(z.t(), c.k * p);
    for (int i = 0; i < z.n(); ++i) {
        const int base = c[i] * p;
        const double w = 1.0 / c.sizes[static_cast<std::size_t>(c[i])];
        for (int s = 0; s < z.t(); ++s) {
            const auto r = z.row(i, s);
            for (int q = 0; q < p; ++q) out.series(s, base + q) += w * r[q];
        }
    }
    out.mean = out.series.colwise().mean().transpose();
    return out;
}

/// Single-cluster (cross-sectional average) series, T x P.
inline ClusterMeanSeries overall_mean_series(const LossPanel& z) {
    return cluster_mean_series(z, Clustering(std::vector<int>(static_cast<std::size_t>(z.n()), 0), 1));
}

/// Orthonormal-series long-run covariance estimate.
struct OsLrv {
    Eigen::MatrixXd omega;
    int b = 0;
    int block = 0;  ///< block size P for block accessors

    /// The {k, g} block of size P x P.
    [[nodiscard]] Eigen::MatrixXd block_at(int k, int g) const {
        return omega.block(k * block, g * block, block, block);
    }
};

/**
 * @brief Omega = B^{-1} sum_j Lambda_j Lambda_j' with
 *        Lambda_j = sqrt(2/T) sum_t (x_t - xbar) cos(pi j (t - 1/2) / T),  t = 1..T.
 */
inline OsLrv os_lrv(const Eigen::MatrixXd& series, int b, int block = 0) {
    const auto t = static_cast<int>(series.rows());
    const auto d = series.cols();
    if (b < 1) fail_config("number of basis functions B must be >= 1");
    if (b > t) fail_config("number of basis functions B must not exceed T");
    const Eigen::RowVectorXd mean = series.colwise().mean();
    const Eigen::MatrixXd centered = series.rowwise() - mean;
    Eigen::MatrixXd basis(b, t);
    const double scale = std::sqrt(2.0 / t);
    for (int j = 1; j <= b; ++j)
        for (int s = 1; s <= t; ++s)
            basis(j - 1, s - 1) = scale * std::cos(std::numbers::pi * j * (s - 0.5) / t);
    const Eigen::MatrixXd lambda = basis * centered;  // B x d, row j = Lambda_j'
    OsLrv out;
    out.omega = lambda.transpose() * lambda / b;
    out.omega = 0.5 * (out.omega + out.omega.transpose());
    out.b = b;
    out.block = block > 0 ? block : static_cast<int>(d);
    return out;
}

/// B = min(floor(P T^{2/3}), T), with the floor evaluated exactly in integers.
inline int default_b(int p, int t) {
    if (p < 1 || t < 1) fail_config("default_b needs P >= 1 and T >= 1");
    // floor(P T^{2/3}) is the largest b with b^3 <= P^3 T^2.
    const long double target = static_cast<long double>(p) * p * p * t * t;
    auto b = static_cast<long long>(std::floor(std::cbrt(target)));
    while (static_cast<long double>(b + 1) * (b + 1) * (b + 1) <= target) ++b;
    while (b > 0 && static_cast<long double>(b) * b * b > target) --b;
    return static_cast<int>(std::min<long long>(b, t));
}

}  // namespace cepa
