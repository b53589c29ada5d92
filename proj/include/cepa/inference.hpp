#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "cepa/dists.hpp"
#include "cepa/error.hpp"
#include "cepa/kmeans.hpp"
#include "cepa/linalg.hpp"
#include "cepa/lrv.hpp"
#include "cepa/panel.hpp"
#include "cepa/selective.hpp"

namespace cepa {

/// How the number of clusters is obtained.
struct KChoice {
    enum class Method { fixed, ic, cv };

    Method method = Method::ic;
    int k = 0;  ///< used when method == fixed
    int k_max = 5;
    double varsigma = 1.5;
    int folds = 5;

    static KChoice fixed(int k) {
        KChoice c;
        c.method = Method::fixed;
        c.k = k;
        return c;
    }
    static KChoice ic(int k_max = 5, double varsigma = 1.5) {
        KChoice c;
        c.k_max = k_max;
        c.varsigma = varsigma;
        return c;
    }
    static KChoice cv(int k_max = 5, int folds = 5) {
        KChoice c;
        c.method = Method::cv;
        c.k_max = k_max;
        c.folds = folds;
        return c;
    }
};

inline const char* to_string(KChoice::Method m) {
    switch (m) {
        case KChoice::Method::fixed: return "fixed";
        case KChoice::Method::ic: return "ic";
        case KChoice::Method::cv: return "cv";
    }
    return "?";
}

/// One pairwise (or single-center) selective sub-test.
struct PairReport {
    int k = 0;
    int g = 0;
    double d = 0.0;
    double p = 1.0;
    bool degenerate = false;
    bool dilated = false;
    bool sigma_floored = false;
    std::vector<Interval> region;
};

/// Result of any test. Cluster indices inside are 0-based.
struct TestReport {
    std::string test;
    double statistic = 0.0;
    double p = 1.0;
    int n = 0;
    int t = 0;
    int p_dim = 0;
    std::optional<int> k;
    std::string k_method;  ///< fixed | ic | cv | given | estimated, empty when no clusters
    std::optional<int> b;
    std::optional<int> df1;
    std::optional<int> df2;
    std::optional<double> r;
    std::vector<PairReport> pairs;  ///< present iff composite
    std::optional<double> oepa_p;   ///< O-EPA component of the composite
    std::vector<int> labels;        ///< clustering used, if any
    std::vector<IcRow> ic_rows;
    std::vector<CvRow> cv_rows;
    // split-sample layout, periods are 0-based and half-open
    std::optional<int> train_end;
    std::optional<int> test_begin;
    std::optional<int> gap;
    // Kmeans diagnostics
    std::optional<int> iterations;
    bool hit_max_iter = false;
    std::size_t repairs = 0;
    std::vector<std::string> warnings;

    [[nodiscard]] bool composite() const noexcept { return !pairs.empty(); }
};

namespace detail {

struct WaldResult {
    double statistic = 0.0;
    double p = 1.0;
    int df1 = 0;
    int df2 = 0;
    bool floored = false;
};

/// a T theta' Omega^{-1} theta with a = (B - D + 1)/(D B), referred to F(D, B - D + 1).
inline WaldResult wald(const Eigen::VectorXd& theta, const Eigen::MatrixXd& omega, int t, int b) {
    const auto dim = static_cast<int>(theta.size());
    if (b < dim) fail_config("B = " + std::to_string(b) + " is too small, need B >= " + std::to_string(dim));
    WaldResult out;
    out.df1 = dim;
    out.df2 = b - dim + 1;
    if (theta.isZero(0.0)) return out;
    const linalg::FlooredEigen eig(omega);
    out.floored = eig.floored();
    const double a = static_cast<double>(b - dim + 1) / (static_cast<double>(dim) * b);
    out.statistic = a * t * eig.inverse_quadratic(theta);
    out.p = f_survival(out.statistic, out.df1, out.df2);
    return out;
}

inline void fill_trace(TestReport& rep, const ClusteringTrace& trace) {
    rep.k = trace.k();
    rep.labels = trace.final.labels;
    rep.iterations = trace.iterations;
    rep.hit_max_iter = trace.hit_max_iter;
    rep.repairs = trace.repairs.size();
    if (trace.hit_max_iter) rep.warnings.emplace_back("Kmeans reached max_iter without converging");
}

inline void fill_dims(TestReport& rep, const LossPanel& z) {
    rep.n = z.n();
    rep.t = z.t();
    rep.p_dim = z.p();
}

}  // namespace detail

/// Clusters chosen for a panel plus the search diagnostics that produced them.
struct KFit {
    ClusteringTrace trace;
    std::vector<IcRow> ic_rows;
    std::vector<CvRow> cv_rows;
    KChoice::Method method = KChoice::Method::fixed;
};

/// Fits Panel Kmeans with K fixed or chosen by IC/CV. The K-cluster fit always uses seed_for_k(seed, K).
inline KFit fit_clusters(const LossPanel& z, const KChoice& choice, std::uint64_t seed, KmeansOptions opt = {}) {
    KFit out;
    out.method = choice.method;
    switch (choice.method) {
        case KChoice::Method::fixed:
            if (choice.k < 1 || choice.k > z.n()) fail_config("K must satisfy 1 <= K <= N");
            out.trace = fit(z, choice.k, seed_for_k(seed, choice.k), opt);
            break;
        case KChoice::Method::ic: {
            auto sel = select_k_ic(z, choice.k_max, choice.varsigma, seed, opt);
            out.ic_rows = sel.rows;
            out.trace = sel.selected_fit();
            break;
        }
        case KChoice::Method::cv: {
            auto sel = select_k_cv(z, choice.k_max, choice.folds, seed, opt);
            out.cv_rows = sel.rows;
            out.trace = fit(z, sel.k, seed_for_k(seed, sel.k), opt);
            break;
        }
    }
    return out;
}

/**
 * @brief Overall EPA test: W = a_B T Zbar' Omega_o^{-1} Zbar, a_B = (B - P + 1)/(P B),
 *        p from F(P, B - P + 1). `b` defaults to default_b(P, T).
 */
inline TestReport oepa_test(const LossPanel& z, std::optional<int> b = std::nullopt) {
    const int bb = b ? *b : default_b(z.p(), z.t());
    const auto series = overall_mean_series(z);
    const auto lrv = os_lrv(series.series, bb, z.p());
    const auto w = detail::wald(series.mean, lrv.omega, z.t(), bb);
    TestReport rep;
    rep.test = "oepa";
    detail::fill_dims(rep, z);
    rep.statistic = w.statistic;
    rep.p = w.p;
    rep.b = bb;
    rep.df1 = w.df1;
    rep.df2 = w.df2;
    if (w.floored) rep.warnings.emplace_back("long-run variance eigenvalues floored");
    return rep;
}

/**
 * @brief Wald test of theta = 0 for a fixed clustering:
 *        W = a_{K,B} T theta' Omega^{-1} theta, a_{K,B} = (B - KP + 1)/(KP B), p from F(KP, B - KP + 1).
 *
 * With true clusters this is the predetermined test; with estimated clusters it is the naive one.
 */
inline TestReport wald_fixed_clusters(const LossPanel& z, const Clustering& c, std::optional<int> b = std::nullopt) {
    const int bb = b ? *b : default_b(z.p(), z.t());
    const auto series = cluster_mean_series(z, c);
    const auto lrv = os_lrv(series.series, bb, z.p());
    const auto w = detail::wald(series.mean, lrv.omega, z.t(), bb);
    TestReport rep;
    rep.test = "wald";
    detail::fill_dims(rep, z);
    rep.statistic = w.statistic;
    rep.p = w.p;
    rep.k = c.k;
    rep.k_method = "given";
    rep.labels = c.labels;
    rep.b = bb;
    rep.df1 = w.df1;
    rep.df2 = w.df2;
    if (w.floored) rep.warnings.emplace_back("long-run variance eigenvalues floored");
    return rep;
}

/// Predetermined test: Wald with the supplied (true) clustering.
inline TestReport predetermined_test(const LossPanel& z, const Clustering& c, std::optional<int> b = std::nullopt) {
    auto rep = wald_fixed_clusters(z, c, b);
    rep.test = "predetermined";
    return rep;
}

/// Naive test: Wald with clusters estimated on the same data, ignoring the selection.
inline TestReport naive_test(const LossPanel& z, const KChoice& choice, std::optional<int> b, std::uint64_t seed,
                             KmeansOptions opt = {}) {
    const auto kf = fit_clusters(z, choice, seed, opt);
    auto rep = wald_fixed_clusters(z, kf.trace.final, b);
    rep.test = "naive";
    detail::fill_trace(rep, kf.trace);
    rep.k_method = to_string(choice.method);
    rep.ic_rows = kf.ic_rows;
    rep.cv_rows = kf.cv_rows;
    return rep;
}

/**
 * @brief Split-sample test.
 *
 * Clusters are fitted on the training block {1..floor(gamma T)}; after a gap of
 * l = floor(sqrt(gamma T)) periods the Wald statistic is computed on the remaining
 * periods with the cosine basis indexed from the start of that block. `b` defaults to
 * default_b(P, |S2|).
 */
inline TestReport split_sample_test(const LossPanel& z, double gamma, const KChoice& choice, std::optional<int> b,
                                    std::uint64_t seed, KmeansOptions opt = {}) {
    if (!(gamma > 0.0 && gamma < 1.0)) fail_config("gamma must lie in (0, 1)");
    const int t = z.t();
    const double gt = gamma * t;
    const auto s1 = static_cast<int>(std::floor(gt));
    const auto gap = static_cast<int>(std::floor(std::sqrt(gt)));
    const int s2_begin = s1 + gap;
    if (s1 < 2) fail_config("split sample: training block has fewer than 2 periods (raise gamma or T)");
    if (t - s2_begin < 2) fail_config("split sample: test block has fewer than 2 periods (lower gamma)");

    const LossPanel train = z.slice_times(0, s1);
    const LossPanel test = z.slice_times(s2_begin, t);
    const auto kf = fit_clusters(train, choice, seed, opt);
    if (!kf.trace.final.all_nonempty()) fail_numerical("split sample: empty estimated cluster on the training block");
    const int bb = b ? *b : default_b(z.p(), test.t());
    auto rep = wald_fixed_clusters(test, kf.trace.final, bb);
    rep.test = "split";
    detail::fill_dims(rep, z);
    detail::fill_trace(rep, kf.trace);
    rep.k_method = to_string(choice.method);
    rep.ic_rows = kf.ic_rows;
    rep.cv_rows = kf.cv_rows;
    rep.train_end = s1;
    rep.gap = gap;
    rep.test_begin = s2_begin;
    return rep;
}

/// Calibration b_{r,n} = [r/(r+1)] n^{1+1/r}; r = -inf gives the Bonferroni constant n.
inline double merge_constant(double r, int n) {
    if (n < 1) fail_config("merging needs at least one p-value");
    if (std::isinf(r) && r < 0.0) return n;
    if (!(r < -1.0)) fail_config("merging order r must lie in [-inf, -1)");
    return r / (r + 1.0) * std::pow(static_cast<double>(n), 1.0 + 1.0 / r);
}

/// Generalized mean of order r, ((1/n) sum p^r)^{1/r}, evaluated in log space.
inline double generalized_mean(const std::vector<double>& ps, double r) {
    if (ps.empty()) fail_config("merging needs at least one p-value");
    if (std::isinf(r) && r < 0.0) return *std::min_element(ps.begin(), ps.end());
    double hi = -kInf;
    for (double p : ps) {
        if (p <= 0.0) return 0.0;
        hi = std::max(hi, r * std::log(p));
    }
    double s = 0.0;
    for (double p : ps) s += std::exp(r * std::log(p) - hi);
    return std::exp((hi + std::log(s / static_cast<double>(ps.size()))) / r);
}

/**
 * @brief Merged p-value min(b_{r,n} M_r(p_1..p_n), 1), valid under arbitrary dependence.
 *
 * Any component equal to 0 gives 0.
 */
inline double merge_pvalues(const std::vector<double>& ps, double r) {
    for (double p : ps) {
        if (!(p >= 0.0 && p <= 1.0)) fail_input("p-values to merge must lie in [0, 1]");
    }
    const double c = merge_constant(r, static_cast<int>(ps.size()));
    const double m = generalized_mean(ps, r);
    if (m == 0.0) return 0.0;
    return std::min(std::exp(std::log(c) + std::log(m)), 1.0);
}

/// Selective p-values for every pair k < g, in lexicographic pair order.
inline std::vector<PairReport> pairwise_selective(const LossPanel& z, const ClusteringTrace& trace, const OsLrv& lrv) {
    std::vector<PairReport> out;
    for (int k = 0; k < trace.k(); ++k) {
        for (int g = k + 1; g < trace.k(); ++g) {
            const auto sp = selective_p(z, trace, lrv, k, g);
            PairReport pr;
            pr.k = k;
            pr.g = g;
            pr.d = sp.d;
            pr.p = sp.p;
            pr.degenerate = sp.degenerate;
            pr.dilated = sp.truncation.dilated;
            pr.sigma_floored = sp.sigma_floored;
            pr.region = sp.truncation.region.intervals();
            out.push_back(std::move(pr));
        }
    }
    return out;
}

namespace detail {

inline TestReport selective_composite(const LossPanel& z, const KChoice& choice, double r, std::optional<int> b,
                                      std::uint64_t seed, KmeansOptions opt, bool with_oepa) {
    merge_constant(r, 1);  // validate r before any fitting
    const auto kf = fit_clusters(z, choice, seed, opt);
    const ClusteringTrace& trace = kf.trace;
    if (trace.k() < 2) fail_config("selective tests need K >= 2");
    const int bb = b ? *b : default_b(z.p(), z.t());
    const auto series = cluster_mean_series(z, trace.final);
    const auto lrv = os_lrv(series.series, bb, z.p());

    TestReport rep;
    rep.test = with_oepa ? "selective-cepa" : "homogeneity";
    fill_dims(rep, z);
    fill_trace(rep, trace);
    rep.k_method = to_string(choice.method);
    rep.ic_rows = kf.ic_rows;
    rep.cv_rows = kf.cv_rows;
    rep.b = bb;
    rep.r = r;
    rep.pairs = pairwise_selective(z, trace, lrv);

    std::vector<double> ps;
    for (const auto& pr : rep.pairs) {
        ps.push_back(pr.p);
        if (pr.dilated) rep.warnings.emplace_back("truncation set dilated to contain the observed statistic");
        if (pr.sigma_floored) rep.warnings.emplace_back("contrast covariance eigenvalues floored");
    }
    if (with_oepa) {
        const auto o = oepa_test(z, bb);
        rep.oepa_p = o.p;
        ps.push_back(o.p);
    }
    rep.statistic = generalized_mean(ps, r);
    rep.p = merge_pvalues(ps, r);
    std::sort(rep.warnings.begin(), rep.warnings.end());
    rep.warnings.erase(std::unique(rep.warnings.begin(), rep.warnings.end()), rep.warnings.end());
    return rep;
}

}  // namespace detail

inline constexpr double kDefaultMergeOrder = -2.0;

/**
 * @brief Selective C-EPA test: n_p = K(K-1)/2 pairwise selective p-values plus the O-EPA
 *        p-value merged with calibration over n_p + 1 inputs. `statistic` is the generalized mean.
 */
inline TestReport cepa_selective(const LossPanel& z, const KChoice& choice, double r = kDefaultMergeOrder,
                                 std::optional<int> b = std::nullopt, std::uint64_t seed = 0, KmeansOptions opt = {}) {
    return detail::selective_composite(z, choice, r, b, seed, opt, true);
}

/// Homogeneity test: merges only the n_p pairwise selective p-values.
inline TestReport homogeneity_selective(const LossPanel& z, const KChoice& choice, double r = kDefaultMergeOrder,
                                        std::optional<int> b = std::nullopt, std::uint64_t seed = 0,
                                        KmeansOptions opt = {}) {
    return detail::selective_composite(z, choice, r, b, seed, opt, false);
}

}  // namespace cepa
