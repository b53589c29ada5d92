#include <catch_amalgamated.hpp>

#include <random>

#include "cepa/inference.hpp"
#include "oracles.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

TEST_CASE("merging constants and examples", "[inference][merge]") {
    CHECK_THAT(cepa::merge_constant(-2.0, 3), WithinRel(2.0 * std::sqrt(3.0), 1e-14));
    CHECK(cepa::merge_constant(-cepa::kInf, 7) == 7.0);
    CHECK_THAT(cepa::merge_pvalues({0.1, 0.1, 0.1}, -2.0), WithinAbs(0.34641016151377546, 1e-12));
    CHECK_THAT(cepa::merge_pvalues({0.01, 0.5, 0.9}, -cepa::kInf), WithinAbs(0.03, 1e-15));
    // harmonic-type mean of order -2 by hand: (mean of p^-2)^{-1/2}
    const std::vector<double> ps{0.02, 0.3, 0.7, 0.11};
    double s = 0.0;
    for (double p : ps) s += 1.0 / (p * p);
    CHECK_THAT(cepa::generalized_mean(ps, -2.0), WithinRel(1.0 / std::sqrt(s / 4.0), 1e-13));
    CHECK(cepa::merge_pvalues({0.9, 0.95}, -2.0) == 1.0);
    CHECK(cepa::merge_pvalues({0.0, 0.5}, -3.0) == 0.0);
    CHECK(cepa::merge_pvalues({0.0, 0.5}, -cepa::kInf) == 0.0);
    // tiny p-values stay finite in log space
    CHECK(cepa::merge_pvalues({1e-300, 1e-250}, -5.0) > 0.0);
}

TEST_CASE("merging rejects an invalid order", "[inference][merge]") {
    for (double r : {-1.0, -0.5, 0.0, 2.0}) {
        CHECK_THROWS_AS(cepa::merge_pvalues({0.1, 0.2}, r), cepa::Error);
    }
    CHECK_THROWS_AS(cepa::merge_pvalues({}, -2.0), cepa::Error);
    CHECK_THROWS_AS(cepa::merge_pvalues({1.5}, -2.0), cepa::Error);
}

TEST_CASE("merging is monotone in every component", "[inference][merge][property]") {
    std::mt19937_64 rng(6);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 500; ++rep) {
        const int n = 1 + static_cast<int>(rng() % 6);
        std::vector<double> ps(static_cast<std::size_t>(n));
        for (auto& p : ps) p = u(rng);
        const double r = rep % 5 == 0 ? -cepa::kInf : -1.0 - 10.0 * u(rng) - 1e-3;
        const double base = cepa::merge_pvalues(ps, r);
        CHECK(base >= 0.0);
        CHECK(base <= 1.0);
        auto up = ps;
        const auto j = static_cast<std::size_t>(rng() % static_cast<std::uint64_t>(n));
        up[j] = up[j] + (1.0 - up[j]) * u(rng);
        CHECK(cepa::merge_pvalues(up, r) >= base - 1e-15);
        // the generalized mean lies between min and max
        const double m = cepa::generalized_mean(ps, r);
        CHECK(m >= *std::min_element(ps.begin(), ps.end()) * (1 - 1e-12));
        CHECK(m <= *std::max_element(ps.begin(), ps.end()) * (1 + 1e-12));
    }
}

TEST_CASE("O-EPA statistic against a direct computation", "[inference]") {
    std::mt19937_64 rng(13);
    for (int rep = 0; rep < 10; ++rep) {
        const int p = 1 + rep % 2;
        const auto z = oracle::random_panel(rng, 10, 30, p, 2, 0.3);
        const int b = 8;
        const auto r = cepa::oepa_test(z, b);
        // overall means and cosine-weighted sums written out directly
        Eigen::MatrixXd x = Eigen::MatrixXd::Zero(30, p);
        for (int i = 0; i < 10; ++i)
            for (int s = 0; s < 30; ++s)
                for (int q = 0; q < p; ++q) x(s, q) += z(i, s, q) / 10.0;
        const Eigen::VectorXd mean = x.colwise().mean().transpose();
        Eigen::MatrixXd omega = Eigen::MatrixXd::Zero(p, p);
        for (int j = 1; j <= b; ++j) {
            Eigen::VectorXd lam = Eigen::VectorXd::Zero(p);
            for (int s = 0; s < 30; ++s)
                lam += std::sqrt(2.0 / 30) * std::cos(M_PI * j * (s + 0.5) / 30) * (x.row(s).transpose() - mean);
            omega += lam * lam.transpose() / b;
        }
        const double w = (b - p + 1.0) / (p * b) * 30.0 * mean.dot(omega.ldlt().solve(mean));
        CHECK_THAT(r.statistic, WithinRel(w, 1e-9));
        CHECK(*r.df1 == p);
        CHECK(*r.df2 == b - p + 1);
        CHECK_THAT(r.p, WithinRel(cepa::f_survival(w, p, b - p + 1), 1e-9));
    }
}

TEST_CASE("zero panel gives p = 1", "[inference]") {
    const auto z = cepa::LossPanel::from_matrix(Eigen::MatrixXd::Zero(6, 20));
    const auto o = cepa::oepa_test(z);
    CHECK(o.statistic == 0.0);
    CHECK(o.p == 1.0);
    const auto w = cepa::wald_fixed_clusters(z, cepa::Clustering({0, 0, 0, 1, 1, 1}, 2));
    CHECK(w.p == 1.0);
}

TEST_CASE("Wald with fixed clusters", "[inference]") {
    std::mt19937_64 rng(19);
    const auto z = oracle::random_panel(rng, 12, 40, 1, 3, 0.5);
    const cepa::Clustering c({0, 1, 2, 0, 1, 2, 0, 1, 2, 0, 1, 2}, 3);
    const auto r = cepa::wald_fixed_clusters(z, c, 10);
    CHECK(*r.df1 == 3);
    CHECK(*r.df2 == 8);
    const auto series = cepa::cluster_mean_series(z, c);
    const auto lrv = cepa::os_lrv(series.series, 10, 1);
    const double w = 8.0 / 30.0 * 40.0 * series.mean.dot(lrv.omega.ldlt().solve(series.mean));
    CHECK_THAT(r.statistic, WithinRel(w, 1e-9));
    CHECK_THROWS_AS(cepa::wald_fixed_clusters(z, c, 2), cepa::Error);
    CHECK(cepa::predetermined_test(z, c, 10).p == r.p);
}

TEST_CASE("K = 2 homogeneity equals the calibrated single p-value", "[inference]") {
    std::mt19937_64 rng(21);
    for (int rep = 0; rep < 5; ++rep) {
        const auto z = oracle::random_panel(rng, 16, 20, 1, 2, 1.0);
        const auto h = cepa::homogeneity_selective(z, cepa::KChoice::fixed(2), -2.0, std::nullopt, 3);
        REQUIRE(h.pairs.size() == 1);
        // b_{r,1} = r / (r + 1) = 2 for r = -2
        CHECK_THAT(h.p, WithinAbs(std::min(1.0, 2.0 * h.pairs[0].p), 1e-14));
        const auto c = cepa::cepa_selective(z, cepa::KChoice::fixed(2), -2.0, std::nullopt, 3);
        REQUIRE(c.oepa_p);
        CHECK_THAT(c.p, WithinAbs(cepa::merge_pvalues({c.pairs[0].p, *c.oepa_p}, -2.0), 1e-14));
        CHECK(c.statistic == cepa::generalized_mean({c.pairs[0].p, *c.oepa_p}, -2.0));
    }
}

TEST_CASE("composite p is invariant to relabeling clusters", "[inference][property]") {
    // the set of unordered pairs does not depend on the labels, so neither does the merged value
    std::mt19937_64 rng(27);
    const auto z = oracle::random_panel(rng, 18, 15, 1, 3, 1.2);
    const auto tr = cepa::fit(z, 3, 4);
    const std::vector<int> perm{2, 0, 1};
    std::vector<int> init2;
    for (int l : tr.assignments[0]) init2.push_back(perm[static_cast<std::size_t>(l)]);
    const auto tr2 = cepa::lloyd_run(z, 3, init2, 100);
    for (std::size_t i = 0; i < tr.final.labels.size(); ++i)
        REQUIRE(tr2.final.labels[i] == perm[static_cast<std::size_t>(tr.final.labels[i])]);

    auto merged = [&](const cepa::ClusteringTrace& t) {
        const auto series = cepa::cluster_mean_series(z, t.final);
        const auto lrv = cepa::os_lrv(series.series, 6, 1);
        std::vector<double> ps;
        for (const auto& pr : cepa::pairwise_selective(z, t, lrv)) ps.push_back(pr.p);
        std::sort(ps.begin(), ps.end());
        return ps;
    };
    const auto a = merged(tr);
    const auto b = merged(tr2);
    REQUIRE(a.size() == 3);
    for (std::size_t j = 0; j < 3; ++j) CHECK_THAT(a[j], WithinAbs(b[j], 1e-10));
}

TEST_CASE("split sample layout", "[inference]") {
    std::mt19937_64 rng(33);
    const auto z = oracle::random_panel(rng, 12, 50, 1, 3, 1.0);
    const auto r = cepa::split_sample_test(z, 0.2, cepa::KChoice::fixed(3), std::nullopt, 1);
    CHECK(*r.train_end == 10);
    CHECK(*r.gap == 3);  // floor(sqrt(10))
    CHECK(*r.test_begin == 13);
    CHECK(*r.b == cepa::default_b(1, 37));
    CHECK(r.t == 50);
    // explicit cosine re-indexing: the same as a Wald test on the trailing block
    const auto trailing = z.slice_times(13, 50);
    const auto direct = cepa::wald_fixed_clusters(trailing, cepa::Clustering(r.labels, 3));
    CHECK(direct.statistic == r.statistic);

    CHECK_THROWS_AS(cepa::split_sample_test(z, 0.02, cepa::KChoice::fixed(3), std::nullopt, 1), cepa::Error);
    CHECK_THROWS_AS(cepa::split_sample_test(z, 0.97, cepa::KChoice::fixed(3), std::nullopt, 1), cepa::Error);
    CHECK_THROWS_AS(cepa::split_sample_test(z, 1.0, cepa::KChoice::fixed(3), std::nullopt, 1), cepa::Error);
}

TEST_CASE("K selection feeds the tests", "[inference]") {
    std::mt19937_64 rng(35);
    std::normal_distribution<double> nd;
    std::vector<double> data;
    for (int i = 0; i < 30; ++i)
        for (int s = 0; s < 25; ++s) data.push_back((i % 3 - 1) * 5.0 + nd(rng));
    const cepa::LossPanel z(30, 25, 1, data);
    const auto n = cepa::naive_test(z, cepa::KChoice::ic(), std::nullopt, 8);
    CHECK(*n.k >= 3);  // the criterion may split a true group at this T
    CHECK(n.k_method == "ic");
    CHECK(n.ic_rows.size() == 4);
    CHECK(n.p < 1e-6);
    const auto c = cepa::cepa_selective(z, cepa::KChoice::cv(4, 5), -2.0, std::nullopt, 8);
    CHECK(c.pairs.size() == 3);
    CHECK(c.cv_rows.size() == 3);
    CHECK(c.p >= 0.0);
    CHECK(c.p <= 1.0);
}
