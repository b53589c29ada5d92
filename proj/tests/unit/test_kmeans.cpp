#include <catch_amalgamated.hpp>

#include <random>

#include "cepa/kmeans.hpp"
#include "oracles.hpp"

using Catch::Matchers::WithinAbs;
using Catch::Matchers::WithinRel;

namespace {

cepa::LossPanel scalar_panel(const std::vector<std::vector<double>>& rows) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t t = 0; t < rows[i].size(); ++t) m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(t)) = rows[i][t];
    return cepa::LossPanel::from_matrix(m);
}

}  // namespace

TEST_CASE("objective agrees with the direct double sum", "[kmeans]") {
    std::mt19937_64 rng(3);
    for (int rep = 0; rep < 20; ++rep) {
        const auto z = oracle::random_panel(rng, 9, 5, 2, 3, 1.0);
        const auto labels = cepa::random_assignment(9, 3, rng);
        CHECK_THAT(cepa::objective(z, cepa::Clustering(labels, 3)),
                   WithinRel(oracle::direct_objective(z, labels, 3), 1e-12));
    }
}

TEST_CASE("multi-start fit reaches the exhaustive optimum on small panels", "[kmeans]") {
    std::mt19937_64 rng(11);
    int hits = 0;
    for (int rep = 0; rep < 20; ++rep) {
        const int k = 2 + rep % 2;
        const auto z = oracle::random_panel(rng, 8, 4, 1 + rep % 2, k, 1.5);
        const double best = oracle::exhaustive_min_objective(z, k);
        const auto tr = cepa::fit(z, k, 100 + rep, {50, 100});
        CHECK(tr.objective >= best - 1e-9 * best);
        if (tr.objective <= best + 1e-9 * best) ++hits;
        // a fixed point: every unit sits at its nearest center
        for (int i = 0; i < z.n(); ++i) {
            const double own = (z.unit_mean(i).transpose() - tr.centers.row(tr.final[i])).squaredNorm();
            for (int c = 0; c < k; ++c)
                CHECK(own <= (z.unit_mean(i).transpose() - tr.centers.row(c)).squaredNorm() + 1e-12);
        }
    }
    CHECK(hits == 20);
}

TEST_CASE("objective path is non-increasing without repairs", "[kmeans][property]") {
    std::mt19937_64 rng(5);
    for (int rep = 0; rep < 50; ++rep) {
        const auto z = oracle::random_panel(rng, 15, 6, 2, 3, 0.7);
        const auto tr = cepa::lloyd_run(z, 4, cepa::random_assignment(15, 4, rng), 100);
        if (!tr.repairs.empty()) continue;
        for (std::size_t m = 1; m < tr.objective_path.size(); ++m)
            CHECK(tr.objective_path[m] <= tr.objective_path[m - 1] + 1e-9);
        CHECK(tr.final.all_nonempty());
    }
}

TEST_CASE("assignment ties go to the lowest cluster", "[kmeans]") {
    // unit 2 is equidistant from both centers
    const auto z = scalar_panel({{0.0, 0.0}, {2.0, 2.0}, {1.0, 1.0}});
    const auto tr = cepa::lloyd_run(z, 2, {0, 1, 1}, 1);
    // step 1 centers: 0 and 1.5, unit 2 goes to cluster 1 (distance 0.5 < 1)
    CHECK(tr.assignments[1] == std::vector<int>{0, 1, 1});
    const auto tie = cepa::lloyd_run(scalar_panel({{0.0, 0.0}, {2.0, 2.0}, {1.0, 1.0}, {1.0, 1.0}}), 2, {0, 1, 0, 1}, 1);
    // centers 0.5 and 1.5: units 2 and 3 tie and both go to cluster 0
    CHECK(tie.assignments[1] == std::vector<int>{0, 1, 0, 0});
}

TEST_CASE("empty clusters are refilled with the worst-fitting unit", "[kmeans]") {
    // initial centers c0 = 1.5, c1 = 1, c2 = 2; the assignment step leaves c0 empty
    const auto z = scalar_panel({{0.0, 0.0}, {1.0, 1.0}, {2.0, 2.0}, {3.0, 3.0}});
    const auto tr = cepa::lloyd_run(z, 3, {0, 1, 2, 0}, 1);
    // units 0 and 3 both cost 1; the lower index moves
    REQUIRE(tr.repairs.size() == 1);
    CHECK(tr.repairs[0].iteration == 1);
    CHECK(tr.repairs[0].unit == 0);
    CHECK(tr.repairs[0].from_cluster == 1);
    CHECK(tr.repairs[0].to_cluster == 0);
    CHECK(tr.assignments[1] == std::vector<int>{0, 1, 2, 2});
}

TEST_CASE("repair records and invariants", "[kmeans][property]") {
    std::mt19937_64 rng(17);
    int seen = 0;
    for (int rep = 0; rep < 400 && seen < 20; ++rep) {
        const auto z = oracle::random_panel(rng, 10, 3, 1, 2, 3.0);
        const auto tr = cepa::lloyd_run(z, 5, cepa::random_assignment(10, 5, rng), 100);
        CHECK(tr.final.all_nonempty());
        for (const auto& r : tr.repairs) {
            ++seen;
            const auto& a = tr.assignments[static_cast<std::size_t>(r.iteration)];
            CHECK(a[static_cast<std::size_t>(r.unit)] == r.to_cluster);
            CHECK(r.from_cluster != r.to_cluster);
        }
        for (std::size_t m = 0; m < tr.assignments.size(); ++m)
            CHECK(cepa::Clustering(tr.assignments[m], 5).all_nonempty());
    }
    CHECK(seen > 0);
}

TEST_CASE("fit is deterministic and nested in n_init", "[kmeans]") {
    std::mt19937_64 rng(23);
    const auto z = oracle::random_panel(rng, 20, 5, 1, 3, 1.0);
    const auto a = cepa::fit(z, 3, 42);
    const auto b = cepa::fit(z, 3, 42);
    CHECK(a.final.labels == b.final.labels);
    CHECK(a.objective == b.objective);
    CHECK(cepa::fit(z, 3, 42, {20, 100}).objective <= a.objective);
    CHECK_THROWS_AS(cepa::fit(z, 21, 1), cepa::Error);
    CHECK_THROWS_AS(cepa::fit(z, 3, 1, {0, 100}), cepa::Error);
}

TEST_CASE("random assignment covers every cluster", "[kmeans]") {
    std::mt19937_64 rng(1);
    for (int rep = 0; rep < 100; ++rep) {
        const auto l = cepa::random_assignment(5, 5, rng);
        CHECK(cepa::Clustering(l, 5).all_nonempty());
    }
}

TEST_CASE("information criterion recovers well separated groups", "[kmeans]") {
    std::mt19937_64 rng(29);
    std::normal_distribution<double> nd;
    std::vector<double> data;
    const double mu[3] = {-4.0, 0.0, 4.0};
    for (int i = 0; i < 30; ++i)
        for (int s = 0; s < 20; ++s) data.push_back(mu[i % 3] + nd(rng));
    const cepa::LossPanel z(30, 20, 1, data);
    const auto ic = cepa::select_k_ic(z, 5, 1.5, 7);
    CHECK(ic.k == 3);
    REQUIRE(ic.rows.size() == 4);
    for (const auto& r : ic.rows) {
        CHECK(r.ok);
        // penalty term (KP + N) varsigma log(NT) / (NT)
        CHECK_THAT(r.penalty, WithinRel((r.k + 30) * 1.5 * std::log(600.0) / 600.0, 1e-12));
        // for P = 1 the log det is log(objective / NT)
        CHECK_THAT(r.log_det, WithinAbs(std::log(r.objective / 600.0), 1e-10));
    }
    CHECK(ic.selected_fit().k() == 3);

    const auto cv = cepa::select_k_cv(z, 5, 5, 7);
    REQUIRE(cv.rows.size() == 4);
    // splitting a true group barely changes held-out error, so only the drop from K = 2 is sharp
    CHECK(cv.k >= 3);
    CHECK(cv.rows[1].error < 0.5 * cv.rows[0].error);
    CHECK_THROWS_AS(cepa::select_k_ic(z, 30, 1.5, 7), cepa::Error);
    CHECK_THROWS_AS(cepa::select_k_cv(z, 3, 1, 7), cepa::Error);
}

TEST_CASE("information criterion picks two groups on a two-group panel", "[kmeans]") {
    std::mt19937_64 rng(31);
    std::normal_distribution<double> nd;
    std::vector<double> data;
    for (int i = 0; i < 40; ++i)
        for (int s = 0; s < 30; ++s) data.push_back((i < 20 ? -3.0 : 3.0) + nd(rng));
    const cepa::LossPanel z(40, 30, 1, data);
    CHECK(cepa::select_k_ic(z, 5, 1.5, 3).k == 2);
}
