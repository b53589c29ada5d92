#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "cepa/dists.hpp"
#include "cepa/error.hpp"
#include "cepa/inference.hpp"
#include "cepa/kmeans.hpp"
#include "cepa/panel.hpp"
#include "cepa/parallel.hpp"

namespace cepa::sim {

/**
 * @brief Panel AR(1) design with two forecasters and clustered forecast-noise variance.
 *
 * Y_it = alpha (1 - rho_k) + rho_k Y_{i,t-1} + U_it, forecaster 1 adds the noise eps_it to the
 * true conditional mean, forecaster 2 drops the intercept. E(dl_it) = psi_k.
 */
struct SimConfig {
    int n = 80;
    int t = 50;
    std::array<double, 3> rho{0.1, 0.2, 0.3};
    double alpha = 1.0;
    double phi = 0.2;     ///< noise persistence
    double lambda = 0.2;  ///< common-factor loading
    std::array<double, 3> psi{0.0, 0.0, 0.0};
    std::optional<std::array<double, 3>> psi_after_break;  ///< used from output period floor(T/2) on
    bool conditional = false;  ///< H = (1, Y_{t-1})' instead of H = 1
    int burn_in = 100;
    int reps = 200;
    std::uint64_t seed = 1;
};

/// True cluster (0-based) of unit i: first quarter, second quarter, second half.
inline int true_cluster(int i, int n) {
    if (i < n / 4) return 0;
    if (i < n / 2) return 1;
    return 2;
}

inline Clustering true_clustering(int n) {
    std::vector<int> labels(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) labels[static_cast<std::size_t>(i)] = true_cluster(i, n);
    return Clustering(std::move(labels), 3);
}

inline double noise_variance(const SimConfig& cfg, int k, const std::array<double, 3>& psi) {
    const double a = cfg.alpha * (1.0 - cfg.rho[static_cast<std::size_t>(k)]);
    return a * a + psi[static_cast<std::size_t>(k)];
}

inline void validate(const SimConfig& cfg) {
    if (cfg.n < 4 || cfg.n % 4 != 0) fail_config("simulation N must be a positive multiple of 4");
    if (cfg.t < 2) fail_config("simulation T must be >= 2");
    if (cfg.reps < 1) fail_config("reps must be >= 1");
    if (cfg.burn_in < 0) fail_config("burn_in must be >= 0");
    if (!(std::abs(cfg.phi) < 1.0)) fail_config("phi must lie in (-1, 1)");
    for (double r : cfg.rho) {
        if (!(std::abs(r) < 1.0)) fail_config("rho must lie in (-1, 1)");
    }
    auto check = [&](const std::array<double, 3>& psi) {
        for (int k = 0; k < 3; ++k) {
            const double rad = noise_variance(cfg, k, psi) * (1.0 - cfg.phi * cfg.phi) - cfg.lambda * cfg.lambda;
            if (!(rad > 0.0)) {
                fail_config("noise scale radicand is not positive for cluster " + std::to_string(k + 1) +
                            " (psi too negative or lambda too large)");
            }
        }
    };
    check(cfg.psi);
    if (cfg.psi_after_break) check(*cfg.psi_after_break);
}

/// psi/2 + psi (-1.2, -0.8, 1): the overall mean differs from zero.
inline std::array<double, 3> psi_case1(double psi) {
    return {psi / 2 - 1.2 * psi, psi / 2 - 0.8 * psi, psi / 2 + psi};
}

/// psi (-1.2, -0.8, 1): the size-weighted overall mean is zero.
inline std::array<double, 3> psi_case2(double psi) { return {-1.2 * psi, -0.8 * psi, psi}; }

/// Named designs: size, power-case1, power-case2, break.
inline SimConfig design(const std::string& name, double psi, SimConfig base = {}) {
    if (name == "size") {
        base.psi = {0.0, 0.0, 0.0};
        base.psi_after_break.reset();
    } else if (name == "power-case1") {
        base.psi = psi_case1(psi);
        base.psi_after_break.reset();
    } else if (name == "power-case2") {
        base.psi = psi_case2(psi);
        base.psi_after_break.reset();
    } else if (name == "break") {
        base.psi = psi_case1(psi);
        const auto first = base.psi;
        base.psi_after_break = std::array<double, 3>{-first[0], -first[1], -first[2]};
    } else {
        fail_config("unknown design '" + name + "' (expected size, power-case1, power-case2 or break)");
    }
    return base;
}

/// One simulated panel with the lagged target needed by the conditional test function.
struct SimPanel {
    LossDifferentialPanel dl;
    Eigen::MatrixXd y;  ///< Y_it aligned with dl
    Clustering truth;
};

/**
 * @brief Draws one replication.
 *
 * Y starts from its stationary law N(alpha, 1/(1 - rho^2)) and eps from N(0, sigma^2_k);
 * both then run through `burn_in` discarded periods. In conditional mode T + 1 periods are
 * kept so that the lagged test function leaves exactly T moment periods.
 */
inline SimPanel simulate_panel(const SimConfig& cfg, std::uint64_t rep_seed) {
    validate(cfg);
    const int n = cfg.n;
    const int offset = cfg.conditional ? 1 : 0;
    const int kept = cfg.t + offset;
    const int total = cfg.burn_in + kept;
    const int break_at = cfg.burn_in + offset + cfg.t / 2;  // first raw period with the second regime
    NormalStream rng(rep_seed);

    std::vector<double> y(static_cast<std::size_t>(n));
    std::vector<double> eps(static_cast<std::size_t>(n));
    std::vector<int> k(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const int c = true_cluster(i, n);
        const double rho = cfg.rho[static_cast<std::size_t>(c)];
        k[static_cast<std::size_t>(i)] = c;
        y[static_cast<std::size_t>(i)] = cfg.alpha + rng() / std::sqrt(1.0 - rho * rho);
        eps[static_cast<std::size_t>(i)] = std::sqrt(noise_variance(cfg, c, cfg.psi)) * rng();
    }
    std::array<double, 3> scale_a{};
    std::array<double, 3> scale_b{};
    for (int c = 0; c < 3; ++c) {
        const double f = 1.0 - cfg.phi * cfg.phi;
        const double l2 = cfg.lambda * cfg.lambda;
        scale_a[static_cast<std::size_t>(c)] = std::sqrt(noise_variance(cfg, c, cfg.psi) * f - l2);
        scale_b[static_cast<std::size_t>(c)] =
            cfg.psi_after_break ? std::sqrt(noise_variance(cfg, c, *cfg.psi_after_break) * f - l2)
                                : scale_a[static_cast<std::size_t>(c)];
    }

    Eigen::MatrixXd dl(n, kept);
    Eigen::MatrixXd ymat(n, kept);
    for (int s = 0; s < total; ++s) {
        const auto& scale = (cfg.psi_after_break && s >= break_at) ? scale_b : scale_a;
        const double f = rng();
        for (int i = 0; i < n; ++i) {
            const int c = k[static_cast<std::size_t>(i)];
            const double rho = cfg.rho[static_cast<std::size_t>(c)];
            const double u = rng();
            const double xi = rng();
            const double mean = cfg.alpha * (1.0 - rho) + rho * y[static_cast<std::size_t>(i)];
            const double e = cfg.phi * eps[static_cast<std::size_t>(i)] + cfg.lambda * f +
                             scale[static_cast<std::size_t>(c)] * xi;
            const double ynew = mean + u;
            const double f1 = mean + e;
            const double f2 = rho * y[static_cast<std::size_t>(i)];
            y[static_cast<std::size_t>(i)] = ynew;
            eps[static_cast<std::size_t>(i)] = e;
            if (s >= cfg.burn_in) {
                const int col = s - cfg.burn_in;
                dl(i, col) = (ynew - f1) * (ynew - f1) - (ynew - f2) * (ynew - f2);
                ymat(i, col) = ynew;
            }
        }
    }
    return {LossDifferentialPanel(std::move(dl)), std::move(ymat), true_clustering(n)};
}

/// Moment panel for the configured test function.
inline LossPanel moments(const SimConfig& cfg, const SimPanel& panel) {
    if (!cfg.conditional) return apply_test_function(panel.dl, TestFunctionSpec::constant());
    return apply_test_function(panel.dl, TestFunctionSpec::lagged({panel.y}, 1, {"y"}));
}

enum class TestKind { selective, homogeneity, oepa, naive, predetermined, split };

inline const char* to_string(TestKind k) {
    switch (k) {
        case TestKind::selective: return "selective-cepa";
        case TestKind::homogeneity: return "homogeneity";
        case TestKind::oepa: return "oepa";
        case TestKind::naive: return "naive";
        case TestKind::predetermined: return "predetermined";
        case TestKind::split: return "split";
    }
    return "?";
}

inline TestKind parse_test_kind(const std::string& s) {
    for (auto k : {TestKind::selective, TestKind::homogeneity, TestKind::oepa, TestKind::naive,
                   TestKind::predetermined, TestKind::split}) {
        if (s == to_string(k)) return k;
    }
    if (s == "selective") return TestKind::selective;
    fail_config("unknown test '" + s +
                "' (expected selective-cepa, homogeneity, oepa, naive, predetermined or split)");
}

/// Settings shared by every test in an experiment.
struct TestSettings {
    KChoice k = KChoice::ic();
    double r = kDefaultMergeOrder;
    std::optional<int> b;
    double gamma = 0.2;
    KmeansOptions kmeans;
};

/// Runs one test on one moment panel. `truth` is only used by the predetermined test.
inline TestReport run_test(TestKind kind, const LossPanel& z, const Clustering& truth, const TestSettings& s,
                           std::uint64_t seed) {
    switch (kind) {
        case TestKind::selective: return cepa_selective(z, s.k, s.r, s.b, seed, s.kmeans);
        case TestKind::homogeneity: return homogeneity_selective(z, s.k, s.r, s.b, seed, s.kmeans);
        case TestKind::oepa: return oepa_test(z, s.b);
        case TestKind::naive: return naive_test(z, s.k, s.b, seed, s.kmeans);
        case TestKind::predetermined: return predetermined_test(z, truth, s.b);
        case TestKind::split: return split_sample_test(z, s.gamma, s.k, std::nullopt, seed, s.kmeans);
    }
    fail_internal("unhandled test kind");
}

struct RateRow {
    std::string test;
    int reps = 0;
    int valid = 0;
    int failures = 0;
    int rejections = 0;
    double rate = 0.0;
    std::optional<double> se;  ///< absent when fewer than 2 valid replications
    std::vector<std::string> failure_messages;
};

struct ExperimentResult {
    std::string design;
    SimConfig config;
    TestSettings settings;
    double q = 0.05;
    std::vector<RateRow> rows;
    std::vector<std::vector<double>> pvalues;  ///< [test][rep], NaN for failed replications
};

/// Seed of replication `rep`; panel draws and Kmeans starts use separate substreams of it.
inline std::uint64_t rep_seed(std::uint64_t seed, int rep) { return derive_seed(seed, static_cast<std::uint64_t>(rep)); }
inline std::uint64_t panel_seed(std::uint64_t rs) { return derive_seed(rs, 0); }
inline std::uint64_t kmeans_seed(std::uint64_t rs) { return derive_seed(rs, 1); }

/**
 * @brief Rejection rates of each test at level q over cfg.reps replications.
 *
 * Replications run in parallel but each one depends only on (cfg.seed, rep), so the table
 * is identical for any thread count. A test whose failure count reaches 1% of reps
 * makes the whole experiment fail.
 */
inline ExperimentResult run_experiment(const SimConfig& cfg, const std::vector<TestKind>& menu, double q,
                                       const TestSettings& settings = {}, int threads = 0,
                                       const std::string& design_name = "custom") {
    validate(cfg);
    if (menu.empty()) fail_config("experiment needs at least one test");
    if (!(q > 0.0 && q < 1.0)) fail_config("level q must lie in (0, 1)");
    const std::size_t nt = menu.size();
    ExperimentResult out;
    out.design = design_name;
    out.config = cfg;
    out.settings = settings;
    out.q = q;
    out.pvalues.assign(nt, std::vector<double>(static_cast<std::size_t>(cfg.reps), std::nan("")));
    std::vector<std::vector<std::string>> messages(nt, std::vector<std::string>(static_cast<std::size_t>(cfg.reps)));

    parallel_for(cfg.reps, worker_count(threads), [&](int rep) {
        const auto rs = rep_seed(cfg.seed, rep);
        const auto panel = simulate_panel(cfg, panel_seed(rs));
        const auto z = moments(cfg, panel);
        for (std::size_t j = 0; j < nt; ++j) {
            try {
                out.pvalues[j][static_cast<std::size_t>(rep)] = run_test(menu[j], z, panel.truth, settings, kmeans_seed(rs)).p;
            } catch (const Error& e) {
                if (e.kind() == ErrorKind::config) throw;
                messages[j][static_cast<std::size_t>(rep)] = e.what();
            }
        }
    });

    for (std::size_t j = 0; j < nt; ++j) {
        RateRow row;
        row.test = to_string(menu[j]);
        row.reps = cfg.reps;
        for (int rep = 0; rep < cfg.reps; ++rep) {
            const double p = out.pvalues[j][static_cast<std::size_t>(rep)];
            if (std::isnan(p)) {
                ++row.failures;
                row.failure_messages.push_back("rep " + std::to_string(rep) + ": " +
                                               messages[j][static_cast<std::size_t>(rep)]);
                continue;
            }
            ++row.valid;
            if (p <= q) ++row.rejections;
        }
        if (row.failures > 0 && 100 * row.failures >= cfg.reps) {
            fail_numerical(row.test + ": " + std::to_string(row.failures) + " of " + std::to_string(cfg.reps) +
                           " replications failed (limit is under 1%); first: " + row.failure_messages.front());
        }
        row.rate = row.valid > 0 ? static_cast<double>(row.rejections) / row.valid : 0.0;
        if (row.valid >= 2) row.se = std::sqrt(row.rate * (1.0 - row.rate) / row.valid);
        out.rows.push_back(std::move(row));
    }
    return out;
}

/// Experiment description read from a `key = value` file.
struct ExperimentConfig {
    std::string design = "size";
    double psi = 0.25;
    SimConfig sim;
    TestSettings settings;
    std::vector<TestKind> tests{TestKind::selective, TestKind::naive, TestKind::predetermined, TestKind::split};
    double q = 0.05;
};

namespace detail {

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

inline double to_double(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        fail_config("config key '" + key + "': '" + v + "' is not a number");
    }
}

inline long long to_int(const std::string& key, const std::string& v) {
    try {
        std::size_t pos = 0;
        const long long d = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        fail_config("config key '" + key + "': '" + v + "' is not an integer");
    }
}

inline bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    fail_config("config key '" + key + "': '" + v + "' is not a boolean");
}

inline std::array<double, 3> to_triple(const std::string& key, const std::string& v) {
    const auto parts = split_list(v);
    if (parts.size() != 3) fail_config("config key '" + key + "' needs three comma-separated values");
    return {to_double(key, parts[0]), to_double(key, parts[1]), to_double(key, parts[2])};
}

}  // namespace detail

/// Applies one key/value pair. Unknown keys are config errors.
inline void apply_setting(ExperimentConfig& c, const std::string& key, const std::string& v) {
    using namespace detail;
    if (key == "design") c.design = v;
    else if (key == "psi") c.psi = to_double(key, v);
    else if (key == "n") c.sim.n = static_cast<int>(to_int(key, v));
    else if (key == "t") c.sim.t = static_cast<int>(to_int(key, v));
    else if (key == "reps") c.sim.reps = static_cast<int>(to_int(key, v));
    else if (key == "seed") c.sim.seed = static_cast<std::uint64_t>(to_int(key, v));
    else if (key == "rho") c.sim.rho = to_triple(key, v);
    else if (key == "alpha") c.sim.alpha = to_double(key, v);
    else if (key == "phi") c.sim.phi = to_double(key, v);
    else if (key == "lambda") c.sim.lambda = to_double(key, v);
    else if (key == "burn_in") c.sim.burn_in = static_cast<int>(to_int(key, v));
    else if (key == "conditional") c.sim.conditional = to_bool(key, v);
    else if (key == "q") c.q = to_double(key, v);
    else if (key == "r") c.settings.r = v == "-inf" ? -kInf : to_double(key, v);
    else if (key == "gamma") c.settings.gamma = to_double(key, v);
    else if (key == "b") {
        if (v == "auto") c.settings.b.reset();
        else c.settings.b = static_cast<int>(to_int(key, v));
    } else if (key == "k") {
        if (v == "ic") c.settings.k.method = KChoice::Method::ic;
        else if (v == "cv") c.settings.k.method = KChoice::Method::cv;
        else {
            c.settings.k.method = KChoice::Method::fixed;
            c.settings.k.k = static_cast<int>(to_int(key, v));
        }
    } else if (key == "k_max") c.settings.k.k_max = static_cast<int>(to_int(key, v));
    else if (key == "varsigma") c.settings.k.varsigma = to_double(key, v);
    else if (key == "folds") c.settings.k.folds = static_cast<int>(to_int(key, v));
    else if (key == "n_init") c.settings.kmeans.n_init = static_cast<int>(to_int(key, v));
    else if (key == "max_iter") c.settings.kmeans.max_iter = static_cast<int>(to_int(key, v));
    else if (key == "tests") {
        c.tests.clear();
        for (const auto& t : split_list(v)) c.tests.push_back(parse_test_kind(t));
    } else {
        fail_config("unknown config key '" + key + "'");
    }
}

/// Parses `key = value` lines; `#` starts a comment.
inline ExperimentConfig parse_experiment_config(std::istream& in, ExperimentConfig base = {}) {
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) fail_config("config line " + std::to_string(line_no) + ": expected key = value");
        apply_setting(base, detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
    return base;
}

inline ExperimentConfig read_experiment_config(const std::string& path, ExperimentConfig base = {}) {
    std::ifstream in(path);
    if (!in) fail_input("cannot open config file '" + path + "'");
    return parse_experiment_config(in, std::move(base));
}

}  // namespace cepa::sim
