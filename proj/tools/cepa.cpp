// Command-line front end: panel tests, Monte Carlo experiments and K selection.

#include <CLI11.hpp>

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cepa/cepa.hpp"

namespace {

using cepa::io::json;

struct Common {
    std::string input;
    std::string k = "ic";
    int k_max = 5;
    double varsigma = 1.5;
    int folds = 5;
    std::string r = "-2";
    std::string b = "auto";
    double gamma = 0.2;
    double q = 0.05;
    std::optional<std::uint64_t> seed;
    int n_init = 10;
    int max_iter = 100;
    std::string format = "table";
    std::string output;
    std::vector<std::string> columns;
    int tau = 1;
};

std::uint64_t resolve_seed(const std::optional<std::uint64_t>& seed) {
    if (seed) return *seed;
    std::random_device rd;
    const std::uint64_t s = (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
    std::cerr << "seed: " << s << '\n';
    return s;
}

double parse_r(const std::string& s) {
    if (s == "-inf") return -cepa::kInf;
    try {
        std::size_t pos = 0;
        const double r = std::stod(s, &pos);
        if (pos == s.size()) return r;
    } catch (const std::exception&) {
    }
    cepa::fail_config("--r must be a number below -1 or -inf, got '" + s + "'");
}

std::optional<int> parse_b(const std::string& s) {
    if (s == "auto") return std::nullopt;
    try {
        std::size_t pos = 0;
        const int b = std::stoi(s, &pos);
        if (pos == s.size() && b >= 1) return b;
    } catch (const std::exception&) {
    }
    cepa::fail_config("--b must be a positive integer or 'auto', got '" + s + "'");
}

cepa::KChoice parse_k(const Common& c) {
    cepa::KChoice k;
    k.k_max = c.k_max;
    k.varsigma = c.varsigma;
    k.folds = c.folds;
    if (c.k == "ic") {
        k.method = cepa::KChoice::Method::ic;
    } else if (c.k == "cv") {
        k.method = cepa::KChoice::Method::cv;
    } else {
        try {
            std::size_t pos = 0;
            k.k = std::stoi(c.k, &pos);
            if (pos != c.k.size()) throw std::invalid_argument(c.k);
        } catch (const std::exception&) {
            cepa::fail_config("--k must be an integer, 'ic' or 'cv', got '" + c.k + "'");
        }
        k.method = cepa::KChoice::Method::fixed;
    }
    return k;
}

void emit(const Common& c, const std::string& text) {
    if (c.output.empty()) {
        std::cout << text;
        return;
    }
    std::ofstream out(c.output, std::ios::binary);
    if (!out) cepa::fail_input("cannot write output file '" + c.output + "'");
    out << text;
}

std::string fmt(double v, int prec = 6) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    std::ostringstream os;
    os << std::setprecision(prec) << v;
    return os.str();
}

/// Predetermined labels mapped to 0..K-1 in sorted label order (numeric when all labels are numbers).
cepa::Clustering clustering_from_labels(const std::vector<std::string>& labels) {
    std::vector<std::string> distinct = labels;
    std::sort(distinct.begin(), distinct.end());
    distinct.erase(std::unique(distinct.begin(), distinct.end()), distinct.end());
    const bool numeric = std::all_of(distinct.begin(), distinct.end(), [](const std::string& s) {
        return cepa::csv::detail::parse_double(s).has_value();
    });
    if (numeric) {
        std::sort(distinct.begin(), distinct.end(), [](const std::string& a, const std::string& b) {
            return *cepa::csv::detail::parse_double(a) < *cepa::csv::detail::parse_double(b);
        });
    }
    std::map<std::string, int> index;
    for (std::size_t j = 0; j < distinct.size(); ++j) index[distinct[j]] = static_cast<int>(j);
    std::vector<int> out;
    for (const auto& l : labels) out.push_back(index[l]);
    return cepa::Clustering(std::move(out), static_cast<int>(distinct.size()));
}

std::string report_table(const cepa::TestReport& r, double q) {
    std::ostringstream os;
    os << "test        " << r.test << '\n';
    os << "panel       N=" << r.n << " T=" << r.t << " P=" << r.p_dim << '\n';
    if (r.k) os << "clusters    K=" << *r.k << " (" << r.k_method << ")\n";
    if (r.b) os << "B           " << *r.b << '\n';
    if (r.df1) os << "df          F(" << *r.df1 << ", " << *r.df2 << ")\n";
    if (r.r) os << "r           " << fmt(*r.r) << '\n';
    if (r.train_end) {
        os << "split       train 1.." << *r.train_end << ", gap " << *r.gap << ", test " << *r.test_begin + 1 << ".."
           << r.t << '\n';
    }
    os << "statistic   " << fmt(r.statistic, 8) << '\n';
    os << "p-value     " << fmt(r.p, 8) << '\n';
    os << "decision    " << (r.p <= q ? "reject" : "do not reject") << " at q = " << fmt(q) << '\n';
    if (r.composite()) {
        os << '\n' << std::left << std::setw(6) << "pair" << std::right << std::setw(14) << "d" << std::setw(14)
           << "p" << "  truncation set\n";
        for (const auto& p : r.pairs) {
            std::ostringstream pair;
            pair << p.k + 1 << "-" << p.g + 1;
            os << std::left << std::setw(6) << pair.str() << std::right << std::setw(14) << fmt(p.d) << std::setw(14)
               << fmt(p.p) << "  ";
            for (std::size_t j = 0; j < p.region.size(); ++j) {
                os << (j ? " U " : "") << '[' << fmt(p.region[j].lo) << ", " << fmt(p.region[j].hi) << ']';
            }
            if (p.degenerate) os << "(statistic is zero)";
            os << '\n';
        }
        if (r.oepa_p) os << std::left << std::setw(6) << "oepa" << std::right << std::setw(14) << "" << std::setw(14)
                         << fmt(*r.oepa_p) << '\n';
    }
    for (const auto& w : r.warnings) os << "warning: " << w << '\n';
    return os.str();
}

std::string experiment_table(const cepa::sim::ExperimentResult& e) {
    std::ostringstream os;
    os << "design " << e.design << ", N=" << e.config.n << ", T=" << e.config.t << ", reps=" << e.config.reps
       << ", q=" << fmt(e.q) << (e.config.conditional ? ", conditional" : ", unconditional") << '\n';
    os << std::left << std::setw(16) << "test" << std::right << std::setw(8) << "rate" << std::setw(10) << "se"
       << std::setw(8) << "valid" << std::setw(10) << "failures" << '\n';
    for (const auto& r : e.rows) {
        os << std::left << std::setw(16) << r.test << std::right << std::setw(8) << std::fixed << std::setprecision(3)
           << r.rate << std::setw(10) << (r.se ? fmt(*r.se, 3) : std::string("n/a")) << std::setw(8) << r.valid
           << std::setw(10) << r.failures << '\n';
        os.unsetf(std::ios::fixed);
    }
    return os.str();
}

json common_echo(const Common& c, std::uint64_t seed) {
    json j;
    j["input"] = c.input;
    j["columns"] = c.columns;
    j["tau"] = c.tau;
    j["k"] = c.k;
    j["k_max"] = c.k_max;
    j["varsigma"] = c.varsigma;
    j["folds"] = c.folds;
    j["r"] = c.r;
    j["b"] = c.b;
    j["gamma"] = c.gamma;
    j["q"] = c.q;
    j["seed"] = seed;
    j["n_init"] = c.n_init;
    j["max_iter"] = c.max_iter;
    return j;
}

void add_common(CLI::App* app, Common& c, bool with_input) {
    if (with_input) {
        app->add_option("-i,--input", c.input, "Panel CSV (unit,time,loss1,loss2[,x...][,cluster] or unit,time,z1..zP)")
            ->required();
        app->add_option("--columns", c.columns, "Covariate columns for the lagged test function H = (1, x...)")
            ->delimiter(',');
        app->add_option("--tau", c.tau, "Lag of the test function");
    }
    app->add_option("--k", c.k, "Number of clusters: integer, ic or cv");
    app->add_option("--k-max", c.k_max, "Largest K searched by ic/cv");
    app->add_option("--varsigma", c.varsigma, "IC penalty scale");
    app->add_option("--folds", c.folds, "CV folds");
    app->add_option("--r", c.r, "Merging order r < -1, or -inf");
    app->add_option("--b", c.b, "Number of cosine basis functions, or auto");
    app->add_option("--gamma", c.gamma, "Training share for the split-sample test");
    app->add_option("--q", c.q, "Test level for the printed decision / rejection rates");
    app->add_option("--seed", c.seed, "Master seed (drawn from entropy and printed when absent)");
    app->add_option("--n-init", c.n_init, "Kmeans random starts");
    app->add_option("--max-iter", c.max_iter, "Kmeans iteration cap");
    app->add_option("--format", c.format, "table or json")->check(CLI::IsMember({"table", "json"}));
    app->add_option("-o,--output", c.output, "Write the report here instead of stdout");
}

int cmd_test(const Common& c, const std::string& test) {
    const auto kind = cepa::sim::parse_test_kind(test);
    const double r = parse_r(c.r);
    const auto b = parse_b(c.b);
    const auto kchoice = parse_k(c);
    if (!(c.q > 0.0 && c.q < 1.0)) cepa::fail_config("--q must lie in (0, 1)");
    const auto file = cepa::csv::read_panel_file(c.input);
    if (kind == cepa::sim::TestKind::predetermined && !file.cluster_labels) {
        cepa::fail_config("predetermined test needs a 'cluster' column in the input");
    }
    const std::uint64_t seed = resolve_seed(c.seed);
    const auto z = cepa::csv::to_loss_panel(file, c.columns, c.tau);
    cepa::KmeansOptions opt{c.n_init, c.max_iter};

    cepa::TestReport rep;
    switch (kind) {
        case cepa::sim::TestKind::selective: rep = cepa::cepa_selective(z, kchoice, r, b, seed, opt); break;
        case cepa::sim::TestKind::homogeneity: rep = cepa::homogeneity_selective(z, kchoice, r, b, seed, opt); break;
        case cepa::sim::TestKind::oepa: rep = cepa::oepa_test(z, b); break;
        case cepa::sim::TestKind::naive: rep = cepa::naive_test(z, kchoice, b, seed, opt); break;
        case cepa::sim::TestKind::predetermined:
            rep = cepa::predetermined_test(z, clustering_from_labels(*file.cluster_labels), b);
            break;
        case cepa::sim::TestKind::split: rep = cepa::split_sample_test(z, c.gamma, kchoice, b, seed, opt); break;
    }
    if (c.format == "json") {
        json echo = common_echo(c, seed);
        echo["test"] = rep.test;
        emit(c, cepa::io::to_json(rep, echo).dump(2) + "\n");
    } else {
        emit(c, report_table(rep, c.q));
    }
    return 0;
}

int cmd_kselect(const Common& c, const std::string& method) {
    const auto file = cepa::csv::read_panel_file(c.input);
    const std::uint64_t seed = resolve_seed(c.seed);
    const auto z = cepa::csv::to_loss_panel(file, c.columns, c.tau);
    cepa::KmeansOptions opt{c.n_init, c.max_iter};
    std::optional<cepa::IcSelection> ic;
    std::optional<cepa::CvSelection> cv;
    if (method == "ic" || method == "both") ic = cepa::select_k_ic(z, c.k_max, c.varsigma, seed, opt);
    if (method == "cv" || method == "both") cv = cepa::select_k_cv(z, c.k_max, c.folds, seed, opt);
    if (c.format == "json") {
        json echo = common_echo(c, seed);
        echo["method"] = method;
        emit(c, cepa::io::kselect_json(ic, cv, echo).dump(2) + "\n");
        return 0;
    }
    std::ostringstream os;
    os << std::left << std::setw(4) << "K";
    if (ic) os << std::right << std::setw(16) << "IC";
    if (cv) os << std::right << std::setw(16) << "CV error";
    os << '\n';
    for (int k = 2; k <= c.k_max; ++k) {
        os << std::left << std::setw(4) << k;
        if (ic) {
            const auto& row = ic->rows[static_cast<std::size_t>(k - 2)];
            os << std::right << std::setw(16) << (row.ok ? fmt(row.ic, 8) : std::string("singular"));
        }
        if (cv) os << std::right << std::setw(16) << fmt(cv->rows[static_cast<std::size_t>(k - 2)].error, 8);
        os << '\n';
    }
    if (ic) os << "selected K (ic): " << ic->k << '\n';
    if (cv) os << "selected K (cv): " << cv->k << '\n';
    emit(c, os.str());
    return 0;
}

struct SimArgs {
    std::string design;
    std::string config;
    std::optional<int> n;
    std::optional<int> t;
    std::optional<int> reps;
    std::optional<double> psi;
    bool conditional = false;
    std::vector<std::string> tests;
    int threads = 0;
    std::string csv;
    std::string json_path;
    std::string emit_panel;
    int emit_rep = 0;
};

int cmd_simulate(const Common& c, const SimArgs& s, const CLI::App& app) {
    cepa::sim::ExperimentConfig cfg;
    if (!s.config.empty()) cfg = cepa::sim::read_experiment_config(s.config, cfg);
    if (!s.design.empty()) cfg.design = s.design;
    if (s.n) cfg.sim.n = *s.n;
    if (s.t) cfg.sim.t = *s.t;
    if (s.reps) cfg.sim.reps = *s.reps;
    if (s.psi) cfg.psi = *s.psi;
    if (s.conditional) cfg.sim.conditional = true;
    if (!s.tests.empty()) {
        cfg.tests.clear();
        for (const auto& t : s.tests) cfg.tests.push_back(cepa::sim::parse_test_kind(t));
    }
    auto given = [&](const char* name) { return app.count(name) > 0; };
    if (given("--k")) cfg.settings.k = parse_k(c);
    if (given("--k-max")) cfg.settings.k.k_max = c.k_max;
    if (given("--varsigma")) cfg.settings.k.varsigma = c.varsigma;
    if (given("--folds")) cfg.settings.k.folds = c.folds;
    if (given("--r")) cfg.settings.r = parse_r(c.r);
    if (given("--b")) cfg.settings.b = parse_b(c.b);
    if (given("--gamma")) cfg.settings.gamma = c.gamma;
    if (given("--q")) cfg.q = c.q;
    if (given("--n-init")) cfg.settings.kmeans.n_init = c.n_init;
    if (given("--max-iter")) cfg.settings.kmeans.max_iter = c.max_iter;
    if (given("--seed") || s.config.empty()) cfg.sim.seed = given("--seed") ? *c.seed : resolve_seed(std::nullopt);
    cepa::merge_constant(cfg.settings.r, 1);

    const auto sim = cepa::sim::design(cfg.design, cfg.psi, cfg.sim);
    if (!s.emit_panel.empty()) {
        cepa::sim::validate(sim);
        const auto rs = cepa::sim::rep_seed(sim.seed, s.emit_rep);
        const auto panel = cepa::sim::simulate_panel(sim, cepa::sim::panel_seed(rs));
        std::ofstream out(s.emit_panel, std::ios::binary);
        if (!out) cepa::fail_input("cannot write panel file '" + s.emit_panel + "'");
        cepa::csv::write_loss_panel(out, panel.dl, {{"y", panel.y}}, &panel.truth.labels);
        return 0;
    }
    const auto result = cepa::sim::run_experiment(sim, cfg.tests, cfg.q, cfg.settings, s.threads, cfg.design);
    const json j = cepa::io::to_json(result);
    if (!s.csv.empty()) {
        std::ofstream out(s.csv, std::ios::binary);
        if (!out) cepa::fail_input("cannot write '" + s.csv + "'");
        out << cepa::io::experiment_csv(result);
    }
    if (!s.json_path.empty()) {
        std::ofstream out(s.json_path, std::ios::binary);
        if (!out) cepa::fail_input("cannot write '" + s.json_path + "'");
        out << j.dump(2) << '\n';
    }
    emit(c, c.format == "json" ? j.dump(2) + "\n" : experiment_table(result));
    return 0;
}

int exit_code(cepa::ErrorKind k) {
    switch (k) {
        case cepa::ErrorKind::input: return 2;
        case cepa::ErrorKind::numerical: return 3;
        case cepa::ErrorKind::config: return 4;
        case cepa::ErrorKind::internal: return 3;
    }
    return 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Selective-inference tests of clustered equal predictive ability for panel forecasts"};
    app.require_subcommand(1);

    Common test_args;
    std::string test_kind = "selective-cepa";
    auto* test = app.add_subcommand("test", "Run one test on a panel CSV");
    test->add_option("--test", test_kind,
                     "selective-cepa | homogeneity | oepa | naive | predetermined | split");
    add_common(test, test_args, true);

    Common sim_args;
    SimArgs sim;
    auto* simulate = app.add_subcommand("simulate", "Monte Carlo rejection rates for a named design");
    simulate->add_option("design", sim.design, "size | power-case1 | power-case2 | break");
    simulate->add_option("--config", sim.config, "key = value experiment file");
    simulate->add_option("--n", sim.n, "Number of units (multiple of 4)");
    simulate->add_option("--t", sim.t, "Number of periods");
    simulate->add_option("--reps", sim.reps, "Replications");
    simulate->add_option("--psi", sim.psi, "Signal strength psi");
    simulate->add_flag("--conditional", sim.conditional, "Use H = (1, Y_{t-1})'");
    simulate->add_option("--tests", sim.tests, "Comma-separated test list")->delimiter(',');
    simulate->add_option("--threads", sim.threads, "Worker threads (0 = all cores, capped by CEPA_THREADS)");
    simulate->add_option("--csv", sim.csv, "Also write the table as CSV");
    simulate->add_option("--json", sim.json_path, "Also write the table as JSON");
    simulate->add_option("--emit-panel", sim.emit_panel, "Write one simulated panel as CSV and exit");
    simulate->add_option("--emit-rep", sim.emit_rep, "Replication index used by --emit-panel");
    add_common(simulate, sim_args, false);

    Common ks_args;
    std::string ks_method = "ic";
    auto* kselect = app.add_subcommand("kselect", "Per-K information criterion / cross-validation table");
    kselect->add_option("--method", ks_method, "ic | cv | both")->check(CLI::IsMember({"ic", "cv", "both"}));
    add_common(kselect, ks_args, true);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 4;
    }

    try {
        if (*test) return cmd_test(test_args, test_kind);
        if (*simulate) {
            if (sim.design.empty() && sim.config.empty()) cepa::fail_config("simulate needs a design name or --config");
            return cmd_simulate(sim_args, sim, *simulate);
        }
        if (*kselect) return cmd_kselect(ks_args, ks_method);
    } catch (const cepa::Error& e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 3;
    }
    return 0;
}
