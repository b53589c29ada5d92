#pragma once

#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cepa/inference.hpp"
#include "cepa/kmeans.hpp"
#include "cepa/simlab.hpp"

namespace cepa::io {

inline constexpr const char* kSchema = "cepa-report/1";

using json = nlohmann::ordered_json;

namespace detail {

template <class T>
json opt(const std::optional<T>& v) {
    return v ? json(*v) : json(nullptr);
}

/// Finite numbers as numbers, +-inf as the strings "inf" / "-inf".
inline json real(double v) {
    if (std::isinf(v)) return v > 0 ? json("inf") : json("-inf");
    if (std::isnan(v)) return json(nullptr);
    return json(v);
}

inline json ic_rows(const std::vector<IcRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) {
        json j;
        j["k"] = r.k;
        j["ok"] = r.ok;
        j["ic"] = r.ok ? json(r.ic) : json(nullptr);
        j["log_det"] = r.ok ? json(r.log_det) : json(nullptr);
        j["penalty"] = r.penalty;
        j["objective"] = r.objective;
        if (!r.message.empty()) j["message"] = r.message;
        out.push_back(std::move(j));
    }
    return out;
}

inline json cv_rows(const std::vector<CvRow>& rows) {
    json out = json::array();
    for (const auto& r : rows) out.push_back({{"k", r.k}, {"error", r.error}});
    return out;
}

}  // namespace detail

/// JSON form of a test report. Cluster numbers are printed 1-based. `config` is echoed verbatim.
inline json to_json(const TestReport& r, const json& config = json::object()) {
    json j;
    j["schema"] = kSchema;
    j["kind"] = "test";
    j["test"] = r.test;
    j["statistic"] = r.statistic;
    j["p_value"] = r.p;
    j["n"] = r.n;
    j["t"] = r.t;
    j["p_dim"] = r.p_dim;
    j["k"] = detail::opt(r.k);
    j["k_method"] = r.k_method.empty() ? json(nullptr) : json(r.k_method);
    j["b"] = detail::opt(r.b);
    j["df1"] = detail::opt(r.df1);
    j["df2"] = detail::opt(r.df2);
    j["r"] = r.r ? detail::real(*r.r) : json(nullptr);
    if (r.labels.empty()) {
        j["clusters"] = nullptr;
    } else {
        json labels = json::array();
        for (int l : r.labels) labels.push_back(l + 1);
        j["clusters"] = std::move(labels);
    }
    if (r.composite()) {
        json pairs = json::array();
        for (const auto& p : r.pairs) {
            json pj;
            pj["k"] = p.k + 1;
            pj["g"] = p.g + 1;
            pj["statistic"] = p.d;
            pj["p_value"] = p.p;
            pj["degenerate"] = p.degenerate;
            pj["dilated"] = p.dilated;
            pj["sigma_floored"] = p.sigma_floored;
            json region = json::array();
            for (const auto& iv : p.region) region.push_back(json::array({detail::real(iv.lo), detail::real(iv.hi)}));
            pj["truncation"] = std::move(region);
            pairs.push_back(std::move(pj));
        }
        j["pairs"] = std::move(pairs);
    } else {
        j["pairs"] = nullptr;
    }
    j["oepa_p_value"] = detail::opt(r.oepa_p);
    json ks = json::object();
    if (!r.ic_rows.empty()) ks["ic"] = detail::ic_rows(r.ic_rows);
    if (!r.cv_rows.empty()) ks["cv"] = detail::cv_rows(r.cv_rows);
    j["k_selection"] = ks.empty() ? json(nullptr) : ks;
    if (r.train_end) {
        j["split"] = {{"train_periods", *r.train_end}, {"gap", *r.gap}, {"test_begin", *r.test_begin + 1}};
    } else {
        j["split"] = nullptr;
    }
    json diag;
    diag["iterations"] = detail::opt(r.iterations);
    diag["hit_max_iter"] = r.hit_max_iter;
    diag["empty_cluster_repairs"] = r.repairs;
    diag["warnings"] = r.warnings;
    j["diagnostics"] = std::move(diag);
    j["config"] = config;
    return j;
}

/// Echo of a simulation configuration.
inline json to_json(const sim::SimConfig& c) {
    json j;
    j["n"] = c.n;
    j["t"] = c.t;
    j["rho"] = c.rho;
    j["alpha"] = c.alpha;
    j["phi"] = c.phi;
    j["lambda"] = c.lambda;
    j["psi"] = c.psi;
    j["psi_after_break"] = c.psi_after_break ? json(*c.psi_after_break) : json(nullptr);
    j["conditional"] = c.conditional;
    j["burn_in"] = c.burn_in;
    j["reps"] = c.reps;
    j["seed"] = c.seed;
    return j;
}

inline json to_json(const sim::TestSettings& s) {
    json j;
    j["k"] = s.k.method == KChoice::Method::fixed ? json(s.k.k) : json(to_string(s.k.method));
    j["k_max"] = s.k.k_max;
    j["varsigma"] = s.k.varsigma;
    j["folds"] = s.k.folds;
    j["r"] = detail::real(s.r);
    j["b"] = s.b ? json(*s.b) : json("auto");
    j["gamma"] = s.gamma;
    j["n_init"] = s.kmeans.n_init;
    j["max_iter"] = s.kmeans.max_iter;
    return j;
}

inline json to_json(const sim::ExperimentResult& e) {
    json j;
    j["schema"] = kSchema;
    j["kind"] = "experiment";
    j["design"] = e.design;
    j["q"] = e.q;
    json rows = json::array();
    for (const auto& r : e.rows) {
        json rj;
        rj["test"] = r.test;
        rj["reps"] = r.reps;
        rj["valid"] = r.valid;
        rj["failures"] = r.failures;
        rj["rejections"] = r.rejections;
        rj["rate"] = r.rate;
        rj["se"] = detail::opt(r.se);
        rj["failure_messages"] = r.failure_messages;
        rows.push_back(std::move(rj));
    }
    j["rows"] = std::move(rows);
    j["config"] = {{"simulation", to_json(e.config)}, {"tests", to_json(e.settings)}};
    return j;
}

/// K-selection diagnostics; either part may be absent.
inline json kselect_json(const std::optional<IcSelection>& ic, const std::optional<CvSelection>& cv,
                         const json& config = json::object()) {
    json j;
    j["schema"] = kSchema;
    j["kind"] = "kselect";
    j["ic"] = ic ? json{{"selected", ic->k}, {"rows", detail::ic_rows(ic->rows)}} : json(nullptr);
    j["cv"] = cv ? json{{"selected", cv->k}, {"rows", detail::cv_rows(cv->rows)}} : json(nullptr);
    j["config"] = config;
    return j;
}

/// Experiment table as CSV, one row per test. Missing SE is left empty.
inline std::string experiment_csv(const sim::ExperimentResult& e) {
    std::string out = "design,test,n,t,reps,valid,failures,rejections,rate,se\n";
    for (const auto& r : e.rows) {
        out += e.design + ',' + r.test + ',' + std::to_string(e.config.n) + ',' + std::to_string(e.config.t) + ',' +
               std::to_string(r.reps) + ',' + std::to_string(r.valid) + ',' + std::to_string(r.failures) + ',' +
               std::to_string(r.rejections) + ',' + json(r.rate).dump() + ',' + (r.se ? json(*r.se).dump() : "") + '\n';
    }
    return out;
}

}  // namespace cepa::io
