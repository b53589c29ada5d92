#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "cepa/error.hpp"
#include "cepa/panel.hpp"

namespace cepa::csv {

namespace detail {

inline std::string trim(std::string s) {
    const auto not_space = [](unsigned char c) { return !std::isspace(c); };
    s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
    s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
    return s;
}

/// Splits one CSV record; double quotes group fields and "" escapes a quote.
inline std::vector<std::string> split_record(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t k = 0; k < line.size(); ++k) {
        const char c = line[k];
        if (quoted) {
            if (c == '"' && k + 1 < line.size() && line[k + 1] == '"') {
                cur += '"';
                ++k;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(trim(cur));
    return out;
}

inline std::optional<double> parse_double(const std::string& s) {
    double v = 0.0;
    const char* first = s.data();
    const char* last = s.data() + s.size();
    if (first != last && *first == '+') ++first;
    const auto res = std::from_chars(first, last, v);
    if (res.ec != std::errc() || res.ptr != last) return std::nullopt;
    return v;
}

}  // namespace detail

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

/**
 * @brief Parsed long-format panel file.
 *
 * Either `loss1,loss2` (plus optional covariates) or pre-built moment columns
 * `z1..zP` are present. An optional `cluster` column carries predetermined labels.
 */
struct PanelFile {
    enum class Mode { losses, moments };

    Mode mode = Mode::losses;
    std::vector<std::string> units;  ///< first-appearance order
    std::vector<std::string> times;  ///< sorted
    Eigen::MatrixXd loss1;
    Eigen::MatrixXd loss2;
    std::vector<std::string> covariate_names;
    std::vector<Eigen::MatrixXd> covariates;
    std::vector<Eigen::MatrixXd> moments;  ///< z1..zP
    std::optional<std::vector<std::string>> cluster_labels;  ///< one per unit
};

inline PanelFile read_panel(std::istream& in) {
    std::string line;
    if (!std::getline(in, line)) fail_input("CSV input is empty");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // BOM
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = detail::split_record(line);
    std::unordered_map<std::string, std::size_t> col;
    for (std::size_t k = 0; k < header.size(); ++k) {
        if (!col.emplace(header[k], k).second) fail_input("duplicate CSV column '" + header[k] + "'");
    }
    if (!col.count("unit") || !col.count("time")) fail_input("CSV header must contain 'unit' and 'time'");

    PanelFile out;
    std::vector<std::size_t> value_cols;
    std::vector<std::size_t> covariate_cols;
    if (col.count("loss1") || col.count("loss2")) {
        if (!col.count("loss1") || !col.count("loss2")) fail_input("CSV needs both 'loss1' and 'loss2'");
        out.mode = PanelFile::Mode::losses;
        value_cols = {col["loss1"], col["loss2"]};
        for (std::size_t k = 0; k < header.size(); ++k) {
            const auto& name = header[k];
            if (name == "unit" || name == "time" || name == "loss1" || name == "loss2" || name == "cluster") continue;
            covariate_cols.push_back(k);
            out.covariate_names.push_back(name);
        }
    } else {
        out.mode = PanelFile::Mode::moments;
        for (int q = 1;; ++q) {
            auto it = col.find("z" + std::to_string(q));
            if (it == col.end()) break;
            value_cols.push_back(it->second);
        }
        if (value_cols.empty()) fail_input("CSV needs 'loss1,loss2' or moment columns 'z1..zP'");
    }
    const std::optional<std::size_t> cluster_col =
        col.count("cluster") ? std::optional<std::size_t>(col["cluster"]) : std::nullopt;

    struct Record {
        std::string unit;
        std::string time;
        std::vector<double> values;
        std::string cluster;
    };
    std::vector<Record> records;
    std::vector<std::string> unit_order;
    std::unordered_map<std::string, int> unit_index;
    std::vector<std::string> time_labels;
    std::unordered_map<std::string, int> time_seen;
    std::size_t line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (detail::trim(line).empty()) continue;
        const auto fields = detail::split_record(line);
        if (fields.size() != header.size()) {
            fail_input("line " + std::to_string(line_no) + ": expected " + std::to_string(header.size()) +
                       " fields, found " + std::to_string(fields.size()));
        }
        Record r;
        r.unit = fields[col["unit"]];
        r.time = fields[col["time"]];
        auto read_value = [&](std::size_t k) {
            auto v = detail::parse_double(fields[k]);
            if (!v || !std::isfinite(*v)) {
                fail_input("line " + std::to_string(line_no) + ": column '" + header[k] +
                           "' is not a finite number: '" + fields[k] + "'");
            }
            return *v;
        };
        for (auto k : value_cols) r.values.push_back(read_value(k));
        for (auto k : covariate_cols) r.values.push_back(read_value(k));
        if (cluster_col) r.cluster = fields[*cluster_col];
        if (unit_index.emplace(r.unit, static_cast<int>(unit_order.size())).second) unit_order.push_back(r.unit);
        if (time_seen.emplace(r.time, 0).second) time_labels.push_back(r.time);
        records.push_back(std::move(r));
    }
    if (records.empty()) fail_input("CSV has a header but no data rows");

    // Numeric time labels sort numerically, anything else lexicographically.
    const bool numeric_times = std::all_of(time_labels.begin(), time_labels.end(),
                                           [](const std::string& s) { return detail::parse_double(s).has_value(); });
    if (numeric_times) {
        std::sort(time_labels.begin(), time_labels.end(), [](const std::string& a, const std::string& b) {
            return *detail::parse_double(a) < *detail::parse_double(b);
        });
        for (std::size_t k = 1; k < time_labels.size(); ++k) {
            if (*detail::parse_double(time_labels[k]) == *detail::parse_double(time_labels[k - 1])) {
                fail_input("time labels '" + time_labels[k - 1] + "' and '" + time_labels[k] + "' tie");
            }
        }
    } else {
        std::sort(time_labels.begin(), time_labels.end());
    }
    std::unordered_map<std::string, int> time_index;
    for (std::size_t k = 0; k < time_labels.size(); ++k) time_index[time_labels[k]] = static_cast<int>(k);

    const auto n = static_cast<Eigen::Index>(unit_order.size());
    const auto t = static_cast<Eigen::Index>(time_labels.size());
    const std::size_t nvals = value_cols.size() + covariate_cols.size();
    std::vector<Eigen::MatrixXd> grids(nvals, Eigen::MatrixXd::Zero(n, t));
    Eigen::MatrixXi filled = Eigen::MatrixXi::Zero(n, t);
    std::vector<std::string> clusters(static_cast<std::size_t>(n));
    for (const auto& r : records) {
        const int i = unit_index[r.unit];
        const int s = time_index[r.time];
        if (filled(i, s)) fail_input("duplicate row for unit '" + r.unit + "' at time '" + r.time + "'");
        filled(i, s) = 1;
        for (std::size_t k = 0; k < nvals; ++k) grids[k](i, s) = r.values[k];
        if (cluster_col) {
            auto& c = clusters[static_cast<std::size_t>(i)];
            if (c.empty()) c = r.cluster;
            else if (c != r.cluster) fail_input("unit '" + r.unit + "' has more than one cluster label");
        }
    }
    if (filled.sum() != n * t) {
        fail_input("panel is unbalanced: " + std::to_string(n * t - filled.sum()) + " (unit, time) cells missing");
    }

    out.units = std::move(unit_order);
    out.times = std::move(time_labels);
    if (out.mode == PanelFile::Mode::losses) {
        out.loss1 = grids[0];
        out.loss2 = grids[1];
        out.covariates.assign(grids.begin() + 2, grids.end());
    } else {
        out.moments = std::move(grids);
    }
    if (cluster_col) out.cluster_labels = std::move(clusters);
    return out;
}

inline PanelFile read_panel_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) fail_input("cannot open input file '" + path + "'");
    return read_panel(in);
}

/**
 * Builds the moment panel. `columns` selects covariates by name for a lagged test
 * function; an empty list means the constant test function.
 */
inline LossPanel to_loss_panel(const PanelFile& f, const std::vector<std::string>& columns, int tau) {
    if (f.mode == PanelFile::Mode::moments) {
        if (!columns.empty()) fail_config("conditioning columns cannot be used with pre-built z columns");
        const auto n = static_cast<int>(f.units.size());
        const auto t = static_cast<int>(f.times.size());
        const auto p = static_cast<int>(f.moments.size());
        std::vector<double> data;
        data.reserve(static_cast<std::size_t>(n) * t * p);
        for (int i = 0; i < n; ++i)
            for (int s = 0; s < t; ++s)
                for (int q = 0; q < p; ++q) data.push_back(f.moments[static_cast<std::size_t>(q)](i, s));
        return LossPanel(n, t, p, std::move(data), f.units, f.times);
    }
    auto dl = build_loss_differentials(f.loss1, f.loss2, f.units, f.times);
    if (columns.empty()) return apply_test_function(dl, TestFunctionSpec::constant());
    std::vector<Eigen::MatrixXd> cols;
    for (const auto& name : columns) {
        auto it = std::find(f.covariate_names.begin(), f.covariate_names.end(), name);
        if (it == f.covariate_names.end()) fail_config("conditioning column '" + name + "' not found in input");
        cols.push_back(f.covariates[static_cast<std::size_t>(it - f.covariate_names.begin())]);
    }
    return apply_test_function(dl, TestFunctionSpec::lagged(std::move(cols), tau, columns));
}

/// Writes a loss-differential panel in the `unit,time,loss1,loss2[,x...]` contract with loss2 = 0.
inline void write_loss_panel(std::ostream& out, const LossDifferentialPanel& dl,
                             const std::vector<std::pair<std::string, Eigen::MatrixXd>>& covariates = {},
                             const std::vector<int>* clusters = nullptr) {
    out << "unit,time,loss1,loss2";
    for (const auto& c : covariates) out << ',' << c.first;
    if (clusters) out << ",cluster";
    out << '\n';
    for (int i = 0; i < dl.n(); ++i) {
        for (int s = 0; s < dl.t(); ++s) {
            out << dl.units()[static_cast<std::size_t>(i)] << ',' << dl.times()[static_cast<std::size_t>(s)] << ','
                << format_double(dl(i, s)) << ",0";
            for (const auto& c : covariates) out << ',' << format_double(c.second(i, s));
            if (clusters) out << ',' << (*clusters)[static_cast<std::size_t>(i)] + 1;
            out << '\n';
        }
    }
}

}  // namespace cepa::csv
