#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "cepa/error.hpp"

namespace cepa {

namespace detail {

inline std::vector<std::string> default_labels(std::size_t n, const char* prefix) {
    std::vector<std::string> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(prefix + std::to_string(i + 1));
    return out;
}

inline void require_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) fail_input(std::string(what) + " contains non-finite values");
}

}  // namespace detail

/// Balanced N x T panel of loss differentials (rows are units, columns are periods).
class LossDifferentialPanel {
public:
    LossDifferentialPanel(Eigen::MatrixXd dl, std::vector<std::string> units, std::vector<std::string> times)
        : dl_(std::move(dl)), units_(std::move(units)), times_(std::move(times)) {
        if (dl_.rows() < 2 || dl_.cols() < 2) fail_input("panel needs at least 2 units and 2 periods");
        if (units_.size() != static_cast<std::size_t>(dl_.rows()) ||
            times_.size() != static_cast<std::size_t>(dl_.cols())) {
            fail_input("panel labels do not match the data dimensions");
        }
        detail::require_finite(dl_, "loss differential panel");
    }

    explicit LossDifferentialPanel(Eigen::MatrixXd dl)
        : LossDifferentialPanel(dl, detail::default_labels(static_cast<std::size_t>(dl.rows()), "u"),
                                detail::default_labels(static_cast<std::size_t>(dl.cols()), "")) {}

    [[nodiscard]] int n() const noexcept { return static_cast<int>(dl_.rows()); }
    [[nodiscard]] int t() const noexcept { return static_cast<int>(dl_.cols()); }
    [[nodiscard]] double operator()(int i, int t) const { return dl_(i, t); }
    [[nodiscard]] const Eigen::MatrixXd& values() const noexcept { return dl_; }
    [[nodiscard]] const std::vector<std::string>& units() const noexcept { return units_; }
    [[nodiscard]] const std::vector<std::string>& times() const noexcept { return times_; }

private:
    Eigen::MatrixXd dl_;
    std::vector<std::string> units_;
    std::vector<std::string> times_;
};

/// dl = loss1 - loss2, elementwise.
inline LossDifferentialPanel build_loss_differentials(const Eigen::MatrixXd& loss1,
                                                      const Eigen::MatrixXd& loss2,
                                                      std::vector<std::string> units = {},
                                                      std::vector<std::string> times = {}) {
    if (loss1.rows() != loss2.rows() || loss1.cols() != loss2.cols()) {
        fail_input("loss arrays have different shapes");
    }
    detail::require_finite(loss1, "loss1");
    detail::require_finite(loss2, "loss2");
    Eigen::MatrixXd dl = loss1 - loss2;
    if (units.empty()) units = detail::default_labels(static_cast<std::size_t>(dl.rows()), "u");
    if (times.empty()) times = detail::default_labels(static_cast<std::size_t>(dl.cols()), "");
    return LossDifferentialPanel(std::move(dl), std::move(units), std::move(times));
}

/// Conditioning instrument H. Lagged-columns mode always prepends a constant.
struct TestFunctionSpec {
    enum class Kind { constant, lagged_columns };

    Kind kind = Kind::constant;
    std::vector<Eigen::MatrixXd> columns;  ///< N x T covariate panels aligned with dl
    std::vector<std::string> names;
    int tau = 1;

    static TestFunctionSpec constant() { return {}; }
    static TestFunctionSpec lagged(std::vector<Eigen::MatrixXd> cols, int tau,
                                   std::vector<std::string> names = {}) {
        TestFunctionSpec h;
        h.kind = Kind::lagged_columns;
        h.columns = std::move(cols);
        h.names = std::move(names);
        h.tau = tau;
        return h;
    }

    [[nodiscard]] int p_dim() const noexcept {
        return kind == Kind::constant ? 1 : 1 + static_cast<int>(columns.size());
    }
};

/**
 * @brief Balanced N x T x P array of moment series Z_it.
 *
 * Stored unit-major: the P-vector for (i, t) is contiguous. Per-unit time means and
 * sums of squares are cached because Panel Kmeans and the truncation set only need
 * those sufficient statistics.
 */
class LossPanel {
public:
    LossPanel(int n, int t, int p, std::vector<double> data, std::vector<std::string> units = {},
              std::vector<std::string> times = {})
        : n_(n), t_(t), p_(p), data_(std::move(data)), units_(std::move(units)), times_(std::move(times)) {
        if (n_ < 2 || t_ < 1 || p_ < 1) fail_input("moment panel needs N >= 2, T >= 1 and P >= 1");
        if (data_.size() != static_cast<std::size_t>(n_) * t_ * p_) {
            fail_input("moment panel data has the wrong size");
        }
        for (double v : data_) {
            if (!std::isfinite(v)) fail_input("moment panel contains non-finite values");
        }
        if (units_.empty()) units_ = detail::default_labels(static_cast<std::size_t>(n_), "u");
        if (times_.empty()) times_ = detail::default_labels(static_cast<std::size_t>(t_), "");
        if (units_.size() != static_cast<std::size_t>(n_) || times_.size() != static_cast<std::size_t>(t_)) {
            fail_input("moment panel labels do not match the data dimensions");
        }
        compute_unit_stats();
    }

    /// P = 1 panel from an N x T matrix.
    static LossPanel from_matrix(const Eigen::MatrixXd& m, std::vector<std::string> units = {},
                                 std::vector<std::string> times = {}) {
        std::vector<double> data(static_cast<std::size_t>(m.size()));
        for (Eigen::Index i = 0; i < m.rows(); ++i)
            for (Eigen::Index t = 0; t < m.cols(); ++t)
                data[static_cast<std::size_t>(i * m.cols() + t)] = m(i, t);
        return LossPanel(static_cast<int>(m.rows()), static_cast<int>(m.cols()), 1, std::move(data),
                         std::move(units), std::move(times));
    }

    [[nodiscard]] int n() const noexcept { return n_; }
    [[nodiscard]] int t() const noexcept { return t_; }
    [[nodiscard]] int p() const noexcept { return p_; }

    [[nodiscard]] double operator()(int i, int t, int p) const { return data_[index(i, t) + p]; }
    [[nodiscard]] std::span<const double> row(int i, int t) const {
        return {data_.data() + index(i, t), static_cast<std::size_t>(p_)};
    }
    [[nodiscard]] const std::vector<double>& data() const noexcept { return data_; }

    /// Time mean of unit i (length P).
    [[nodiscard]] Eigen::Map<const Eigen::VectorXd> unit_mean(int i) const {
        return {unit_means_.data() + static_cast<std::size_t>(i) * p_, p_};
    }
    /// Sum over t of ||Z_it||^2.
    [[nodiscard]] double unit_sum_sq(int i) const { return unit_sum_sq_[static_cast<std::size_t>(i)]; }

    [[nodiscard]] const std::vector<std::string>& units() const noexcept { return units_; }
    [[nodiscard]] const std::vector<std::string>& times() const noexcept { return times_; }

    /// Sub-panel restricted to the given period indices, in the given order.
    [[nodiscard]] LossPanel select_times(std::span<const int> periods) const {
        const int tt = static_cast<int>(periods.size());
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(n_) * tt * p_);
        std::vector<std::string> labels;
        labels.reserve(periods.size());
        for (int s : periods) {
            if (s < 0 || s >= t_) fail_internal("select_times: period out of range");
            labels.push_back(times_[static_cast<std::size_t>(s)]);
        }
        for (int i = 0; i < n_; ++i)
            for (int s : periods) {
                auto r = row(i, s);
                out.insert(out.end(), r.begin(), r.end());
            }
        return LossPanel(n_, tt, p_, std::move(out), units_, std::move(labels));
    }

    /// Contiguous block of periods [begin, end).
    [[nodiscard]] LossPanel slice_times(int begin, int end) const {
        std::vector<int> idx;
        for (int s = begin; s < end; ++s) idx.push_back(s);
        return select_times(idx);
    }

private:
    [[nodiscard]] std::size_t index(int i, int t) const {
        return (static_cast<std::size_t>(i) * t_ + t) * p_;
    }

    void compute_unit_stats() {
        unit_means_.assign(static_cast<std::size_t>(n_) * p_, 0.0);
        unit_sum_sq_.assign(static_cast<std::size_t>(n_), 0.0);
        for (int i = 0; i < n_; ++i) {
            double* mean = unit_means_.data() + static_cast<std::size_t>(i) * p_;
            for (int t = 0; t < t_; ++t) {
                auto r = row(i, t);
                for (int q = 0; q < p_; ++q) {
                    mean[q] += r[q];
                    unit_sum_sq_[static_cast<std::size_t>(i)] += r[q] * r[q];
                }
            }
            for (int q = 0; q < p_; ++q) mean[q] /= t_;
        }
    }

    int n_;
    int t_;
    int p_;
    std::vector<double> data_;
    std::vector<std::string> units_;
    std::vector<std::string> times_;
    std::vector<double> unit_means_;
    std::vector<double> unit_sum_sq_;
};

/**
 * @brief Forms Z_it = H_{i,t-tau} dl_it.
 *
 * Constant kind keeps every period. Lagged-columns kind drops the first tau periods so that
 * each retained row only uses observed lags: output period s corresponds to raw period
 * s + tau and uses covariates from raw period s.
 */
inline LossPanel apply_test_function(const LossDifferentialPanel& dl, const TestFunctionSpec& h) {
    const int n = dl.n();
    const int t = dl.t();
    if (h.kind == TestFunctionSpec::Kind::constant) {
        return LossPanel::from_matrix(dl.values(), dl.units(), dl.times());
    }
    if (h.tau < 1) fail_config("test function lag tau must be >= 1");
    if (h.tau >= t) fail_config("test function lag tau must be smaller than T");
    for (const auto& col : h.columns) {
        if (col.rows() != n || col.cols() != t) fail_input("covariate panel is not aligned with the loss panel");
        detail::require_finite(col, "covariate panel");
    }
    const int p = h.p_dim();
    const int tz = t - h.tau;
    std::vector<double> data;
    data.reserve(static_cast<std::size_t>(n) * tz * p);
    for (int i = 0; i < n; ++i) {
        for (int s = 0; s < tz; ++s) {
            const double d = dl(i, s + h.tau);
            data.push_back(d);
            for (const auto& col : h.columns) data.push_back(col(i, s) * d);
        }
    }
    std::vector<std::string> times(dl.times().begin() + h.tau, dl.times().end());
    return LossPanel(n, tz, p, std::move(data), dl.units(), std::move(times));
}

}  // namespace cepa
