#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <random>
#include <string>
#include <vector>

#include "cepa/error.hpp"

namespace cepa {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

namespace detail {

struct LogTails {
    double log_lower;  ///< log P(a, x)
    double log_upper;  ///< log Q(a, x)
};

/// log(exp(a) - exp(b)) for a >= b.
inline double log_diff_exp(double a, double b) {
    if (b == -kInf) return a;
    if (b >= a) return -kInf;
    return a + std::log1p(-std::exp(b - a));
}

inline double log_sum_exp(double a, double b) {
    if (a == -kInf) return b;
    if (b == -kInf) return a;
    const double hi = std::max(a, b);
    return hi + std::log1p(std::exp(-std::abs(a - b)));
}

/**
 * Regularized incomplete gamma tails in log space. The series is used below a + 1 and
 * the Lentz continued fraction above, so that whichever tail is small is computed
 * without cancellation.
 */
inline LogTails incomplete_gamma_log(double a, double x) {
    if (x <= 0.0) return {-kInf, 0.0};
    if (x == kInf) return {0.0, -kInf};
    constexpr int kMaxIter = 100000;
    constexpr double kEps = 1e-16;
    const double log_prefix = -x + a * std::log(x);
    if (x < a + 1.0) {
        double term = 1.0 / a;
        double sum = term;
        for (int n = 1; n < kMaxIter; ++n) {
            term *= x / (a + n);
            sum += term;
            if (std::abs(term) < std::abs(sum) * kEps) break;
        }
        const double log_lower = log_prefix + std::log(sum) - std::lgamma(a);
        return {log_lower, std::log1p(-std::exp(log_lower))};
    }
    constexpr double kTiny = 1e-300;
    double b = x + 1.0 - a;
    double c = 1.0 / kTiny;
    double d = 1.0 / b;
    double h = d;
    for (int i = 1; i < kMaxIter; ++i) {
        const double an = -i * (i - a);
        b += 2.0;
        d = an * d + b;
        if (std::abs(d) < kTiny) d = kTiny;
        c = b + an / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) break;
    }
    const double log_upper = log_prefix + std::log(h) - std::lgamma(a);
    return {std::log1p(-std::exp(log_upper)), log_upper};
}

/// Continued fraction for the incomplete beta (modified Lentz).
inline double beta_continued_fraction(double a, double b, double x) {
    constexpr int kMaxIter = 100000;
    constexpr double kEps = 1e-16;
    constexpr double kTiny = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kTiny) d = kTiny;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m < kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kTiny) d = kTiny;
        c = 1.0 + aa / c;
        if (std::abs(c) < kTiny) c = kTiny;
        d = 1.0 / d;
        const double delta = d * c;
        h *= delta;
        if (std::abs(delta - 1.0) < kEps) break;
    }
    return h;
}

/// Regularized incomplete beta I_x(a, b); `xc` must equal 1 - x and is passed to avoid cancellation.
inline double incomplete_beta(double a, double b, double x, double xc) {
    if (x <= 0.0) return 0.0;
    if (xc <= 0.0) return 1.0;
    const double log_front = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) +
                             b * std::log(xc);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return std::exp(log_front) * beta_continued_fraction(a, b, x) / a;
    }
    return 1.0 - std::exp(log_front) * beta_continued_fraction(b, a, xc) / b;
}

}  // namespace detail

/// P(X <= x) for X ~ chi with p degrees of freedom.
inline double chi_cdf(double x, int p) {
    if (p <= 0) fail_config("chi_cdf: degrees of freedom must be positive");
    if (std::isnan(x)) fail_config("chi_cdf: x is NaN");
    if (x <= 0.0) return 0.0;
    return std::exp(detail::incomplete_gamma_log(0.5 * p, 0.5 * x * x).log_lower);
}

/// P(X >= x) for X ~ chi with p degrees of freedom, accurate far into the upper tail.
inline double chi_survival(double x, int p) {
    if (p <= 0) fail_config("chi_survival: degrees of freedom must be positive");
    if (x <= 0.0) return 1.0;
    return std::exp(detail::incomplete_gamma_log(0.5 * p, 0.5 * x * x).log_upper);
}

/// Closed interval [lo, hi] on the half line; hi may be +inf.
struct Interval {
    double lo = 0.0;
    double hi = kInf;

    friend bool operator==(const Interval&, const Interval&) = default;
};

/**
 * @brief Finite union of disjoint closed intervals in [0, inf).
 *
 * Always held in canonical form: sorted by lower end, overlapping or touching pieces
 * merged, negative parts clipped away.
 */
class IntervalUnion {
public:
    IntervalUnion() = default;
    IntervalUnion(std::initializer_list<Interval> pieces) : pieces_(pieces) { normalize(); }
    explicit IntervalUnion(std::vector<Interval> pieces) : pieces_(std::move(pieces)) { normalize(); }

    static IntervalUnion half_line() { return IntervalUnion{{0.0, kInf}}; }

    [[nodiscard]] const std::vector<Interval>& intervals() const noexcept { return pieces_; }
    [[nodiscard]] bool empty() const noexcept { return pieces_.empty(); }
    [[nodiscard]] std::size_t size() const noexcept { return pieces_.size(); }

    [[nodiscard]] double infimum() const { return pieces_.empty() ? kInf : pieces_.front().lo; }
    [[nodiscard]] double supremum() const { return pieces_.empty() ? -kInf : pieces_.back().hi; }

    [[nodiscard]] bool contains(double x) const {
        return std::any_of(pieces_.begin(), pieces_.end(),
                           [x](const Interval& iv) { return iv.lo <= x && x <= iv.hi; });
    }

    /// Distance from x to the set (0 when contained).
    [[nodiscard]] double distance(double x) const {
        double best = kInf;
        for (const auto& iv : pieces_) {
            if (x < iv.lo) best = std::min(best, iv.lo - x);
            else if (x > iv.hi) best = std::min(best, x - iv.hi);
            else return 0.0;
        }
        return best;
    }

    [[nodiscard]] IntervalUnion intersect(const IntervalUnion& other) const {
        std::vector<Interval> out;
        std::size_t i = 0;
        std::size_t j = 0;
        while (i < pieces_.size() && j < other.pieces_.size()) {
            const Interval& a = pieces_[i];
            const Interval& b = other.pieces_[j];
            const double lo = std::max(a.lo, b.lo);
            const double hi = std::min(a.hi, b.hi);
            if (lo <= hi) out.push_back({lo, hi});
            if (a.hi < b.hi) ++i;
            else ++j;
        }
        IntervalUnion result;
        result.pieces_ = std::move(out);
        result.normalize();
        return result;
    }

    [[nodiscard]] IntervalUnion unite(const IntervalUnion& other) const {
        std::vector<Interval> all = pieces_;
        all.insert(all.end(), other.pieces_.begin(), other.pieces_.end());
        return IntervalUnion(std::move(all));
    }

    /// Removes pieces shorter than `min_length`.
    [[nodiscard]] IntervalUnion drop_shorter_than(double min_length) const {
        std::vector<Interval> kept;
        std::copy_if(pieces_.begin(), pieces_.end(), std::back_inserter(kept),
                     [min_length](const Interval& iv) { return iv.hi - iv.lo >= min_length; });
        return IntervalUnion(std::move(kept));
    }

    friend bool operator==(const IntervalUnion&, const IntervalUnion&) = default;

private:
    void normalize() {
        std::vector<Interval> kept;
        kept.reserve(pieces_.size());
        for (Interval iv : pieces_) {
            if (std::isnan(iv.lo) || std::isnan(iv.hi)) fail_internal("interval with NaN endpoint");
            iv.lo = std::max(iv.lo, 0.0);
            if (iv.hi < iv.lo) continue;
            kept.push_back(iv);
        }
        std::sort(kept.begin(), kept.end(),
                  [](const Interval& a, const Interval& b) { return a.lo < b.lo; });
        pieces_.clear();
        for (const auto& iv : kept) {
            if (!pieces_.empty() && iv.lo <= pieces_.back().hi) {
                pieces_.back().hi = std::max(pieces_.back().hi, iv.hi);
            } else {
                pieces_.push_back(iv);
            }
        }
    }

    std::vector<Interval> pieces_;
};

namespace detail {

/// log P(lo <= X <= hi) for X ~ chi_p, choosing the tail that avoids cancellation.
inline double chi_log_mass(double lo, double hi, int p) {
    if (!(hi > lo)) return -kInf;
    const double a = 0.5 * p;
    const LogTails at_lo = incomplete_gamma_log(a, 0.5 * lo * lo);
    const LogTails at_hi = hi == kInf ? LogTails{0.0, -kInf} : incomplete_gamma_log(a, 0.5 * hi * hi);
    const double log_half = std::log(0.5);
    if (at_hi.log_lower < log_half) return log_diff_exp(at_hi.log_lower, at_lo.log_lower);
    if (at_lo.log_upper < log_half) return log_diff_exp(at_lo.log_upper, at_hi.log_upper);
    const double mass = 1.0 - std::exp(at_lo.log_lower) - std::exp(at_hi.log_upper);
    return mass > 0.0 ? std::log(mass) : -kInf;
}

}  // namespace detail

/**
 * @brief Survival function of a chi_p variate truncated to `region`.
 *
 * Returns P(X >= x | X in region). Numerator and denominator are accumulated interval by
 * interval in log space, so truncation sets lying far in the upper tail are handled
 * without underflow. Throws a numerical error when the region carries no mass at all.
 */
inline double truncated_chi_survival(double x, int p, const IntervalUnion& region) {
    if (p <= 0) fail_config("truncated_chi_survival: degrees of freedom must be positive");
    if (region.empty()) fail_numerical("degenerate truncation: empty truncation set");
    double log_den = -kInf;
    double log_num = -kInf;
    for (const auto& iv : region.intervals()) {
        log_den = detail::log_sum_exp(log_den, detail::chi_log_mass(iv.lo, iv.hi, p));
        if (iv.hi >= x) {
            log_num = detail::log_sum_exp(log_num, detail::chi_log_mass(std::max(iv.lo, x), iv.hi, p));
        }
    }
    if (log_den == -kInf) fail_numerical("degenerate truncation: truncation set has zero mass");
    if (x <= region.infimum()) return 1.0;
    const double ratio = std::exp(log_num - log_den);
    return std::clamp(ratio, 0.0, 1.0);
}

/// P(F >= x) for F ~ F(d1, d2).
inline double f_survival(double x, int d1, int d2) {
    if (d1 <= 0 || d2 <= 0) fail_config("f_survival: degrees of freedom must be positive");
    if (std::isnan(x)) fail_config("f_survival: x is NaN");
    if (x <= 0.0) return 1.0;
    if (x == kInf) return 0.0;
    const double denom = d2 + d1 * x;
    return std::clamp(detail::incomplete_beta(0.5 * d2, 0.5 * d1, d2 / denom, d1 * x / denom), 0.0,
                      1.0);
}

/// SplitMix64 finalizer; used to derive independent sub-seeds from a master seed.
inline std::uint64_t mix_seed(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

/**
 * Seed for substream `index` under `base`: mix_seed(base ^ mix_seed(index + 1)).
 * Every replication and restart draws from its own substream, so results do not
 * depend on how work is scheduled across threads.
 */
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t index) {
    return mix_seed(base ^ mix_seed(index + 1));
}

/// Deterministic stream of iid N(0, 1) draws.
class NormalStream {
public:
    explicit NormalStream(std::uint64_t seed) : engine_(seed) {}

    double operator()() { return normal_(engine_); }

    std::mt19937_64& engine() noexcept { return engine_; }

private:
    std::mt19937_64 engine_;
    std::normal_distribution<double> normal_{0.0, 1.0};
};

}  // namespace cepa
