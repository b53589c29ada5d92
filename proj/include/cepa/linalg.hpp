#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "cepa/error.hpp"

namespace cepa::linalg {

/// Relative eigenvalue floor applied before inverting or taking roots of covariance blocks.
inline constexpr double kEigenFloor = 1e-12;

/**
 * @brief Symmetric eigendecomposition with an eigenvalue floor.
 *
 * Eigenvalues below kEigenFloor times the largest eigenvalue are raised to that floor,
 * and `floored()` reports whether this happened. A matrix whose largest eigenvalue is
 * not positive cannot be regularized and raises a numerical error.
 */
class FlooredEigen {
public:
    explicit FlooredEigen(const Eigen::MatrixXd& m) {
        const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
        if (es.info() != Eigen::Success) fail_numerical("symmetric eigendecomposition failed");
        values_ = es.eigenvalues();
        vectors_ = es.eigenvectors();
        const double top = values_.size() ? values_.maxCoeff() : 0.0;
        if (!(top > 0.0) || !std::isfinite(top)) {
            fail_numerical("covariance matrix is singular (no positive eigenvalue)");
        }
        const double floor = kEigenFloor * top;
        for (Eigen::Index i = 0; i < values_.size(); ++i) {
            if (values_(i) < floor) {
                values_(i) = floor;
                floored_ = true;
            }
        }
    }

    [[nodiscard]] bool floored() const noexcept { return floored_; }
    [[nodiscard]] const Eigen::VectorXd& values() const noexcept { return values_; }

    [[nodiscard]] Eigen::MatrixXd inverse() const { return apply([](double v) { return 1.0 / v; }); }
    [[nodiscard]] Eigen::MatrixXd sqrt() const { return apply([](double v) { return std::sqrt(v); }); }
    [[nodiscard]] Eigen::MatrixXd inverse_sqrt() const {
        return apply([](double v) { return 1.0 / std::sqrt(v); });
    }

    /// x' M^{-1} x using the floored spectrum.
    [[nodiscard]] double inverse_quadratic(const Eigen::VectorXd& x) const {
        const Eigen::VectorXd proj = vectors_.transpose() * x;
        return (proj.array().square() / values_.array()).sum();
    }

private:
    template <typename F>
    Eigen::MatrixXd apply(F f) const {
        const Eigen::VectorXd mapped = values_.unaryExpr(f);
        return vectors_ * mapped.asDiagonal() * vectors_.transpose();
    }

    Eigen::VectorXd values_;
    Eigen::MatrixXd vectors_;
    bool floored_ = false;
};

}  // namespace cepa::linalg
