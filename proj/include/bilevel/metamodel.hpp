#pragma once

#include "bilevel/core.hpp"

#include <span>
#include <stdexcept>
#include <vector>

namespace bilevel {

/// Fewer samples than basis functions; callers fall back to a real lower-level solve.
class InsufficientDataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Number of coefficients of a full quadratic in `dim` variables: (dim+1)(dim+2)/2.
constexpr std::size_t quadratic_basis_size(std::size_t dim) { return (dim + 1) * (dim + 2) / 2; }

/// Per-coordinate affine standardization z = (x - shift) / scale.
struct Standardizer {
    Vector shift;
    Vector scale;

    static Standardizer from_samples(std::span<const Vector> xs);
    Vector apply(const Vector& x) const { return (x - shift).cwiseQuotient(scale); }
};

/// h(x) = intercept + linear . x + x' quadratic x, with `quadratic` symmetric.
class QuadraticModel {
public:
    QuadraticModel() = default;

    int dim() const { return static_cast<int>(linear_.size()); }
    double predict(const Vector& x) const;
    Vector gradient(const Vector& x) const;

    double intercept() const { return intercept_; }
    const Vector& linear() const { return linear_; }
    const Matrix& quadratic() const { return quadratic_; }
    double mse() const { return mse_; }
    bool rank_deficient() const { return rank_deficient_; }

    /// Coefficients in the order 1, x_1..x_n, then x_i x_j for i <= j (row-major upper triangle).
    Vector coefficients() const;

    /// Builds a model from raw-space coefficients in the order of `coefficients()`.
    static QuadraticModel from_coefficients(const Vector& coeffs, double mse = 0.0);

    friend QuadraticModel fit_quadratic(std::span<const Vector>, std::span<const double>);

private:
    double intercept_ = 0.0;
    Vector linear_;
    Matrix quadratic_;
    double mse_ = 0.0;
    bool rank_deficient_ = false;
};

class LinearModel {
public:
    int dim() const { return static_cast<int>(slope_.size()); }
    double predict(const Vector& x) const { return intercept_ + slope_.dot(x); }
    double intercept() const { return intercept_; }
    const Vector& slope() const { return slope_; }
    double mse() const { return mse_; }
    bool rank_deficient() const { return rank_deficient_; }

    friend LinearModel fit_linear(std::span<const Vector>, std::span<const double>);

private:
    double intercept_ = 0.0;
    Vector slope_;
    double mse_ = 0.0;
    bool rank_deficient_ = false;
};

/// Least-squares quadratic fit on standardized inputs via a rank-revealing orthogonal
/// factorization; rank-deficient designs get the minimum-norm solution and a flag.
/// Throws InsufficientDataError when samples < quadratic_basis_size(dim).
QuadraticModel fit_quadratic(std::span<const Vector> inputs, std::span<const double> targets);

/// Affine least-squares fit; needs at least dim + 1 samples.
LinearModel fit_linear(std::span<const Vector> inputs, std::span<const double> targets);

/// One quadratic per lower-level coordinate, xu -> xl_i.
struct PsiModel {
    std::vector<QuadraticModel> per_variable;
    double mse = 0.0;

    Vector predict(const Vector& xu) const;
};

/// xu -> optimal lower-level objective value.
struct PhiModel {
    QuadraticModel model;
    double mse = 0.0;

    double predict(const Vector& xu) const { return model.predict(xu); }
};

PsiModel fit_psi(std::span<const Individual> neighbors);
PhiModel fit_phi(std::span<const Individual> neighbors);

}  // namespace bilevel
