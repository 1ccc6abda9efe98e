#include "bilevel/metamodel.hpp"

#include <cmath>

namespace bilevel {

Standardizer Standardizer::from_samples(std::span<const Vector> xs) {
    const Eigen::Index d = xs.front().size();
    Standardizer s;
    s.shift = Vector::Zero(d);
    for (const auto& x : xs) s.shift += x;
    s.shift /= static_cast<double>(xs.size());
    s.scale = Vector::Zero(d);
    for (const auto& x : xs) s.scale += (x - s.shift).cwiseAbs2();
    s.scale = (s.scale / static_cast<double>(xs.size())).cwiseSqrt();
    for (Eigen::Index i = 0; i < d; ++i)
        if (!(s.scale[i] > 1e-12 * (1.0 + std::abs(s.shift[i])))) s.scale[i] = 1.0;
    return s;
}

namespace {

void check_samples(std::span<const Vector> inputs, std::span<const double> targets,
                   std::size_t needed, const char* what) {
    if (inputs.size() != targets.size()) throw UsageError(std::string(what) + ": size mismatch");
    if (inputs.empty() || inputs.size() < needed)
        throw InsufficientDataError(std::string(what) + ": " + std::to_string(inputs.size()) +
                                    " samples, need " + std::to_string(needed));
    const Eigen::Index d = inputs.front().size();
    for (const auto& x : inputs)
        if (x.size() != d) throw UsageError(std::string(what) + ": inputs differ in dimension");
}

// Row of the standardized design: 1, z_i, z_i z_j (i <= j).
void quadratic_row(const Vector& z, Eigen::Ref<Vector> row) {
    const Eigen::Index d = z.size();
    row[0] = 1.0;
    row.segment(1, d) = z;
    Eigen::Index k = 1 + d;
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = i; j < d; ++j) row[k++] = z[i] * z[j];
}

}  // namespace

QuadraticModel fit_quadratic(std::span<const Vector> inputs, std::span<const double> targets) {
    const std::size_t d = inputs.empty() ? 0 : static_cast<std::size_t>(inputs.front().size());
    const std::size_t basis = quadratic_basis_size(d);
    check_samples(inputs, targets, basis, "fit_quadratic");
    const auto std_ = Standardizer::from_samples(inputs);

    const auto rows = static_cast<Eigen::Index>(inputs.size());
    Matrix A(rows, static_cast<Eigen::Index>(basis));
    Vector t(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        Vector row(static_cast<Eigen::Index>(basis));
        quadratic_row(std_.apply(inputs[static_cast<std::size_t>(r)]), row);
        A.row(r) = row.transpose();
        t[r] = targets[static_cast<std::size_t>(r)];
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
    const Vector c = cod.solve(t);

    // Map standardized coefficients back to raw space: z = D (x - mu).
    const auto n = static_cast<Eigen::Index>(d);
    const Vector dinv = std_.scale.cwiseInverse();
    Matrix Az = Matrix::Zero(n, n);
    Eigen::Index k = 1 + n;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) {
            if (i == j) Az(i, i) = c[k];
            else Az(i, j) = Az(j, i) = 0.5 * c[k];
            ++k;
        }
    const Vector bz = c.segment(1, n);
    const Matrix M = dinv.asDiagonal() * Az * dinv.asDiagonal();
    const Vector& mu = std_.shift;

    QuadraticModel model;
    model.quadratic_ = M;
    model.linear_ = dinv.cwiseProduct(bz) - 2.0 * M * mu;
    model.intercept_ = c[0] - bz.dot(dinv.cwiseProduct(mu)) + mu.dot(M * mu);
    model.mse_ = (A * c - t).squaredNorm() / static_cast<double>(rows);
    model.rank_deficient_ = cod.rank() < static_cast<Eigen::Index>(basis);
    return model;
}

double QuadraticModel::predict(const Vector& x) const {
    return intercept_ + linear_.dot(x) + x.dot(quadratic_ * x);
}

Vector QuadraticModel::gradient(const Vector& x) const {
    return linear_ + 2.0 * quadratic_ * x;
}

Vector QuadraticModel::coefficients() const {
    const Eigen::Index n = linear_.size();
    Vector out(static_cast<Eigen::Index>(quadratic_basis_size(static_cast<std::size_t>(n))));
    out[0] = intercept_;
    out.segment(1, n) = linear_;
    Eigen::Index k = 1 + n;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) out[k++] = i == j ? quadratic_(i, i) : 2.0 * quadratic_(i, j);
    return out;
}

QuadraticModel QuadraticModel::from_coefficients(const Vector& coeffs, double mse) {
    // Solve (n+1)(n+2)/2 = size for n.
    Eigen::Index n = 0;
    while (static_cast<Eigen::Index>(quadratic_basis_size(static_cast<std::size_t>(n))) < coeffs.size()) ++n;
    if (static_cast<Eigen::Index>(quadratic_basis_size(static_cast<std::size_t>(n))) != coeffs.size())
        throw UsageError("coefficient count is not a quadratic basis size");
    QuadraticModel m;
    m.intercept_ = coeffs[0];
    m.linear_ = coeffs.segment(1, n);
    m.quadratic_ = Matrix::Zero(n, n);
    Eigen::Index k = 1 + n;
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) {
            if (i == j) m.quadratic_(i, i) = coeffs[k];
            else m.quadratic_(i, j) = m.quadratic_(j, i) = 0.5 * coeffs[k];
            ++k;
        }
    m.mse_ = mse;
    return m;
}

LinearModel fit_linear(std::span<const Vector> inputs, std::span<const double> targets) {
    const std::size_t d = inputs.empty() ? 0 : static_cast<std::size_t>(inputs.front().size());
    check_samples(inputs, targets, d + 1, "fit_linear");
    const auto std_ = Standardizer::from_samples(inputs);
    const auto rows = static_cast<Eigen::Index>(inputs.size());
    const auto n = static_cast<Eigen::Index>(d);
    Matrix A(rows, n + 1);
    Vector t(rows);
    for (Eigen::Index r = 0; r < rows; ++r) {
        A(r, 0) = 1.0;
        A.block(r, 1, 1, n) = std_.apply(inputs[static_cast<std::size_t>(r)]).transpose();
        t[r] = targets[static_cast<std::size_t>(r)];
    }
    Eigen::CompleteOrthogonalDecomposition<Matrix> cod(A);
    const Vector c = cod.solve(t);
    const Vector dinv = std_.scale.cwiseInverse();

    LinearModel model;
    model.slope_ = dinv.cwiseProduct(c.tail(n));
    model.intercept_ = c[0] - model.slope_.dot(std_.shift);
    model.mse_ = (A * c - t).squaredNorm() / static_cast<double>(rows);
    model.rank_deficient_ = cod.rank() < n + 1;
    return model;
}

Vector PsiModel::predict(const Vector& xu) const {
    Vector out(static_cast<Eigen::Index>(per_variable.size()));
    for (std::size_t i = 0; i < per_variable.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = per_variable[i].predict(xu);
    return out;
}

PsiModel fit_psi(std::span<const Individual> neighbors) {
    if (neighbors.empty()) throw InsufficientDataError("fit_psi: no samples");
    std::vector<Vector> xs;
    xs.reserve(neighbors.size());
    for (const auto& ind : neighbors) xs.push_back(ind.xu);
    const Eigen::Index m = neighbors.front().xl.size();
    PsiModel psi;
    std::vector<double> t(neighbors.size());
    for (Eigen::Index i = 0; i < m; ++i) {
        for (std::size_t k = 0; k < neighbors.size(); ++k) t[k] = neighbors[k].xl[i];
        psi.per_variable.push_back(fit_quadratic(xs, t));
        psi.mse += psi.per_variable.back().mse();
    }
    psi.mse /= static_cast<double>(m);
    return psi;
}

PhiModel fit_phi(std::span<const Individual> neighbors) {
    if (neighbors.empty()) throw InsufficientDataError("fit_phi: no samples");
    std::vector<Vector> xs;
    std::vector<double> t;
    for (const auto& ind : neighbors) {
        xs.push_back(ind.xu);
        t.push_back(ind.f);
    }
    PhiModel phi;
    phi.model = fit_quadratic(xs, t);
    phi.mse = phi.model.mse();
    return phi;
}

}  // namespace bilevel
