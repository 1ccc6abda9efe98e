#include "bilevel/metamodel.hpp"
#include "bilevel/problems.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace bilevel;

namespace {

// Raw monomials in the coefficient order 1, x_i, x_i x_j (i <= j).
Vector monomials(const Vector& x) {
    const Eigen::Index n = x.size();
    Vector row(static_cast<Eigen::Index>(quadratic_basis_size(static_cast<std::size_t>(n))));
    Eigen::Index k = 0;
    row[k++] = 1.0;
    for (Eigen::Index i = 0; i < n; ++i) row[k++] = x[i];
    for (Eigen::Index i = 0; i < n; ++i)
        for (Eigen::Index j = i; j < n; ++j) row[k++] = x[i] * x[j];
    return row;
}

Vector normal_equations(const std::vector<Vector>& xs, const std::vector<double>& ys) {
    const Eigen::Index cols = monomials(xs.front()).size();
    Matrix A(static_cast<Eigen::Index>(xs.size()), cols);
    Vector b(static_cast<Eigen::Index>(xs.size()));
    for (std::size_t i = 0; i < xs.size(); ++i) {
        A.row(static_cast<Eigen::Index>(i)) = monomials(xs[i]).transpose();
        b[static_cast<Eigen::Index>(i)] = ys[i];
    }
    return (A.transpose() * A).ldlt().solve(A.transpose() * b);
}

double sse(const QuadraticModel& m, const std::vector<Vector>& xs, const std::vector<double>& ys) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) s += std::pow(m.predict(xs[i]) - ys[i], 2);
    return s;
}

std::vector<Vector> random_points(int count, int dim, Rng& rng, double lo = -2.0, double hi = 2.0) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<Vector> xs;
    for (int i = 0; i < count; ++i) {
        Vector x(dim);
        for (int j = 0; j < dim; ++j) x[j] = u(rng);
        xs.push_back(x);
    }
    return xs;
}

}  // namespace

TEST_CASE("basis size") {
    CHECK(quadratic_basis_size(1) == 3);
    CHECK(quadratic_basis_size(2) == 6);
    CHECK(quadratic_basis_size(5) == 21);
}

TEST_CASE("exact quadratic recovered and matches the normal-equations oracle") {
    Rng rng(3);
    const auto xs = random_points(12, 2, rng);
    std::vector<double> ys;
    for (const auto& x : xs) ys.push_back(3.0 + 2.0 * x[0] - x[1] + 0.5 * x[0] * x[0]);

    const QuadraticModel m = fit_quadratic(xs, ys);
    const Vector oracle = normal_equations(xs, ys);
    const Vector c = m.coefficients();
    REQUIRE(c.size() == 6);
    CHECK((c - oracle).lpNorm<Eigen::Infinity>() <= 1e-8);
    CHECK(c[0] == doctest::Approx(3.0));
    CHECK(c[1] == doctest::Approx(2.0));
    CHECK(c[2] == doctest::Approx(-1.0));
    CHECK(c[3] == doctest::Approx(0.5));
    CHECK(std::abs(c[4]) <= 1e-8);
    CHECK(std::abs(c[5]) <= 1e-8);
    CHECK(m.mse() <= 1e-20);
    CHECK_FALSE(m.rank_deficient());
}

TEST_CASE("constant data fits a constant") {
    Rng rng(4);
    const auto xs = random_points(10, 3, rng);
    const std::vector<double> ys(xs.size(), 7.0);
    const QuadraticModel m = fit_quadratic(xs, ys);
    CHECK(m.predict(Vector::Constant(3, 0.4)) == doctest::Approx(7.0));
    CHECK(m.linear().lpNorm<Eigen::Infinity>() <= 1e-9);
    CHECK(m.mse() <= 1e-20);
}

TEST_CASE("too few samples") {
    Rng rng(5);
    const auto xs = random_points(5, 2, rng);
    const std::vector<double> ys(5, 1.0);
    CHECK_THROWS_AS(fit_quadratic(xs, ys), InsufficientDataError);
    CHECK_THROWS_AS(fit_linear(std::span(xs).first(2), std::span(ys).first(2)), InsufficientDataError);
}

TEST_CASE("affine fit is exact on affine data") {
    Rng rng(6);
    const auto xs = random_points(8, 3, rng);
    std::vector<double> ys;
    for (const auto& x : xs) ys.push_back(1.5 - x[0] + 4.0 * x[2]);
    const LinearModel m = fit_linear(xs, ys);
    CHECK(m.intercept() == doctest::Approx(1.5));
    CHECK(m.slope()[0] == doctest::Approx(-1.0));
    CHECK(std::abs(m.slope()[1]) <= 1e-9);
    CHECK(m.slope()[2] == doctest::Approx(4.0));
}

TEST_CASE("noisy fit is a least-squares minimizer") {
    Rng rng(7);
    const auto xs = random_points(30, 2, rng);
    std::normal_distribution<double> noise(0.0, 0.3);
    std::vector<double> ys;
    for (const auto& x : xs) ys.push_back(std::sin(x[0]) + x[1] * x[1] + noise(rng));

    const QuadraticModel m = fit_quadratic(xs, ys);
    CHECK((m.coefficients() - normal_equations(xs, ys)).lpNorm<Eigen::Infinity>() <= 1e-8);
    const double best = sse(m, xs, ys);
    CHECK(m.mse() == doctest::Approx(best / 30.0));
    for (Eigen::Index k = 0; k < 6; ++k) {
        for (double step : {-1e-3, 1e-3}) {
            Vector c = m.coefficients();
            c[k] += step;
            CHECK(sse(QuadraticModel::from_coefficients(c), xs, ys) > best);
        }
    }
}

TEST_CASE("prediction and gradient agree with the coefficients") {
    Vector c(6);
    c << 1.0, -2.0, 0.5, 3.0, -1.0, 2.0;
    const auto m = QuadraticModel::from_coefficients(c);
    Vector x(2);
    x << 0.7, -1.3;
    const double expected = 1.0 - 2.0 * 0.7 + 0.5 * -1.3 + 3.0 * 0.49 - 1.0 * 0.7 * -1.3 + 2.0 * 1.69;
    CHECK(m.predict(x) == doctest::Approx(expected));
    const Vector g = m.gradient(x);
    CHECK(g[0] == doctest::Approx(-2.0 + 6.0 * 0.7 - 1.0 * -1.3));
    CHECK(g[1] == doctest::Approx(0.5 - 1.0 * 0.7 + 4.0 * -1.3));
    CHECK((m.coefficients() - c).norm() <= 1e-12);
}

TEST_CASE("duplicated samples are flagged and still produce a finite model") {
    std::vector<Vector> xs(6, Vector::Constant(2, 1.0));
    const std::vector<double> ys(6, 2.0);
    const QuadraticModel m = fit_quadratic(xs, ys);
    CHECK(m.rank_deficient());
    CHECK(std::isfinite(m.predict(Vector::Constant(2, 1.0))));
    CHECK(m.predict(Vector::Constant(2, 1.0)) == doctest::Approx(2.0));
}

TEST_CASE("reaction and value surrogates on a single-valued follower") {
    // TP1's follower moves to the leader's point inside [0,10]^2, so xl = xu and f = 0.
    Rng rng(8);
    const auto xs = random_points(12, 2, rng, 1.0, 9.0);
    std::vector<Individual> sample;
    for (const auto& x : xs) {
        Individual ind;
        ind.xu = x;
        ind.xl = x;
        ind.f = 0.0;
        ind.tag = Tag::Tag1;
        sample.push_back(ind);
    }
    const PsiModel psi = fit_psi(sample);
    const PhiModel phi = fit_phi(sample);
    CHECK(psi.mse <= 1e-12);
    CHECK(phi.mse <= 1e-12);
    Vector probe(2);
    probe << 4.5, 2.5;
    CHECK((psi.predict(probe) - probe).norm() <= 1e-8);
    CHECK(std::abs(phi.predict(probe)) <= 1e-8);
}

TEST_CASE("set-valued reactions hurt the reaction surrogate but not the value surrogate") {
    Rng rng(9);
    std::uniform_real_distribution<double> diag(-1.0, 1.0);
    const auto xs = random_points(15, 2, rng, 1.0, 9.0);
    std::vector<Individual> sample;
    for (const auto& x : xs) {
        const double t = diag(rng);
        Individual ind;
        ind.xu = x;
        ind.xl = Vector(4);
        ind.xl << x, t, t;
        ind.f = 0.0;
        ind.tag = Tag::Tag1;
        sample.push_back(ind);
    }
    const PsiModel psi = fit_psi(sample);
    const PhiModel phi = fit_phi(sample);
    CHECK(psi.mse > 1e-3);
    CHECK(phi.mse <= 1e-12);
    CHECK(psi.mse > phi.mse);
}
