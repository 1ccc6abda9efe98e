#include "bilevel/problems.hpp"

#include <doctest.h>

#include <cmath>

using namespace bilevel;

namespace {

double upper_at(const BilevelProblem& p, const Vector& xu, const Vector& xl) {
    EvalCounter c;
    return evaluate_upper(p, xu, xl, c).F;
}

double lower_at(const BilevelProblem& p, const Vector& xu, const Vector& xl) {
    EvalCounter c;
    return evaluate_lower(p, xu, xl, c).f;
}

}  // namespace

TEST_CASE("tabulated optima of the TP suite") {
    CHECK(make_tp(1).known_optimum->F_star == 225.0);
    CHECK(make_tp(1).known_optimum->f_star == 100.0);
    CHECK(make_tp(3).known_optimum->F_star == doctest::Approx(-18.6787));
    CHECK(make_tp(3).known_optimum->f_star == doctest::Approx(-1.0156));
    CHECK(make_tp(5).known_optimum->F_star == doctest::Approx(-3.6));
    CHECK(make_tp(5).known_optimum->f_star == doctest::Approx(-2.0));
    CHECK_THROWS_AS(make_tp(0), UsageError);
    CHECK_THROWS_AS(make_tp(9), UsageError);
}

TEST_CASE("every catalog instance is well formed") {
    ProblemRegistry reg;
    for (const auto& name : reg.names()) {
        CAPTURE(name);
        std::optional<SmdDims> dims;
        if (reg.needs_dims(name)) dims = name == "smd13" ? SmdDims{1, 2, 1, 0} : SmdDims{1, 0, 1, 2};
        const auto p = reg.lookup(name, dims);
        CHECK_NOTHROW(p.validate());
        CHECK(p.known_optimum.has_value());
    }
}

TEST_CASE("TP5 optimum is attained at x=(2,0), y=(2,0)") {
    const auto p = make_tp(5);
    Vector x(2), y(2);
    x << 2, 0;
    y << 2, 0;
    CHECK(upper_at(p, x, y) == doctest::Approx(-3.6));
    CHECK(lower_at(p, x, y) == doctest::Approx(-2.0));
}

TEST_CASE("modified TP instances") {
    CHECK(make_mtp(1).known_optimum->F_star == 225.0);
    CHECK(make_mtp(4).m == 5);
    CHECK(make_mtp(1).m == 4);
    const auto p = make_mtp(3);
    CHECK(p.lower_box.lo.tail(2) == Vector::Constant(2, -1.0));
    CHECK(p.lower_box.hi.tail(2) == Vector::Constant(2, 1.0));
}

TEST_CASE("m-TP diagonal degeneracy") {
    const auto p = make_mtp(1);
    Vector x(2), y(4);
    x << 20, 5;
    double f0 = 0.0, F0 = 0.0;
    for (double t : {-1.0, -0.5, 0.0, 0.5, 1.0}) {
        y << 10, 5, t, t;
        const double f = lower_at(p, x, y);
        const double F = upper_at(p, x, y);
        if (t == -1.0) {
            f0 = f;
        }
        CHECK(f == doctest::Approx(f0));
        if (t == 0.0) F0 = F;
    }
    for (double t : {-1.0, -0.5, 0.5, 1.0}) {
        y << 10, 5, t, t;
        CHECK(upper_at(p, x, y) > F0);
    }
}

TEST_CASE("SMD13 and SMD14 at the printed solution points") {
    const auto s13 = make_smd13(SmdDims{1, 2, 1, 0});
    Vector xu(2), xl(3);
    xu << 1, 0;
    xl << 0, 0, 1;
    CHECK(std::abs(upper_at(s13, xu, xl)) <= 1e-9);
    CHECK(std::abs(lower_at(s13, xu, xl) - (1.0 + 2.0 * std::sin(1.0))) <= 1e-9);

    const auto s14 = make_smd14(SmdDims{1, 0, 1, 2});
    xl << 0, 0, 0;
    CHECK(std::abs(upper_at(s14, xu, xl)) <= 1e-9);
    CHECK(std::abs(lower_at(s14, xu, xl) - 1.0) <= 1e-9);
}

TEST_CASE("recorded optimum vectors reproduce the optimal values") {
    for (const auto& p : {make_smd13(SmdDims{1, 2, 1, 0}), make_smd14(SmdDims{1, 0, 1, 2}),
                          make_smd13(SmdDims{3, 3, 2, 0}), make_smd14(SmdDims{3, 1, 2, 2})}) {
        CAPTURE(p.name);
        const auto& k = *p.known_optimum;
        REQUIRE(k.xu_star);
        REQUIRE(k.xl_star);
        CHECK(std::abs(upper_at(p, *k.xu_star, *k.xl_star) - k.F_star) <= 1e-9);
        CHECK(std::abs(lower_at(p, *k.xu_star, *k.xl_star) - k.f_star) <= 1e-9);
    }
}

TEST_CASE("SMD14 follower objective is piecewise constant in a") {
    const auto p = make_smd14(SmdDims{1, 0, 1, 2});
    Vector xl(3);
    xl << 0.3, 0.3, 0.5;
    Vector xu(2);
    xu << 1.2, 0.5;
    const double f1 = lower_at(p, xu, xl);
    xu[0] = 1.9;
    CHECK(lower_at(p, xu, xl) == f1);
    xu[0] = 2.0;
    CHECK(lower_at(p, xu, xl) == doctest::Approx(f1 + 1.0));
}

TEST_CASE("SMD separability: the a block does not touch the c terms") {
    for (const auto& p : {make_smd13(SmdDims{2, 2, 1, 0}), make_smd14(SmdDims{2, 1, 1, 2})}) {
        CAPTURE(p.name);
        Rng rng(11);
        const Vector xl = p.lower_box.sample(rng);
        Vector xu = p.upper_box.sample(rng);
        Vector xl2 = p.lower_box.sample(rng);
        xl2.tail(1) = xl.tail(1);
        // Differences in F and f caused by changing c must not depend on a.
        const double dF = upper_at(p, xu, xl) - upper_at(p, xu, xl2);
        const double df = lower_at(p, xu, xl) - lower_at(p, xu, xl2);
        xu[0] += 0.7;
        CHECK(upper_at(p, xu, xl) - upper_at(p, xu, xl2) == doctest::Approx(dF));
        CHECK(lower_at(p, xu, xl) - lower_at(p, xu, xl2) == doctest::Approx(df));
    }
}

TEST_CASE("registry lookups") {
    const auto tp7 = registry_lookup("tp7");
    CHECK(tp7.n == 2);
    CHECK(tp7.m == 2);
    CHECK(registry_lookup("TP7").name == "tp7");
    const auto s13 = registry_lookup("smd13", SmdDims{1, 2, 1, 0});
    CHECK(s13.n + s13.m == 5);
    CHECK(s13.ll_convex == false);
    CHECK_THROWS_AS(registry_lookup("smd99"), UsageError);
    CHECK_THROWS_AS(registry_lookup("smd13"), UsageError);

    ProblemRegistry reg;
    reg.add("custom", [](const std::optional<SmdDims>&) { return make_tp(2); });
    CHECK(reg.contains("CUSTOM"));
    CHECK(reg.lookup("custom").name == "tp2");
}

TEST_CASE("SMD dimension parsing and validation") {
    CHECK(parse_smd_dims("1,2,1") == SmdDims{1, 2, 1, 0});
    CHECK(parse_smd_dims("1,0,1,2") == SmdDims{1, 0, 1, 2});
    CHECK_THROWS_AS(parse_smd_dims("1,2"), UsageError);
    CHECK_THROWS_AS(parse_smd_dims("0,2,1"), UsageError);
    CHECK_THROWS_AS(parse_smd_dims("a,b,c"), UsageError);
    CHECK_THROWS_AS(make_smd13(SmdDims{1, -1, 1, 0}), UsageError);
}
