#include "bilevel/algorithms.hpp"
#include "bilevel/bench.hpp"
#include "bilevel/problems.hpp"

#include <doctest.h>

#include <cmath>
#include <memory>
#include <random>

using namespace bilevel;

namespace {

Vector vec(std::initializer_list<double> v) {
    Vector x(static_cast<Eigen::Index>(v.size()));
    Eigen::Index i = 0;
    for (double d : v) x[i++] = d;
    return x;
}

// Leader and follower both want xl near a target; the follower's target is xu itself.
BilevelProblem unconstrained_pair() {
    BilevelProblem p;
    p.name = "pair";
    p.n = 2;
    p.m = 2;
    p.upper_box = Box::uniform(2, -3, 3);
    p.lower_box = Box::uniform(2, -3, 3);
    p.F = [](const Vector& xu, const Vector& xl) { return (xu.array() - 1.0).square().sum() + xl.squaredNorm(); };
    p.f = [](const Vector& xu, const Vector& xl) { return (xl - xu).squaredNorm(); };
    p.known_optimum = KnownOptimum{1.0, 0.0, std::nullopt, std::nullopt};
    return p;
}

// m-TP1 with every neighbor at a random point of the follower's diagonal.
std::vector<Individual> diagonal_archive(Rng& rng, int count) {
    std::uniform_real_distribution<double> u(2.0, 8.0), t(-1.0, 1.0);
    std::vector<Individual> out;
    for (int i = 0; i < count; ++i) {
        Individual ind;
        ind.xu = vec({u(rng), u(rng)});
        const double d = t(rng);
        ind.xl = Vector(4);
        ind.xl << ind.xu, d, d;
        ind.f = 0.0;
        ind.tag = Tag::Tag1;
        out.push_back(ind);
    }
    return out;
}

}  // namespace

TEST_CASE("TP2 initialization yields verified members that are all archived") {
    const auto p = make_tp(2);
    const auto config = BleaqConfig::bleaq2_default();
    EvalCounter counter;
    Rng rng(12);
    SearchContext ctx(p, config, counter, rng);
    const auto pop = initialize_population(ctx);
    REQUIRE(pop.size() == 50);
    std::size_t tag1 = 0;
    for (const auto& ind : pop) tag1 += ind.tag == Tag::Tag1 ? 1 : 0;
    CHECK(tag1 == pop.size());
    CHECK(ctx.archive.size() >= tag1);
    for (const auto& e : ctx.archive.entries()) CHECK(e.tag == Tag::Tag1);
    CHECK(counter.ul_evals >= 50);
    CHECK(counter.ll_evals > counter.ul_evals);
}

TEST_CASE("offspring get real follower solves when verified members are scarce") {
    const auto p = make_mtp(1);
    const auto config = BleaqConfig::bleaq2_default();
    EvalCounter counter;
    Rng rng(13);
    SearchContext ctx(p, config, counter, rng);
    for (const auto& ind : diagonal_archive(rng, 40)) ctx.archive.insert(ind);

    std::vector<Individual> pop(6);
    for (auto& ind : pop) ind.tag = Tag::Tag0;
    pop[0].tag = Tag::Tag1;
    pop[1].tag = Tag::Tag1;
    const std::vector<Vector> kids{vec({5, 5}), vec({4, 6})};

    const auto before = counter.ll_evals;
    const auto scarce = bleaq2_offspring_update(ctx, kids, pop);
    CHECK(scarce.decisions == std::vector<Mapping>{Mapping::None, Mapping::None});
    for (const auto& ind : scarce.offspring) CHECK(ind.tag == Tag::Tag1);
    CHECK(counter.ll_evals > before + 2);
    CHECK_FALSE(scarce.e_mse_psi.has_value());

    pop[2].tag = Tag::Tag1;
    const auto enough = bleaq2_offspring_update(ctx, kids, pop);
    REQUIRE(enough.e_mse_psi.has_value());
    REQUIRE(enough.e_mse_phi.has_value());
    CHECK(*enough.e_mse_phi < *enough.e_mse_psi);
    for (std::size_t i = 0; i < kids.size(); ++i) {
        if (enough.decisions[i] == Mapping::None) continue;
        CHECK(enough.decisions[i] == Mapping::Phi);
        CHECK(enough.offspring[i].tag == Tag::Tag0);
    }
}

TEST_CASE("too small an archive falls back to real solves") {
    const auto p = make_tp(1);
    const auto config = BleaqConfig::bleaq2_default();
    EvalCounter counter;
    Rng rng(14);
    SearchContext ctx(p, config, counter, rng);
    CHECK_THROWS_AS(fit_surrogates(ctx, vec({5, 5}), std::nullopt), InsufficientDataError);
    std::vector<Individual> pop(2);
    pop[0].tag = pop[1].tag = Tag::Tag1;
    const auto r = bleaq2_offspring_update(ctx, {vec({5, 5})}, pop);
    CHECK(r.decisions.front() == Mapping::None);
    CHECK(r.offspring.front().tag == Tag::Tag1);
}

TEST_CASE("auxiliary problem on exact m-TP1 models picks the leader's point of the diagonal") {
    const auto p = make_mtp(1);
    Rng rng(15);
    const auto neighbors = diagonal_archive(rng, 20);
    Surrogates s;
    s.psi = fit_psi(neighbors);
    s.phi = fit_phi(neighbors);

    std::vector<Vector> z;
    std::vector<double> Fv, fv;
    std::vector<std::vector<double>> Gv(p.G.size());
    std::uniform_real_distribution<double> ux(0.0, 10.0), ut(-1.0, 1.0);
    for (int i = 0; i < 60; ++i) {
        const Vector xu = vec({ux(rng), ux(rng)});
        const Vector xl = vec({ux(rng), ux(rng), ut(rng), ut(rng)});
        z.push_back(concat(xu, xl));
        Fv.push_back(p.F(xu, xl));
        fv.push_back(p.f(xu, xl));
        for (std::size_t k = 0; k < p.G.size(); ++k) Gv[k].push_back(p.G[k](xu, xl));
    }
    s.F = fit_quadratic(z, Fv);
    s.f = fit_quadratic(z, fv);
    for (const auto& col : Gv) s.G.push_back(fit_linear(z, col));
    s.has_joint = true;
    s.upper_trust = p.upper_box;
    s.lower_trust = p.lower_box;

    const auto config = BleaqConfig::bleaq2_default();
    EvalCounter counter;
    SearchContext ctx(p, config, counter, rng);
    const Vector xl = auxiliary_solve(vec({5, 6}), s, p.lower_box);
    CHECK(counter == EvalCounter{});
    CHECK(std::abs(xl[2]) <= 1e-3);
    CHECK(std::abs(xl[3]) <= 1e-3);
    CHECK(std::abs(xl[0] - 5.0) <= 1e-3);
    CHECK(std::abs(xl[1] - 6.0) <= 1e-3);
}

TEST_CASE("local search never returns a worse incumbent") {
    for (const char* name : {"tp1", "tp3", "mtp1"}) {
        CAPTURE(name);
        const auto p = registry_lookup(name);
        const auto config = BleaqConfig::bleaq2_default();
        EvalCounter counter;
        Rng rng(16);
        SearchContext ctx(p, config, counter, rng);
        auto pop = initialize_population(ctx);
        REQUIRE_FALSE(pop.empty());
        const Individual best = pop[deb_best_index(pop, Level::Upper)];
        for (auto policy : {MappingPolicy::Adaptive, MappingPolicy::PsiOnly, MappingPolicy::PhiOnly}) {
            for (bool exact : {false, true}) {
                const auto out = improvement_local_search(ctx, best, policy, exact);
                CHECK_FALSE(deb_better(best, out.best, Level::Upper));
                if (out.improved) CHECK(out.best.tag == Tag::Tag1);
            }
        }
    }
}

TEST_CASE("runs are reproducible from the seed") {
    const auto p = make_tp(3);
    const auto config = BleaqConfig::bleaq2_default();
    auto run = [&] {
        EvalCounter counter;
        Rng rng(99);
        auto rec = bleaq2_solve(p, config, counter, rng);
        rec.seed = 99;
        return format_record(rec);
    };
    CHECK(run() == run());
}

TEST_CASE("every true function call is counted exactly once") {
    auto calls = std::make_shared<std::pair<std::uint64_t, std::uint64_t>>(0, 0);
    BilevelProblem p = make_tp(5);
    p.F = [F = p.F, calls](const Vector& xu, const Vector& xl) {
        ++calls->first;
        return F(xu, xl);
    };
    p.f = [f = p.f, calls](const Vector& xu, const Vector& xl) {
        ++calls->second;
        return f(xu, xl);
    };
    for (auto algo : {0, 1}) {
        *calls = {0, 0};
        EvalCounter counter;
        Rng rng(7);
        const auto rec = algo == 0 ? bleaq2_solve(p, BleaqConfig::bleaq2_default(), counter, rng)
                                   : nested_solve(p, BleaqConfig::nested_default(), NestedMode::PhiLocal, counter, rng);
        CHECK(rec.counter.ul_evals == calls->first);
        CHECK(rec.counter.ll_evals == calls->second);
        CHECK(rec.counter == counter);
    }
}

TEST_CASE("best leader value never gets worse across generations") {
    const auto p = unconstrained_pair();
    BleaqConfig config = BleaqConfig::bleaq2_default();
    config.stop_on_accuracy = false;
    config.max_generations = 60;
    EvalCounter counter;
    Rng rng(5);
    const auto rec = bleaq2_solve(p, config, counter, rng);
    REQUIRE(rec.trace.size() >= 2);
    for (std::size_t i = 1; i < rec.trace.size(); ++i) CHECK(rec.trace[i].best_F <= rec.trace[i - 1].best_F + 1e-12);
    CHECK(std::abs(rec.best.F - 1.0) <= 1e-2);
}

TEST_CASE("archived pairs carry true follower optima") {
    const auto p = make_tp(1);
    const auto config = BleaqConfig::bleaq2_default();
    EvalCounter counter;
    Rng rng(20);
    SearchContext ctx(p, config, counter, rng);
    initialize_population(ctx);
    REQUIRE(ctx.archive.size() > 0);
    for (const auto& e : ctx.archive.entries()) {
        const Vector expected = p.lower_box.clamp(e.xu);
        CHECK((e.xl - expected).norm() <= 1e-3);
    }
}

TEST_CASE("accuracy test uses both levels and verified pairs only") {
    const auto p = make_tp(1);
    Individual ind;
    ind.F = 225.005;
    ind.f = 99.995;
    ind.tag = Tag::Tag1;
    CHECK(within_accuracy(p, ind, 1e-2));
    ind.tag = Tag::Tag0;
    CHECK_FALSE(within_accuracy(p, ind, 1e-2));
    ind.tag = Tag::Tag1;
    ind.f = 100.5;
    CHECK_FALSE(within_accuracy(p, ind, 1e-2));
    ind.f = 100.0;
    ind.ul_violation = 1.0;
    CHECK_FALSE(within_accuracy(p, ind, 1e-2));
}

TEST_CASE("configuration presets") {
    const auto b = BleaqConfig::bleaq2_default();
    CHECK(b.local_search_every_k == 5);
    CHECK(b.effective_neighborhood(2) == 12);
    CHECK(b.max_ll_calls == 200000);
    CHECK(b.accuracy_target == 1e-2);
    CHECK(b.ea.alpha_stop == 1e-4);
    CHECK(b.lower_ea.alpha_stop == 1e-4);
    const auto n = BleaqConfig::nested_default();
    CHECK(n.ea.parents_mu == 2);
    CHECK(n.ea.offspring_lambda == 3);
    BleaqConfig bad = b;
    bad.local_search_every_k = 0;
    CHECK_THROWS_AS(bad.validate(2), UsageError);
}
