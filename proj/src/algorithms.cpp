#include "bilevel/algorithms.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bilevel {

namespace {

constexpr double kFeasibleTol = 1e-5;

Box intersect(const Box& a, const Box& b) {
    Vector lo = a.lo.cwiseMax(b.lo);
    Vector hi = a.hi.cwiseMin(b.hi);
    for (Eigen::Index i = 0; i < lo.size(); ++i)
        if (lo[i] > hi[i]) lo[i] = hi[i] = std::clamp(0.5 * (a.lo[i] + a.hi[i]), b.lo[i], b.hi[i]);
    return Box(lo, hi);
}

Box joint_box(const Box& a, const Box& b) { return Box(concat(a.lo, b.lo), concat(a.hi, b.hi)); }

/// Bounding box of `points`, widened by `expansion` of its span on each side, inside `limits`.
Box trust_box(const std::vector<Vector>& points, const Box& limits, double expansion) {
    Vector lo = points.front();
    Vector hi = points.front();
    for (const auto& p : points) {
        lo = lo.cwiseMin(p);
        hi = hi.cwiseMax(p);
    }
    const Vector floor_span = 1e-2 * limits.width();
    const Vector pad = (expansion * (hi - lo)).cwiseMax(floor_span);
    return intersect(Box(lo - pad, hi + pad), limits);
}

Vector split_head(const Vector& z, int n) { return z.head(n); }
Vector split_tail(const Vector& z, int n) { return z.tail(z.size() - n); }

std::optional<std::size_t> best_verified_index(const std::vector<Individual>& pop) {
    std::optional<std::size_t> best;
    for (std::size_t i = 0; i < pop.size(); ++i) {
        if (pop[i].tag != Tag::Tag1) continue;
        if (!best || deb_better(pop[i], pop[*best], Level::Upper)) best = i;
    }
    return best;
}

std::vector<Vector> upper_vectors(const std::vector<Individual>& pop) {
    std::vector<Vector> xs;
    xs.reserve(pop.size());
    for (const auto& ind : pop) xs.push_back(ind.xu);
    return xs;
}

/// Tournament on 2*mu random members, padded with random members up to three PCX parents;
/// returns lambda mutated children in upper space.
std::vector<Vector> reproduce(const std::vector<Individual>& pop, const EaParams& ea, const Box& box,
                              Rng& rng) {
    const auto picks = sample_distinct(pop.size(), 2 * static_cast<std::size_t>(ea.parents_mu), rng);
    std::vector<Individual> pool;
    for (auto i : picks) pool.push_back(pop[i]);
    std::vector<const Individual*> parents;
    for (auto w : tournament_select(pool, Level::Upper)) parents.push_back(&pop[picks[w]]);
    std::uniform_int_distribution<std::size_t> any(0, pop.size() - 1);
    while (parents.size() < 3) parents.push_back(&pop[any(rng)]);

    std::size_t index = 0;
    for (std::size_t i = 1; i < 3; ++i)
        if (deb_better(*parents[i], *parents[index], Level::Upper)) index = i;
    const std::vector<Vector> trio{parents[0]->xu, parents[1]->xu, parents[2]->xu};

    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<Vector> children;
    for (int k = 0; k < ea.offspring_lambda; ++k) {
        Vector child;
        if (unit(rng) < ea.p_crossover) {
            child = pcx_crossover(trio, index, box, ea.pcx_sigma, rng);
        } else {
            std::uniform_int_distribution<std::size_t> one(0, parents.size() - 1);
            child = parents[one(rng)]->xu;
        }
        children.push_back(polynomial_mutation(child, box, ea.p_mutation, ea.mutation_index, rng));
    }
    return children;
}

}  // namespace

std::string_view to_string(NestedMode mode) {
    switch (mode) {
        case NestedMode::Plain: return "nested";
        case NestedMode::PsiLocal: return "psi-appx";
        case NestedMode::PhiLocal: return "phi-appx";
    }
    return "?";
}

std::string_view to_string(TerminatedBy reason) {
    switch (reason) {
        case TerminatedBy::Accuracy: return "accuracy";
        case TerminatedBy::Variance: return "variance";
        case TerminatedBy::Budget: return "budget";
        case TerminatedBy::Generations: return "generations";
        case TerminatedBy::Aborted: return "aborted";
    }
    return "?";
}

std::string_view to_string(Mapping mapping) {
    switch (mapping) {
        case Mapping::None: return "none";
        case Mapping::Psi: return "psi";
        case Mapping::Phi: return "phi";
    }
    return "?";
}

BleaqConfig BleaqConfig::nested_default() {
    BleaqConfig c;
    c.ea = EaParams::nested_preset();
    return c;
}

BleaqConfig BleaqConfig::bleaq2_default() { return BleaqConfig{}; }

int BleaqConfig::effective_neighborhood(int n) const {
    if (neighborhood_size > 0) return neighborhood_size;
    return 2 * static_cast<int>(quadratic_basis_size(static_cast<std::size_t>(n)));
}

void BleaqConfig::validate(int n) const {
    ea.validate();
    lower_ea.validate();
    if (local_search_every_k < 1) throw UsageError("local_search_every_k must be at least 1");
    if (effective_neighborhood(n) < static_cast<int>(quadratic_basis_size(static_cast<std::size_t>(n))))
        throw UsageError("neighborhood_size must cover the quadratic basis");
    if (!(accuracy_target > 0)) throw UsageError("accuracy_target must be positive");
    if (init_retries < 0 || repair_attempts < 1) throw UsageError("initialization budgets are invalid");
    if (max_ll_calls == 0 || max_generations < 1) throw UsageError("budget must be positive");
    if (trust_expansion < 0) throw UsageError("trust_expansion must be non-negative");
}

void SampleLog::push(std::deque<Sample>& to, Sample s) {
    to.push_back(std::move(s));
    if (capacity_ > 0 && to.size() > capacity_) to.pop_front();
}

void SampleLog::add_upper(const Vector& xu, const Vector& xl, const UpperEval& e) {
    push(upper_, Sample{xu, xl, e.F, e.G});
}

void SampleLog::add_lower(const Vector& xu, const Vector& xl, const LowerEval& e) {
    push(lower_, Sample{xu, xl, e.f, e.g});
}

std::vector<SampleLog::Sample> SampleLog::nearest(const std::deque<Sample>& from, const Vector& xu,
                                                  const Vector& xl, const Vector& scale,
                                                  std::size_t count) {
    const Vector q = concat(xu, xl).cwiseQuotient(scale);
    std::vector<std::pair<double, std::size_t>> d;
    d.reserve(from.size());
    for (std::size_t i = 0; i < from.size(); ++i)
        d.emplace_back((concat(from[i].xu, from[i].xl).cwiseQuotient(scale) - q).squaredNorm(), i);
    count = std::min(count, d.size());
    std::stable_sort(d.begin(), d.end(),
                     [](const auto& a, const auto& b) { return a.first < b.first; });
    std::vector<Sample> out;
    for (std::size_t i = 0; i < count; ++i) out.push_back(from[d[i].second]);
    return out;
}

namespace {

// Sharpens an evolutionary lower-level answer: a local descent on f, then, among points no worse
// in f, the one the leader prefers.
void polish_lower_solution(SearchContext& ctx, const Vector& xu, LowerSolution& sol) {
    const BilevelProblem& p = ctx.problem;
    Nlp descent;
    descent.box = p.lower_box;
    descent.evaluate = [&](const Vector& xl) {
        const LowerEval e = evaluate_lower(p, xu, xl, ctx.counter);
        return NlpEval{e.f, e.g};
    };
    const LocalSolveReport down = local_solve(descent, sol.xl, ctx.config.lower_solver);
    if (down.violation <= kFeasibleTol && down.f < sol.eval.f) {
        sol.xl = down.x;
        sol.eval = LowerEval{down.f, down.constraints, down.violation};
    }

    const double level = sol.eval.f + 1e-6 * (1.0 + std::abs(sol.eval.f));
    Nlp favor;
    favor.box = p.lower_box;
    favor.evaluate = [&](const Vector& xl) {
        const UpperEval ue = evaluate_upper(p, xu, xl, ctx.counter);
        const LowerEval le = evaluate_lower(p, xu, xl, ctx.counter);
        Vector c(1 + le.g.size() + ue.G.size());
        c << le.f - level, le.g, ue.G;
        return NlpEval{ue.F, c};
    };
    const double F_before = evaluate_upper(p, xu, sol.xl, ctx.counter).F;
    const LocalSolveReport up = local_solve(favor, sol.xl, ctx.config.lower_solver);
    if (up.violation > kFeasibleTol || up.f >= F_before) return;
    const LowerEval e = evaluate_lower(p, xu, up.x, ctx.counter);
    if (e.violation > kFeasibleTol || e.f > level) return;
    sol.xl = up.x;
    sol.eval = e;
}

}  // namespace

LowerSolution solve_lower_level(SearchContext& ctx, const Vector& xu, const std::optional<Vector>& start) {
    const BilevelProblem& p = ctx.problem;
    LowerSolution out;
    if (!p.ll_convex) {
        const Vector* seed = start ? &*start : nullptr;
        auto res = lower_level_ea(p, xu, ctx.config.lower_ea, ctx.counter, ctx.rng, seed);
        for (const auto& ind : res.final_population)
            ctx.log.add_lower(xu, ind.xl, LowerEval{ind.f, ind.g, ind.ll_violation});
        out.xl = res.report.x;
        out.eval = LowerEval{res.report.f, res.report.constraints, res.report.violation};
        out.solved = res.report.violation <= kFeasibleTol;
        if (out.solved) polish_lower_solution(ctx, xu, out);
        return out;
    }

    Nlp nlp;
    nlp.box = p.lower_box;
    nlp.evaluate = [&](const Vector& xl) {
        const LowerEval e = evaluate_lower(p, xu, xl, ctx.counter);
        return NlpEval{e.f, e.g};
    };
    nlp.on_iterate = [&](const Vector& xl, const NlpEval& e) {
        ctx.log.add_lower(xu, xl, LowerEval{e.objective, e.constraints, aggregate_violation(e.constraints)});
    };

    bool have = false;
    for (int s = 0; s < std::max(1, p.ll_starts); ++s) {
        const Vector x0 = (s == 0 && start) ? p.lower_box.clamp(*start) : p.lower_box.sample(ctx.rng);
        const LocalSolveReport rep = local_solve(nlp, x0, ctx.config.lower_solver);
        const bool feasible = rep.violation <= kFeasibleTol;
        const bool better = !have || (feasible && !out.solved) ||
                            (feasible == out.solved && (feasible ? rep.f < out.eval.f
                                                                 : rep.violation < out.eval.violation));
        if (better) {
            out.xl = rep.x;
            out.eval = LowerEval{rep.f, rep.constraints, rep.violation};
            out.solved = feasible;
            have = true;
        }
    }
    return out;
}

Individual solve_and_evaluate(SearchContext& ctx, const Vector& xu, const std::optional<Vector>& start) {
    const LowerSolution sol = solve_lower_level(ctx, xu, start);
    Individual ind;
    ind.xu = xu;
    ind.xl = sol.xl;
    ind.set_lower(sol.eval);
    const UpperEval ue = evaluate_upper(ctx.problem, xu, sol.xl, ctx.counter);
    ind.set_upper(ue);
    ctx.log.add_upper(xu, sol.xl, ue);
    if (sol.solved) {
        ind.tag = Tag::Tag1;
        ctx.archive.insert(ind);
    }
    return ind;
}

Individual evaluate_pair(SearchContext& ctx, const Vector& xu, const Vector& xl) {
    Individual ind;
    ind.xu = xu;
    ind.xl = xl;
    const LowerEval le = evaluate_lower(ctx.problem, xu, xl, ctx.counter);
    const UpperEval ue = evaluate_upper(ctx.problem, xu, xl, ctx.counter);
    ind.set_lower(le);
    ind.set_upper(ue);
    ctx.log.add_lower(xu, xl, le);
    ctx.log.add_upper(xu, xl, ue);
    return ind;
}

std::vector<Individual> initialize_population(SearchContext& ctx, std::string* diagnostic) {
    const BilevelProblem& p = ctx.problem;
    auto usable = [](const Individual& ind) { return ind.tag == Tag::Tag1 && ind.feasible(kFeasibleTol); };

    std::vector<Individual> pop;
    for (int i = 0; i < ctx.config.ea.pop_size; ++i)
        pop.push_back(solve_and_evaluate(ctx, p.upper_box.sample(ctx.rng)));

    if (std::none_of(pop.begin(), pop.end(), usable)) {
        Nlp feasibility;
        feasibility.box = joint_box(p.upper_box, p.lower_box);
        feasibility.evaluate = [&](const Vector& z) {
            const Vector xu = split_head(z, p.n);
            const Vector xl = split_tail(z, p.n);
            const UpperEval ue = evaluate_upper(p, xu, xl, ctx.counter);
            const LowerEval le = evaluate_lower(p, xu, xl, ctx.counter);
            return NlpEval{0.0, concat(ue.G, le.g)};
        };
        for (int attempt = 0; attempt < ctx.config.repair_attempts; ++attempt) {
            const LocalSolveReport rep =
                local_solve(feasibility, feasibility.box.sample(ctx.rng), ctx.config.lower_solver);
            if (rep.violation > kFeasibleTol) continue;
            Individual repaired = solve_and_evaluate(ctx, split_head(rep.x, p.n), split_tail(rep.x, p.n));
            const std::size_t worst = static_cast<std::size_t>(attempt) % pop.size();
            pop[worst] = std::move(repaired);
            if (usable(pop[worst])) break;
        }
    }
    std::vector<Vector> feasible_xu;
    for (const auto& ind : pop)
        if (usable(ind)) feasible_xu.push_back(ind.xu);
    if (feasible_xu.empty()) {
        if (diagnostic) *diagnostic = "no feasible upper/lower pair found during initialization";
        return {};
    }

    // Redraw the infeasible members near the leaders already known to be feasible.
    for (auto& member : pop) {
        for (int retry = 0; retry < ctx.config.init_retries && !usable(member); ++retry) {
            const Box region = trust_box(feasible_xu, p.upper_box, ctx.config.trust_expansion);
            Individual again = solve_and_evaluate(ctx, region.sample(ctx.rng));
            if (usable(again) || !deb_better(member, again, Level::Upper)) member = std::move(again);
            if (usable(member)) feasible_xu.push_back(member.xu);
        }
    }
    return pop;
}

Surrogates fit_surrogates(SearchContext& ctx, const Vector& xu, const std::optional<Vector>& query_xl) {
    const BilevelProblem& p = ctx.problem;
    const std::size_t basis_u = quadratic_basis_size(static_cast<std::size_t>(p.n));
    const std::size_t want = std::min<std::size_t>(
        static_cast<std::size_t>(ctx.config.effective_neighborhood(p.n)), ctx.archive.size());
    if (want < basis_u) throw InsufficientDataError("archive too small for local mapping fits");

    Surrogates s;
    const auto neigh = ctx.archive.neighbors(xu, want);
    s.psi = fit_psi(neigh);
    s.phi = fit_phi(neigh);
    std::vector<Vector> us, ls;
    for (const auto& ind : neigh) {
        us.push_back(ind.xu);
        ls.push_back(ind.xl);
    }
    us.push_back(xu);
    s.upper_trust = trust_box(us, p.upper_box, ctx.config.trust_expansion);
    s.lower_trust = trust_box(ls, p.lower_box, ctx.config.trust_expansion);

    const Vector xl = query_xl ? p.lower_box.clamp(*query_xl) : p.lower_box.clamp(s.psi.predict(xu));
    const std::size_t basis_j = quadratic_basis_size(static_cast<std::size_t>(p.n + p.m));
    const Vector scale = concat(p.upper_box.width(), p.lower_box.width()).cwiseMax(1e-12);
    const auto ups = SampleLog::nearest(ctx.log.upper(), xu, xl, scale, 2 * basis_j);
    const auto lows = SampleLog::nearest(ctx.log.lower(), xu, xl, scale, 2 * basis_j);
    if (ups.size() < basis_j || lows.size() < basis_j) return s;

    auto fit_set = [](const std::vector<SampleLog::Sample>& samples, QuadraticModel& objective,
                      std::vector<LinearModel>& constraints) {
        std::vector<Vector> z;
        std::vector<double> v;
        for (const auto& smp : samples) {
            z.push_back(concat(smp.xu, smp.xl));
            v.push_back(smp.value);
        }
        objective = fit_quadratic(z, v);
        const Eigen::Index k = samples.front().constraints.size();
        for (Eigen::Index j = 0; j < k; ++j) {
            for (std::size_t i = 0; i < samples.size(); ++i) v[i] = samples[i].constraints[j];
            constraints.push_back(fit_linear(z, v));
        }
    };
    fit_set(ups, s.F, s.G);
    fit_set(lows, s.f, s.g);
    s.has_joint = true;
    return s;
}

Vector auxiliary_solve(const Vector& xu, const Surrogates& s, const Box& lower_box,
                       const LocalSolveOptions& options) {
    const Box box = intersect(s.lower_trust.dim() == lower_box.dim() ? s.lower_trust : lower_box, lower_box);
    const Vector fallback = box.clamp(s.psi.predict(xu));
    if (!s.has_joint) return fallback;

    auto lower_rows = [&](const Vector& z) {
        Vector c(static_cast<Eigen::Index>(s.g.size()));
        for (std::size_t j = 0; j < s.g.size(); ++j) c[static_cast<Eigen::Index>(j)] = s.g[j].predict(z);
        return c;
    };
    // Penalty continuation on the follower's model objective: the limit minimizes F_hat over the
    // minimizers of f_hat, which is the leader's preferred point of the predicted reaction set.
    const double phi_value = s.phi.predict(xu);
    Vector xl = fallback;
    for (double weight : {1.0, 1e2, 1e4, 1e6, 1e8}) {
        Nlp nlp;
        nlp.box = box;
        nlp.evaluate = [&, weight](const Vector& v) {
            const Vector z = concat(xu, v);
            Vector c(static_cast<Eigen::Index>(s.g.size() + s.G.size()));
            c << lower_rows(z), Vector::Zero(static_cast<Eigen::Index>(s.G.size()));
            for (std::size_t k = 0; k < s.G.size(); ++k)
                c[static_cast<Eigen::Index>(s.g.size() + k)] = s.G[k].predict(z);
            return NlpEval{s.F.predict(z) + weight * (s.f.predict(z) - phi_value), c};
        };
        xl = local_solve(nlp, xl, options).x;
    }
    if (aggregate_violation(lower_rows(concat(xu, xl))) > options.feasibility_tol) return fallback;
    return xl;
}

OffspringUpdate bleaq2_offspring_update(SearchContext& ctx, const std::vector<Vector>& offspring_xu,
                                        const std::vector<Individual>& population) {
    const auto tag1 = std::count_if(population.begin(), population.end(),
                                    [](const Individual& ind) { return ind.tag == Tag::Tag1; });
    const bool enough_verified = 2 * static_cast<std::size_t>(tag1) >= population.size();

    OffspringUpdate out;
    for (const auto& xu : offspring_xu) {
        std::optional<Surrogates> s;
        if (enough_verified) {
            try {
                s = fit_surrogates(ctx, xu, std::nullopt);
            } catch (const InsufficientDataError&) {
            }
        }
        if (!s) {
            out.offspring.push_back(solve_and_evaluate(ctx, xu));
            out.decisions.push_back(Mapping::None);
            continue;
        }
        out.e_mse_psi = s->psi.mse;
        out.e_mse_phi = s->phi.mse;
        Vector xl;
        if (s->psi.mse <= s->phi.mse) {
            xl = ctx.problem.lower_box.clamp(s->psi.predict(xu));
            out.decisions.push_back(Mapping::Psi);
        } else {
            xl = auxiliary_solve(xu, *s, ctx.problem.lower_box, ctx.config.surrogate_solver);
            out.decisions.push_back(Mapping::Phi);
        }
        Individual predicted = evaluate_pair(ctx, xu, xl);
        if (predicted.ll_violation > kFeasibleTol) {
            // A follower vector that breaks the follower's own constraints is not a reaction.
            out.offspring.push_back(solve_and_evaluate(ctx, xu, xl));
            out.decisions.back() = Mapping::None;
            continue;
        }
        out.offspring.push_back(std::move(predicted));
    }
    return out;
}

LocalSearchOutcome improvement_local_search(SearchContext& ctx, const Individual& best,
                                            MappingPolicy policy, bool exact) {
    const BilevelProblem& p = ctx.problem;
    LocalSearchOutcome out;
    out.best = best;

    Surrogates s;
    try {
        s = fit_surrogates(ctx, best.xu, best.xl);
    } catch (const InsufficientDataError&) {
        out.skipped = true;
        return out;
    }
    out.e_mse_psi = s.psi.mse;
    out.e_mse_phi = s.phi.mse;
    switch (policy) {
        case MappingPolicy::PsiOnly: out.chosen = Mapping::Psi; break;
        case MappingPolicy::PhiOnly: out.chosen = Mapping::Phi; break;
        case MappingPolicy::Adaptive: out.chosen = s.psi.mse <= s.phi.mse ? Mapping::Psi : Mapping::Phi; break;
    }
    if (!exact && !s.has_joint) {
        out.skipped = true;
        return out;
    }

    Vector xu_ls;
    Vector xl_pred;
    LocalSolveReport rep;
    if (out.chosen == Mapping::Psi) {
        auto reaction = [&](const Vector& xu) { return p.lower_box.clamp(s.psi.predict(xu)); };
        // The predicted follower must stay inside its box; clamping alone would hide that edge.
        auto box_rows = [&](const Vector& xu) {
            const Vector raw = s.psi.predict(xu);
            return concat(p.lower_box.lo - raw, raw - p.lower_box.hi);
        };
        Nlp nlp;
        nlp.box = s.upper_trust;
        nlp.evaluate = [&](const Vector& xu) {
            const Vector xl = reaction(xu);
            if (exact) {
                const UpperEval ue = evaluate_upper(p, xu, xl, ctx.counter);
                const LowerEval le = evaluate_lower(p, xu, xl, ctx.counter);
                ctx.log.add_upper(xu, xl, ue);
                ctx.log.add_lower(xu, xl, le);
                return NlpEval{ue.F, concat(concat(le.g, ue.G), box_rows(xu))};
            }
            const Vector z = concat(xu, xl);
            Vector c(s.g.size() + s.G.size());
            Eigen::Index k = 0;
            for (const auto& gj : s.g) c[k++] = gj.predict(z);
            for (const auto& Gk : s.G) c[k++] = Gk.predict(z);
            return NlpEval{s.F.predict(z), concat(c, box_rows(xu))};
        };
        rep = local_solve(nlp, nlp.box.clamp(best.xu), ctx.config.surrogate_solver);
        xu_ls = rep.x;
        xl_pred = reaction(xu_ls);
    } else {
        const double relax = std::sqrt(std::max(0.0, s.phi.mse));
        Nlp nlp;
        nlp.box = joint_box(s.upper_trust, s.lower_trust);
        nlp.evaluate = [&](const Vector& z) {
            const Vector xu = split_head(z, p.n);
            const Vector xl = split_tail(z, p.n);
            const double phi_value = s.phi.predict(xu) + relax;
            if (exact) {
                const UpperEval ue = evaluate_upper(p, xu, xl, ctx.counter);
                const LowerEval le = evaluate_lower(p, xu, xl, ctx.counter);
                ctx.log.add_upper(xu, xl, ue);
                ctx.log.add_lower(xu, xl, le);
                Vector c(1 + le.g.size() + ue.G.size());
                c << le.f - phi_value, le.g, ue.G;
                return NlpEval{ue.F, c};
            }
            Vector c(1 + s.g.size() + s.G.size());
            c[0] = s.f.predict(z) - phi_value;
            Eigen::Index k = 1;
            for (const auto& gj : s.g) c[k++] = gj.predict(z);
            for (const auto& Gk : s.G) c[k++] = Gk.predict(z);
            return NlpEval{s.F.predict(z), c};
        };
        rep = local_solve(nlp, nlp.box.clamp(concat(best.xu, best.xl)), ctx.config.surrogate_solver);
        xu_ls = split_head(rep.x, p.n);
        xl_pred = split_tail(rep.x, p.n);
    }
    if (rep.violation > 1e-4) {
        out.skipped = true;
        return out;
    }

    // Only the phi form optimizes over xl itself, so only its solution seeds the true solve.
    const Individual candidate = out.chosen == Mapping::Phi
                                     ? solve_and_evaluate(ctx, xu_ls, xl_pred)
                                     : solve_and_evaluate(ctx, xu_ls);
    if (candidate.tag == Tag::Tag1) out.prediction_error = (candidate.xl - xl_pred).norm();
    if (candidate.tag == Tag::Tag1 && deb_better(candidate, best, Level::Upper)) {
        out.best = candidate;
        out.improved = true;
    }
    return out;
}

bool within_accuracy(const BilevelProblem& problem, const Individual& ind, double eps) {
    if (!problem.known_optimum || ind.tag != Tag::Tag1 || !ind.feasible(kFeasibleTol)) return false;
    return std::abs(ind.F - problem.known_optimum->F_star) <= eps &&
           std::abs(ind.f - problem.known_optimum->f_star) <= eps;
}

namespace {

enum class Driver { Nested, Bleaq2 };

RunRecord run_generic(const BilevelProblem& problem, const BleaqConfig& config, Driver driver,
                      NestedMode mode, EvalCounter& counter, Rng& rng) {
    problem.validate();
    config.validate(problem.n);

    RunRecord rec;
    rec.problem = problem.name;
    rec.algorithm = driver == Driver::Bleaq2 ? "bleaq2" : std::string(to_string(mode));

    SearchContext ctx(problem, config, counter, rng);
    auto pop = initialize_population(ctx, &rec.diagnostic);
    if (pop.empty()) {
        rec.terminated_by = TerminatedBy::Aborted;
        rec.counter = counter;
        return rec;
    }
    const std::vector<Vector> initial = upper_vectors(pop);
    const MappingPolicy policy = driver == Driver::Bleaq2          ? MappingPolicy::Adaptive
                                 : mode == NestedMode::PsiLocal ? MappingPolicy::PsiOnly
                                                                : MappingPolicy::PhiOnly;
    const bool local_search = driver == Driver::Bleaq2 || mode != NestedMode::Plain;
    bool exact_next = false;

    // Best verified pair seen so far; population members can be displaced by predicted pairs.
    std::optional<Individual> incumbent;
    auto track_incumbent = [&] {
        const auto bi = best_verified_index(pop);
        if (bi && (!incumbent || deb_better(pop[*bi], *incumbent, Level::Upper))) incumbent = pop[*bi];
    };
    auto check_accuracy = [&] {
        track_incumbent();
        return config.stop_on_accuracy && incumbent && within_accuracy(problem, *incumbent, config.accuracy_target);
    };

    bool done = false;
    if (check_accuracy()) {
        rec.terminated_by = TerminatedBy::Accuracy;
        done = true;
    }
    for (int gen = 1; !done; ++gen) {
        rec.generations = gen;
        TraceEntry entry;
        entry.gen = gen;

        const auto children = reproduce(pop, config.ea, problem.upper_box, rng);
        std::vector<Individual> offspring;
        if (driver == Driver::Bleaq2) {
            auto upd = bleaq2_offspring_update(ctx, children, pop);
            offspring = std::move(upd.offspring);
            entry.e_mse_psi = upd.e_mse_psi;
            entry.e_mse_phi = upd.e_mse_phi;
            for (Mapping d : upd.decisions) {
                if (d == Mapping::Psi) ++rec.psi_decisions;
                if (d == Mapping::Phi) ++rec.phi_decisions;
                if (d != Mapping::None) entry.chosen_mapping = d;
            }
        } else {
            for (const auto& xu : children) offspring.push_back(solve_and_evaluate(ctx, xu));
        }
        pool_replace(pop, offspring, config.ea.replace_r, Level::Upper, rng);

        if (driver == Driver::Bleaq2) {
            const std::size_t top = deb_best_index(pop, Level::Upper);
            if (pop[top].tag == Tag::Tag0) pop[top] = solve_and_evaluate(ctx, pop[top].xu, pop[top].xl);
        }

        if (local_search && gen % config.local_search_every_k == 0) {
            if (const auto bi = best_verified_index(pop)) {
                auto ls = improvement_local_search(ctx, pop[*bi], policy, exact_next);
                exact_next = !ls.improved;
                if (ls.improved) pop[*bi] = ls.best;
                if (!entry.e_mse_psi) entry.e_mse_psi = ls.e_mse_psi;
                if (!entry.e_mse_phi) entry.e_mse_phi = ls.e_mse_phi;
                if (entry.chosen_mapping == Mapping::None && !ls.skipped) entry.chosen_mapping = ls.chosen;
                entry.prediction_error = ls.prediction_error;
            }
        }

        const bool accurate = check_accuracy();
        entry.best_F = incumbent ? incumbent->F : pop[deb_best_index(pop, Level::Upper)].F;
        rec.trace.push_back(entry);

        if (accurate) {
            rec.terminated_by = TerminatedBy::Accuracy;
            break;
        }
        if (counter.ll_evals >= config.max_ll_calls) {
            rec.terminated_by = TerminatedBy::Budget;
            break;
        }
        const auto current = upper_vectors(pop);
        if (variance_termination(initial, current, config.ea.alpha_stop).stop) {
            rec.terminated_by = TerminatedBy::Variance;
            break;
        }
        if (gen >= config.max_generations) {
            rec.terminated_by = TerminatedBy::Generations;
            break;
        }
    }

    track_incumbent();
    rec.best = incumbent ? *incumbent : pop[deb_best_index(pop, Level::Upper)];
    rec.success = within_accuracy(problem, rec.best, config.accuracy_target);
    rec.counter = counter;
    return rec;
}

}  // namespace

RunRecord nested_solve(const BilevelProblem& problem, const BleaqConfig& config, NestedMode mode,
                       EvalCounter& counter, Rng& rng) {
    return run_generic(problem, config, Driver::Nested, mode, counter, rng);
}

RunRecord bleaq2_solve(const BilevelProblem& problem, const BleaqConfig& config, EvalCounter& counter,
                       Rng& rng) {
    return run_generic(problem, config, Driver::Bleaq2, NestedMode::Plain, counter, rng);
}

}  // namespace bilevel
