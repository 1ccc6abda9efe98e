#include "bilevel/ea.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace bilevel {

void EaParams::validate() const {
    if (pop_size < 3 || parents_mu < 1 || offspring_lambda < 1 || replace_r < 1)
        throw UsageError("EA sizes must be positive (N >= 3)");
    if (2 * parents_mu > pop_size) throw UsageError("EA needs 2*mu <= N");
    if (replace_r > pop_size) throw UsageError("EA needs r <= N");
    if (p_crossover < 0 || p_crossover > 1 || p_mutation < 0 || p_mutation > 1)
        throw UsageError("EA probabilities must lie in [0, 1]");
    if (alpha_stop < 0 || max_gens < 1) throw UsageError("EA termination settings are invalid");
}

EaParams EaParams::nested_preset() {
    EaParams p;
    p.parents_mu = 2;
    p.offspring_lambda = 3;
    p.replace_r = 2;
    return p;
}

EaParams EaParams::bleaq2_preset() { return EaParams{}; }

Vector pcx_crossover(std::span<const Vector> parents, std::size_t index, const Box& box,
                     double w_xi, double w_eta) {
    if (parents.size() < 3) throw UsageError("pcx_crossover needs three parents");
    if (index >= parents.size()) throw UsageError("pcx_crossover: index parent out of range");
    Vector centroid = Vector::Zero(parents[0].size());
    for (const auto& p : parents) centroid += p;
    centroid /= static_cast<double>(parents.size());
    const Vector& z = parents[index];
    std::size_t others[2];
    std::size_t k = 0;
    for (std::size_t i = 0; i < parents.size() && k < 2; ++i)
        if (i != index) others[k++] = i;
    const Vector child =
        z + w_xi * (z - centroid) + w_eta * (parents[others[1]] - parents[others[0]]) / 2.0;
    return box.clamp(child);
}

Vector pcx_crossover(std::span<const Vector> parents, std::size_t index, const Box& box,
                     double sigma, Rng& rng) {
    std::normal_distribution<double> gauss(0.0, sigma);
    const double w_xi = gauss(rng);
    const double w_eta = gauss(rng);
    return pcx_crossover(parents, index, box, w_xi, w_eta);
}

Vector polynomial_mutation(const Vector& x, const Box& box, double p_mutation, double eta,
                           Rng& rng) {
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    Vector y = x;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        if (unit(rng) >= p_mutation) continue;
        const double u = unit(rng);
        const double delta = u < 0.5 ? std::pow(2.0 * u, 1.0 / (eta + 1.0)) - 1.0
                                     : 1.0 - std::pow(2.0 * (1.0 - u), 1.0 / (eta + 1.0));
        y[i] = x[i] + delta * (box.hi[i] - box.lo[i]);
    }
    return box.clamp(y);
}

std::vector<std::size_t> tournament_select(std::span<const Individual> pool, Level level) {
    if (pool.size() % 2 != 0) throw UsageError("tournament_select needs an even pool");
    std::vector<std::size_t> winners;
    for (std::size_t i = 0; i < pool.size(); i += 2)
        winners.push_back(deb_better(pool[i + 1], pool[i], level) ? i + 1 : i);
    return winners;
}

double total_variance(std::span<const Vector> xs) {
    if (xs.empty()) return 0.0;
    Vector mean = Vector::Zero(xs[0].size());
    for (const auto& x : xs) mean += x;
    mean /= static_cast<double>(xs.size());
    double v = 0.0;
    for (const auto& x : xs) v += (x - mean).squaredNorm();
    return v / static_cast<double>(xs.size());
}

VarianceCheck variance_termination(std::span<const Vector> initial, std::span<const Vector> current,
                                   double alpha_stop) {
    const double v0 = total_variance(initial);
    if (v0 <= 0.0) return {0.0, true};
    VarianceCheck vc;
    vc.alpha = total_variance(current) / v0;
    vc.stop = vc.alpha < alpha_stop;
    return vc;
}

std::vector<std::size_t> sample_distinct(std::size_t size, std::size_t count, Rng& rng) {
    if (count > size) throw UsageError("sample_distinct: count exceeds size");
    std::vector<std::size_t> idx(size);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    // Partial Fisher-Yates.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, size - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    idx.resize(count);
    return idx;
}

std::vector<std::size_t> pool_replace(std::vector<Individual>& population,
                                      std::span<const Individual> offspring, int r, Level level,
                                      Rng& rng) {
    const auto slots = sample_distinct(population.size(), static_cast<std::size_t>(r), rng);
    std::vector<Individual> pool;
    for (std::size_t s : slots) pool.push_back(population[s]);
    pool.insert(pool.end(), offspring.begin(), offspring.end());
    std::stable_sort(pool.begin(), pool.end(),
                     [level](const Individual& a, const Individual& b) { return deb_better(a, b, level); });
    for (std::size_t i = 0; i < slots.size(); ++i) population[slots[i]] = pool[i];
    return slots;
}

LowerEaResult lower_level_ea(const BilevelProblem& problem, const Vector& xu, const EaParams& params,
                             EvalCounter& counter, Rng& rng, const Vector* seed) {
    params.validate();
    const Box& box = problem.lower_box;
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    auto make = [&](const Vector& xl) {
        Individual ind;
        ind.xu = xu;
        ind.xl = xl;
        ind.set_lower(evaluate_lower(problem, xu, xl, counter));
        return ind;
    };

    std::vector<Individual> pop;
    pop.reserve(static_cast<std::size_t>(params.pop_size));
    for (int i = 0; i < params.pop_size; ++i)
        pop.push_back(make(i == 0 && seed ? box.clamp(*seed) : box.sample(rng)));
    std::vector<Vector> initial;
    for (const auto& ind : pop) initial.push_back(ind.xl);

    std::size_t evals = pop.size();
    const auto mu = static_cast<std::size_t>(params.parents_mu);
    for (int gen = 0; gen < params.max_gens; ++gen) {
        const auto picks = sample_distinct(pop.size(), 2 * mu, rng);
        std::vector<Individual> pool;
        for (auto i : picks) pool.push_back(pop[i]);
        std::vector<Vector> parents;
        std::vector<const Individual*> parent_inds;
        for (auto w : tournament_select(pool, Level::Lower)) {
            parents.push_back(pool[w].xl);
            parent_inds.push_back(&pool[w]);
        }
        while (parents.size() < 3) {
            std::uniform_int_distribution<std::size_t> any(0, pop.size() - 1);
            const auto& extra = pop[any(rng)];
            parents.push_back(extra.xl);
            parent_inds.push_back(&extra);
        }
        std::size_t index = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (deb_better(*parent_inds[i], *parent_inds[index], Level::Lower)) index = i;
        const std::span<const Vector> trio(parents.data(), 3);

        std::vector<Individual> offspring;
        for (int k = 0; k < params.offspring_lambda; ++k) {
            Vector child;
            if (unit(rng) < params.p_crossover) {
                child = pcx_crossover(trio, index, box, params.pcx_sigma, rng);
            } else {
                std::uniform_int_distribution<std::size_t> any(0, parents.size() - 1);
                child = parents[any(rng)];
            }
            child = polynomial_mutation(child, box, params.p_mutation, params.mutation_index, rng);
            offspring.push_back(make(child));
            ++evals;
        }
        pool_replace(pop, offspring, params.replace_r, Level::Lower, rng);

        std::vector<Vector> current;
        for (const auto& ind : pop) current.push_back(ind.xl);
        if (variance_termination(initial, current, params.alpha_stop).stop) break;
    }

    const auto& best = pop[deb_best_index(pop, Level::Lower)];
    LowerEaResult out;
    out.report.x = best.xl;
    out.report.f = best.f;
    out.report.constraints = best.g;
    out.report.violation = best.ll_violation;
    out.report.converged = best.ll_violation <= 1e-6;
    out.report.evals_used = evals;
    out.final_population = std::move(pop);
    return out;
}

}  // namespace bilevel
