#pragma once

#include "bilevel/core.hpp"
#include "bilevel/local_solve.hpp"

#include <span>
#include <vector>

namespace bilevel {

struct EaParams {
    int pop_size = 50;         // N
    int parents_mu = 3;        // mu
    int offspring_lambda = 2;  // lambda
    int replace_r = 2;         // r
    double p_crossover = 0.9;
    double p_mutation = 0.1;
    double mutation_index = 20.0;
    double pcx_sigma = 0.1;
    double alpha_stop = 1e-4;
    int max_gens = 2000;

    void validate() const;

    /// mu = 2, lambda = 3, r = 2, N = 50.
    static EaParams nested_preset();
    /// mu = 3, lambda = 2, r = 2, N = 50 (upper and lower level).
    static EaParams bleaq2_preset();
};

/// c = z + w_xi * (z - centroid) + w_eta * (p2 - p1) / 2, clamped to `box`.
/// `index` selects z among the three parents; the remaining two are p1, p2 in order.
Vector pcx_crossover(std::span<const Vector> parents, std::size_t index, const Box& box,
                     double w_xi, double w_eta);

/// Same, with w_xi and w_eta drawn from N(0, sigma^2).
Vector pcx_crossover(std::span<const Vector> parents, std::size_t index, const Box& box,
                     double sigma, Rng& rng);

/// Each coordinate is perturbed with probability `p_mutation` by the symmetric
/// polynomial distribution of index `eta`, scaled by the box width; result clamped.
Vector polynomial_mutation(const Vector& x, const Box& box, double p_mutation, double eta, Rng& rng);

/// Binary tournaments pool[0] vs pool[1], pool[2] vs pool[3], ...; returns winner indices.
/// Equivalent members keep the first of the pair. Odd pool sizes are a UsageError.
std::vector<std::size_t> tournament_select(std::span<const Individual> pool, Level level);

struct VarianceCheck {
    double alpha = 1.0;
    bool stop = false;
};

/// alpha = sum_i var_T(x_i) / sum_i var_0(x_i); stop when alpha < alpha_stop or the initial
/// variance is zero.
VarianceCheck variance_termination(std::span<const Vector> initial, std::span<const Vector> current,
                                   double alpha_stop);

/// Sum over coordinates of the population variance.
double total_variance(std::span<const Vector> xs);

/// Pool r randomly chosen members with the offspring and write the best r (Deb order at `level`)
/// back into the chosen slots. Returns the slots that were chosen.
std::vector<std::size_t> pool_replace(std::vector<Individual>& population,
                                      std::span<const Individual> offspring, int r, Level level,
                                      Rng& rng);

/// `count` distinct indices drawn uniformly from [0, size).
std::vector<std::size_t> sample_distinct(std::size_t size, std::size_t count, Rng& rng);

/// Population-based solver for the lower-level problem at fixed xu (steady-state EA with
/// tournament selection, PCX, polynomial mutation, r-pool replacement and variance
/// termination). Always returns its best member; converged means that member is feasible.
/// A `seed` vector, when given, replaces one random member of the initial population.
struct LowerEaResult {
    LocalSolveReport report;
    std::vector<Individual> final_population;
};
LowerEaResult lower_level_ea(const BilevelProblem& problem, const Vector& xu, const EaParams& params,
                             EvalCounter& counter, Rng& rng, const Vector* seed = nullptr);

}  // namespace bilevel
