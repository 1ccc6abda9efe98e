#pragma once

#include "bilevel/core.hpp"
#include "bilevel/ea.hpp"
#include "bilevel/local_solve.hpp"
#include "bilevel/metamodel.hpp"

#include <cstdint>
#include <deque>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace bilevel {

enum class NestedMode { Plain, PsiLocal, PhiLocal };
enum class TerminatedBy { Accuracy, Variance, Budget, Generations, Aborted };
enum class Mapping { None, Psi, Phi };

std::string_view to_string(NestedMode mode);
std::string_view to_string(TerminatedBy reason);
std::string_view to_string(Mapping mapping);

struct BleaqConfig {
    EaParams ea = EaParams::bleaq2_preset();
    EaParams lower_ea = EaParams::bleaq2_preset();
    int local_search_every_k = 5;
    /// Archive members used for the xu -> xl and xu -> f fits; 0 means 2 x basis size.
    int neighborhood_size = 0;
    double accuracy_target = 1e-2;
    bool stop_on_accuracy = true;
    std::uint64_t max_ll_calls = 200000;
    int max_generations = 100000;
    /// Feasibility-problem solves tried when no random initial member is feasible.
    int repair_attempts = 5;
    /// Redraws near known feasible leaders for each infeasible initial member.
    int init_retries = 3;
    /// Expansion of the neighbors' bounding box that limits surrogate-driven searches.
    double trust_expansion = 0.25;
    LocalSolveOptions lower_solver;
    LocalSolveOptions surrogate_solver;

    static BleaqConfig nested_default();
    static BleaqConfig bleaq2_default();

    int effective_neighborhood(int n) const;
    void validate(int n) const;
};

struct TraceEntry {
    int gen = 0;
    double best_F = 0.0;
    std::optional<double> e_mse_psi;
    std::optional<double> e_mse_phi;
    Mapping chosen_mapping = Mapping::None;
    std::optional<double> prediction_error;
};

struct RunRecord {
    std::string problem;
    std::string algorithm;
    std::uint64_t seed = 0;
    Individual best;
    EvalCounter counter;
    TerminatedBy terminated_by = TerminatedBy::Budget;
    bool success = false;
    int generations = 0;
    int psi_decisions = 0;
    int phi_decisions = 0;
    std::vector<TraceEntry> trace;
    std::string diagnostic;
};

/// Evaluated points kept for the joint-space surrogates of F, G (upper) and f, g (lower).
class SampleLog {
public:
    struct Sample {
        Vector xu;
        Vector xl;
        double value = 0.0;
        Vector constraints;
    };

    explicit SampleLog(std::size_t capacity = 4000) : capacity_(capacity) {}
    void add_upper(const Vector& xu, const Vector& xl, const UpperEval& e);
    void add_lower(const Vector& xu, const Vector& xl, const LowerEval& e);
    const std::deque<Sample>& upper() const { return upper_; }
    const std::deque<Sample>& lower() const { return lower_; }
    /// Nearest samples to (xu, xl) with coordinates divided by `scale`; ties keep insertion order.
    static std::vector<Sample> nearest(const std::deque<Sample>& from, const Vector& xu,
                                       const Vector& xl, const Vector& scale, std::size_t count);

private:
    void push(std::deque<Sample>& to, Sample s);
    std::deque<Sample> upper_;
    std::deque<Sample> lower_;
    std::size_t capacity_;
};

/// Everything one run mutates; owned by the caller so that each step can be driven in isolation.
struct SearchContext {
    const BilevelProblem& problem;
    const BleaqConfig& config;
    EvalCounter& counter;
    Rng& rng;
    Archive archive;
    SampleLog log;

    SearchContext(const BilevelProblem& p, const BleaqConfig& c, EvalCounter& k, Rng& r)
        : problem(p), config(c), counter(k), rng(r) {}
};

struct LowerSolution {
    Vector xl;
    LowerEval eval;
    bool solved = false;
};

/// Lower-level optimization at fixed xu: the local solver (restarted ll_starts times) for convex
/// followers, the lower-level EA otherwise. `start` seeds the first local-solver run; the other
/// runs start uniformly at random.
LowerSolution solve_lower_level(SearchContext& ctx, const Vector& xu,
                                const std::optional<Vector>& start = std::nullopt);

/// Solves the follower at xu, evaluates the leader, tags Tag1 and archives on success.
Individual solve_and_evaluate(SearchContext& ctx, const Vector& xu,
                              const std::optional<Vector>& start = std::nullopt);

/// Evaluates a given pair at both levels (one evaluation each) without tagging it.
Individual evaluate_pair(SearchContext& ctx, const Vector& xu, const Vector& xl);

/// Random upper vectors with solved followers. When none is feasible, the feasibility problem
/// (zero objective, all constraints, over (xu, xl)) supplies one; infeasible members are then
/// redrawn near the feasible leaders. Empty when no member is feasible.
std::vector<Individual> initialize_population(SearchContext& ctx, std::string* diagnostic = nullptr);

/// Local quadratic/linear models around one point.
struct Surrogates {
    PsiModel psi;
    PhiModel phi;
    QuadraticModel F;
    QuadraticModel f;
    std::vector<LinearModel> G;
    std::vector<LinearModel> g;
    bool has_joint = false;  // F, f, G, g were fitted
    Box upper_trust;
    Box lower_trust;
};

/// Fits the mappings from the archive neighborhood of xu and, when enough samples exist, the
/// joint-space models of F, f, G, g around (xu, query_xl). Throws InsufficientDataError when
/// the archive is too small for the mappings.
Surrogates fit_surrogates(SearchContext& ctx, const Vector& xu, const std::optional<Vector>& query_xl);

/// Minimizes the model of F over xl among the minimizers of the model of f (relative to
/// phi_hat(xu)), subject to the constraint models. Touches no true function.
Vector auxiliary_solve(const Vector& xu, const Surrogates& s, const Box& lower_box,
                       const LocalSolveOptions& options = {});

/// Step 3 for a batch of offspring upper vectors.
struct OffspringUpdate {
    std::vector<Individual> offspring;
    std::vector<Mapping> decisions;  // Mapping::None for real lower-level solves
    std::optional<double> e_mse_psi;
    std::optional<double> e_mse_phi;
};
OffspringUpdate bleaq2_offspring_update(SearchContext& ctx, const std::vector<Vector>& offspring_xu,
                                        const std::vector<Individual>& population);

enum class MappingPolicy { Adaptive, PsiOnly, PhiOnly };

struct LocalSearchOutcome {
    Individual best;
    bool improved = false;
    bool skipped = false;
    Mapping chosen = Mapping::None;
    std::optional<double> e_mse_psi;
    std::optional<double> e_mse_phi;
    std::optional<double> prediction_error;
};

/// Single-level reduction around `best` (Psi form over xu, phi form over (xu, xl)) on
/// surrogates, or on exact counted functions when `exact` is set; the result is verified
/// with a true lower-level solve and replaces `best` only if Deb-better.
LocalSearchOutcome improvement_local_search(SearchContext& ctx, const Individual& best,
                                            MappingPolicy policy, bool exact);

/// True when ind is a verified, feasible pair within `eps` of the known optimum at both levels.
bool within_accuracy(const BilevelProblem& problem, const Individual& ind, double eps);

RunRecord nested_solve(const BilevelProblem& problem, const BleaqConfig& config, NestedMode mode,
                       EvalCounter& counter, Rng& rng);

RunRecord bleaq2_solve(const BilevelProblem& problem, const BleaqConfig& config,
                       EvalCounter& counter, Rng& rng);

}  // namespace bilevel
