#pragma once

#include "bilevel/core.hpp"

#include <cstddef>
#include <functional>

namespace bilevel {

struct NlpEval {
    double objective = 0.0;
    Vector constraints;  // feasible iff every entry <= 0
};

/// Box-bounded nonlinear program. `evaluate` is the only way the solver touches the functions;
/// wire evaluation counting into it.
struct Nlp {
    Box box;
    std::function<NlpEval(const Vector&)> evaluate;
    /// Called with every accepted iterate (not with finite-difference probes).
    std::function<void(const Vector&, const NlpEval&)> on_iterate;
};

struct LocalSolveOptions {
    double feasibility_tol = 1e-6;
    double improvement_tol = 1e-6;
    double stationarity_tol = 1e-4;
    int max_iterations = 200;
};

struct LocalSolveReport {
    Vector x;
    double f = 0.0;
    Vector constraints;
    double violation = 0.0;
    bool converged = false;
    std::size_t evals_used = 0;
    int iterations = 0;
};

/// Central-difference gradient of the objective and Jacobian of the constraints at `x`.
/// Near a bound the three-point one-sided formula is used. Each probe calls `nlp.evaluate`.
struct Derivatives {
    Vector gradient;
    Matrix jacobian;
    std::size_t probes = 0;
};
Derivatives finite_differences(const Nlp& nlp, const Vector& x, const NlpEval& at_x);

/// Sequential quadratic programming with damped BFGS updates, an elastic QP subproblem
/// (so inconsistent linearizations still give a step) and an L1 merit line search.
///
/// Stops when the point is feasible and the objective improves by less than
/// `improvement_tol` over a short step, or when the QP step vanishes. `converged` is true only
/// for a feasible stop of that kind.
LocalSolveReport local_solve(const Nlp& nlp, const Vector& x0, const LocalSolveOptions& options = {});

}  // namespace bilevel
