#pragma once

#include "bilevel/core.hpp"

namespace bilevel {

enum class QpStatus { Optimal, Infeasible, IterationLimit };

struct QpResult {
    QpStatus status = QpStatus::Optimal;
    Vector x;
    /// One multiplier per inequality row (zero for inactive rows).
    Vector multipliers;
    double objective = 0.0;
    int iterations = 0;
};

/// Strictly convex QP: minimize 0.5 x'Hx + c'x subject to A x >= b.
///
/// Dual active-set method of Goldfarb and Idnani; starts from the unconstrained minimizer, so no
/// feasible starting point is required. H must be symmetric positive definite.
QpResult solve_qp(const Matrix& H, const Vector& c, const Matrix& A, const Vector& b);

}  // namespace bilevel
