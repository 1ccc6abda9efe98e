#include "bilevel/local_solve.hpp"

#include "bilevel/qp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace bilevel {

Derivatives finite_differences(const Nlp& nlp, const Vector& x, const NlpEval& at_x) {
    const Eigen::Index n = x.size();
    const Eigen::Index mc = at_x.constraints.size();
    Derivatives d;
    d.gradient = Vector::Zero(n);
    d.jacobian = Matrix::Zero(mc, n);
    const double base_step = std::cbrt(std::numeric_limits<double>::epsilon());

    auto column = [&](const NlpEval& e) {
        Vector v(1 + mc);
        v[0] = e.objective;
        v.tail(mc) = e.constraints;
        return v;
    };
    const Vector v0 = column(at_x);

    for (Eigen::Index i = 0; i < n; ++i) {
        const double lo = nlp.box.lo[i], hi = nlp.box.hi[i];
        double h = base_step * std::max(1.0, std::abs(x[i]));
        if (hi - lo < 2.0 * h) h = 0.5 * (hi - lo);
        if (h <= 0.0) continue;
        Vector xp = x, xm = x;
        Vector deriv;
        if (x[i] + h <= hi && x[i] - h >= lo) {
            xp[i] = x[i] + h;
            xm[i] = x[i] - h;
            deriv = (column(nlp.evaluate(xp)) - column(nlp.evaluate(xm))) / (2.0 * h);
        } else {
            // Three-point one-sided formula pointing into the box.
            const double dir = (x[i] + 2.0 * h <= hi) ? 1.0 : -1.0;
            xp[i] = x[i] + dir * h;
            xm[i] = x[i] + dir * 2.0 * h;
            deriv = dir * (-3.0 * v0 + 4.0 * column(nlp.evaluate(xp)) - column(nlp.evaluate(xm))) /
                    (2.0 * h);
        }
        d.probes += 2;
        d.gradient[i] = deriv[0];
        d.jacobian.col(i) = deriv.tail(mc);
    }
    return d;
}

namespace {

double merit(const NlpEval& e, double penalty) {
    return e.objective + penalty * aggregate_violation(e.constraints);
}

}  // namespace

LocalSolveReport local_solve(const Nlp& nlp, const Vector& x0, const LocalSolveOptions& opt) {
    const Eigen::Index n = nlp.box.dim();
    if (x0.size() != n) throw UsageError("local_solve: start point has wrong dimension");

    LocalSolveReport rep;
    Vector x = nlp.box.clamp(x0);
    NlpEval e = nlp.evaluate(x);
    rep.evals_used = 1;
    if (nlp.on_iterate) nlp.on_iterate(x, e);
    const Eigen::Index mc = e.constraints.size();

    Matrix B = Matrix::Identity(n, n);
    double penalty = 10.0;
    bool first_update = true;
    int ls_failures = 0;
    bool stop_ok = false;
    double best_infeasible = std::numeric_limits<double>::infinity();
    int stalled = 0;

    Derivatives der = finite_differences(nlp, x, e);
    rep.evals_used += der.probes;
    Vector lambda = Vector::Zero(mc);

    for (rep.iterations = 0; rep.iterations < opt.max_iterations; ++rep.iterations) {
        const double viol = aggregate_violation(e.constraints);
        const double xscale = 1.0 + x.cwiseAbs().maxCoeff();

        // Elastic QP in z = (d, s): min 0.5 d'Bd + g'd + rho*s + 0.5 s^2
        // s.t. c + J d <= s, lo - x <= d <= hi - x, s >= 0.
        const double rho = std::max(100.0, 10.0 * penalty);
        const Eigen::Index nz = n + 1;
        Matrix H = Matrix::Zero(nz, nz);
        H.topLeftCorner(n, n) = B;
        H(n, n) = 1.0;
        Vector c(nz);
        c << der.gradient, rho;
        const Eigen::Index rows = mc + 2 * n + 1;
        Matrix A = Matrix::Zero(rows, nz);
        Vector b(rows);
        for (Eigen::Index i = 0; i < mc; ++i) {
            A.row(i).head(n) = -der.jacobian.row(i);
            A(i, n) = 1.0;
            b[i] = e.constraints[i];
        }
        for (Eigen::Index j = 0; j < n; ++j) {
            A(mc + 2 * j, j) = 1.0;
            b[mc + 2 * j] = nlp.box.lo[j] - x[j];
            A(mc + 2 * j + 1, j) = -1.0;
            b[mc + 2 * j + 1] = x[j] - nlp.box.hi[j];
        }
        A(rows - 1, n) = 1.0;
        b[rows - 1] = 0.0;

        QpResult qp;
        try {
            qp = solve_qp(H, c, A, b);
        } catch (const UsageError&) {
            B = Matrix::Identity(n, n);
            continue;
        }
        if (qp.status == QpStatus::Infeasible) break;
        const Vector d = qp.x.head(n);
        lambda = qp.multipliers.head(mc);

        if (d.cwiseAbs().maxCoeff() <= 1e-10 * xscale) {
            stop_ok = viol <= opt.feasibility_tol;
            break;
        }
        if (mc > 0) penalty = std::max(penalty, 1.5 * lambda.cwiseAbs().maxCoeff() + 1e-3);

        double lin_viol = 0.0;
        for (Eigen::Index i = 0; i < mc; ++i)
            lin_viol += std::max(0.0, e.constraints[i] + der.jacobian.row(i).dot(d));
        double slope = der.gradient.dot(d) + penalty * (lin_viol - viol);
        if (slope >= 0.0) slope = -0.5 * d.dot(B * d);

        const double phi0 = merit(e, penalty);
        double alpha = 1.0;
        bool accepted = false;
        Vector x_new;
        NlpEval e_new;
        for (int k = 0; k < 30; ++k) {
            x_new = nlp.box.clamp(x + alpha * d);
            e_new = nlp.evaluate(x_new);
            ++rep.evals_used;
            if (merit(e_new, penalty) <= phi0 + 1e-4 * alpha * slope) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
            if (alpha * d.cwiseAbs().maxCoeff() < 1e-14 * xscale) break;
        }
        if (!accepted) {
            const bool near_stationary = d.cwiseAbs().maxCoeff() <= 1e-5 * xscale;
            if (viol <= opt.feasibility_tol && near_stationary) {
                stop_ok = true;
                break;
            }
            if (++ls_failures > 2) {
                stop_ok = viol <= opt.feasibility_tol && d.cwiseAbs().maxCoeff() <= 1e-3 * xscale;
                break;
            }
            B = Matrix::Identity(n, n);
            first_update = true;
            continue;
        }
        ls_failures = 0;

        const double f_old = e.objective;
        const Vector step = x_new - x;
        const Vector grad_lag_old = der.gradient + der.jacobian.transpose() * lambda;
        x = x_new;
        e = e_new;
        if (nlp.on_iterate) nlp.on_iterate(x, e);
        der = finite_differences(nlp, x, e);
        rep.evals_used += der.probes;

        // Damped BFGS on the Lagrangian.
        Vector y = der.gradient + der.jacobian.transpose() * lambda - grad_lag_old;
        const double sy = step.dot(y);
        if (first_update && sy > 1e-12 && y.squaredNorm() > 0.0) {
            B = Matrix::Identity(n, n) * (y.squaredNorm() / sy);
            first_update = false;
        }
        const Vector Bs = B * step;
        const double sBs = step.dot(Bs);
        if (sBs > 1e-300) {
            if (sy < 0.2 * sBs) {
                const double theta = 0.8 * sBs / (sBs - sy);
                y = theta * y + (1.0 - theta) * Bs;
            }
            const double sy2 = step.dot(y);
            if (sy2 > 1e-300) B += y * y.transpose() / sy2 - Bs * Bs.transpose() / sBs;
        }

        const double new_viol = aggregate_violation(e.constraints);
        if (new_viol > opt.feasibility_tol) {
            // Give up on linearizations that stop reducing the violation: the instance is
            // most likely infeasible from here.
            if (new_viol < best_infeasible * (1.0 - 1e-3)) {
                best_infeasible = new_viol;
                stalled = 0;
            } else if (++stalled >= 5) {
                ++rep.iterations;
                break;
            }
        }
        const bool small_step = step.cwiseAbs().maxCoeff() <= 1e-4 * xscale;
        if (new_viol <= opt.feasibility_tol && std::abs(f_old - e.objective) < opt.improvement_tol &&
            small_step) {
            stop_ok = true;
            ++rep.iterations;
            break;
        }
    }

    rep.x = x;
    rep.f = e.objective;
    rep.constraints = e.constraints;
    rep.violation = aggregate_violation(e.constraints);
    rep.converged = stop_ok && rep.violation <= opt.feasibility_tol;
    return rep;
}

}  // namespace bilevel
