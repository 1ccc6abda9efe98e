#include "bilevel/qp.hpp"

#include <cmath>
#include <limits>
#include <vector>

namespace bilevel {

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

// Invariant: J' * N_active = [R; 0], with J J' = H^{-1}.
struct Factorization {
    Matrix J;
    Matrix R;
    int q = 0;

    // Zero d[q+1..] with rotations on columns of J, then append d[0..q] to R.
    bool add(Vector d) {
        const Eigen::Index n = J.rows();
        for (Eigen::Index j = n - 1; j > q; --j) {
            const double a = d[j - 1], b = d[j];
            if (b == 0.0) continue;
            const double h = std::hypot(a, b);
            const double c = a / h, s = b / h;
            d[j - 1] = h;
            d[j] = 0.0;
            const Vector cj1 = J.col(j - 1), cj = J.col(j);
            J.col(j - 1) = c * cj1 + s * cj;
            J.col(j) = -s * cj1 + c * cj;
        }
        if (std::abs(d[q]) <= 1e-13 * (1.0 + d.head(q + 1).norm())) return false;
        R.col(q).head(q + 1) = d.head(q + 1);
        ++q;
        return true;
    }

    // Remove active column l and restore the triangle with row rotations.
    void drop(int l) {
        for (int k = l; k + 1 < q; ++k) R.col(k).head(q) = R.col(k + 1).head(q);
        R.col(q - 1).setZero();
        --q;
        for (int j = l; j < q; ++j) {
            const double a = R(j, j), b = R(j + 1, j);
            if (b == 0.0) continue;
            const double h = std::hypot(a, b);
            const double c = a / h, s = b / h;
            for (int k = j; k < q; ++k) {
                const double r1 = R(j, k), r2 = R(j + 1, k);
                R(j, k) = c * r1 + s * r2;
                R(j + 1, k) = -s * r1 + c * r2;
            }
            const Vector cj = J.col(j), cj1 = J.col(j + 1);
            J.col(j) = c * cj + s * cj1;
            J.col(j + 1) = -s * cj + c * cj1;
        }
    }
};

}  // namespace

QpResult solve_qp(const Matrix& H, const Vector& c, const Matrix& A, const Vector& b) {
    const Eigen::Index n = H.rows();
    const Eigen::Index mc = A.rows();
    if (H.cols() != n || c.size() != n || A.cols() != n || b.size() != mc)
        throw UsageError("solve_qp: inconsistent dimensions");

    Eigen::LLT<Matrix> llt(H);
    if (llt.info() != Eigen::Success) throw UsageError("solve_qp: Hessian is not positive definite");

    Factorization fz;
    // J = L^{-T}
    fz.J = llt.matrixU().solve(Matrix::Identity(n, n));
    fz.R = Matrix::Zero(n, n);

    QpResult res;
    res.x = -llt.solve(c);
    res.multipliers = Vector::Zero(mc);

    std::vector<int> active;
    std::vector<double> u;
    std::vector<char> is_active(static_cast<std::size_t>(mc), 0);
    const int max_iter = static_cast<int>(10 * (n + mc) + 50);

    const double scale = 1.0 + c.cwiseAbs().maxCoeff() + (mc ? b.cwiseAbs().maxCoeff() : 0.0);
    const double tol = 1e-12 * scale;

    while (res.iterations < max_iter) {
        ++res.iterations;
        // Step 1: most violated inactive constraint.
        int p = -1;
        double worst = -tol;
        for (Eigen::Index i = 0; i < mc; ++i) {
            if (is_active[static_cast<std::size_t>(i)]) continue;
            const double si = (A.row(i).dot(res.x) - b[i]) / (1.0 + A.row(i).norm());
            if (si < worst) {
                worst = si;
                p = static_cast<int>(i);
            }
        }
        if (p < 0) break;

        const Vector np = A.row(p).transpose();
        std::vector<double> u_plus = u;
        u_plus.push_back(0.0);

        bool added = false;
        while (!added) {
            if (res.iterations++ > max_iter) {
                res.status = QpStatus::IterationLimit;
                break;
            }
            const Vector d = fz.J.transpose() * np;
            const int q = fz.q;
            const Vector z = fz.J.rightCols(n - q) * d.tail(n - q);
            Vector r = Vector::Zero(q);
            if (q > 0)
                r = fz.R.topLeftCorner(q, q).triangularView<Eigen::Upper>().solve(d.head(q));

            // Partial (dual) step.
            double t1 = kInf;
            int l = -1;
            for (int k = 0; k < q; ++k) {
                if (r[k] > 0.0 && u_plus[static_cast<std::size_t>(k)] / r[k] < t1) {
                    t1 = u_plus[static_cast<std::size_t>(k)] / r[k];
                    l = k;
                }
            }
            // Full (primal) step.
            double t2 = kInf;
            const double zn = z.dot(np);
            if (z.norm() > 1e-14 * (1.0 + np.norm()) && zn > 0.0) {
                const double sp = np.dot(res.x) - b[p];
                t2 = std::max(0.0, -sp / zn);
            }
            const double t = std::min(t1, t2);
            if (!std::isfinite(t)) {
                res.status = QpStatus::Infeasible;
                break;
            }
            for (int k = 0; k < q; ++k) u_plus[static_cast<std::size_t>(k)] -= t * r[k];
            u_plus[static_cast<std::size_t>(q)] += t;

            if (!std::isfinite(t2)) {
                // Pure dual step: drop the blocking constraint and retry the same p.
                is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(l)])] = 0;
                active.erase(active.begin() + l);
                u_plus.erase(u_plus.begin() + l);
                fz.drop(l);
                continue;
            }
            res.x += t * z;
            if (t2 <= t1) {
                if (!fz.add(fz.J.transpose() * np)) {
                    // Numerically dependent; treat the constraint as satisfied.
                    u_plus.pop_back();
                    u = u_plus;
                    is_active[static_cast<std::size_t>(p)] = 1;
                    break;
                }
                active.push_back(p);
                is_active[static_cast<std::size_t>(p)] = 1;
                u = u_plus;
                added = true;
            } else {
                is_active[static_cast<std::size_t>(active[static_cast<std::size_t>(l)])] = 0;
                active.erase(active.begin() + l);
                u_plus.erase(u_plus.begin() + l);
                fz.drop(l);
            }
        }
        if (res.status != QpStatus::Optimal) break;
    }
    if (res.iterations >= max_iter && res.status == QpStatus::Optimal) {
        // Only an issue if something is still violated.
        for (Eigen::Index i = 0; i < mc; ++i)
            if (A.row(i).dot(res.x) - b[i] < -1e-8 * scale) res.status = QpStatus::IterationLimit;
    }
    for (std::size_t k = 0; k < active.size() && k < u.size(); ++k)
        res.multipliers[active[k]] = u[k];
    res.objective = 0.5 * res.x.dot(H * res.x) + c.dot(res.x);
    return res;
}

}  // namespace bilevel
