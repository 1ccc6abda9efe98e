#include "bilevel/core.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace bilevel {

Box::Box(Vector lo_, Vector hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size()) throw UsageError("box bounds have different lengths");
    for (Eigen::Index i = 0; i < lo.size(); ++i) {
        if (!std::isfinite(lo[i]) || !std::isfinite(hi[i]) || lo[i] > hi[i])
            throw UsageError("box bound " + std::to_string(i) + " is not a finite interval");
    }
}

Box Box::uniform(int dim, double lo, double hi) {
    return Box(Vector::Constant(dim, lo), Vector::Constant(dim, hi));
}

bool Box::contains(const Vector& x, double tol) const {
    if (x.size() != lo.size()) return false;
    for (Eigen::Index i = 0; i < x.size(); ++i)
        if (x[i] < lo[i] - tol || x[i] > hi[i] + tol) return false;
    return true;
}

Vector Box::clamp(const Vector& x) const { return x.cwiseMax(lo).cwiseMin(hi); }

Vector Box::sample(Rng& rng) const {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Vector x(lo.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) x[i] = lo[i] + u(rng) * (hi[i] - lo[i]);
    return x;
}

void BilevelProblem::validate() const {
    if (n < 1 || m < 1) throw UsageError(name + ": dimensions must be positive");
    if (upper_box.dim() != n || lower_box.dim() != m)
        throw UsageError(name + ": bounds do not match dimensions");
    if (!F || !f) throw UsageError(name + ": missing objective");
    if (ll_starts < 1) throw UsageError(name + ": ll_starts must be >= 1");
}

double aggregate_violation(const Vector& c) {
    double v = 0.0;
    for (Eigen::Index i = 0; i < c.size(); ++i) v += std::max(0.0, c[i]);
    return v;
}

namespace {

void check_dims(const BilevelProblem& p, const Vector& xu, const Vector& xl) {
    if (xu.size() != p.n || xl.size() != p.m)
        throw UsageError(p.name + ": expected (" + std::to_string(p.n) + ", " +
                         std::to_string(p.m) + ") variables, got (" + std::to_string(xu.size()) +
                         ", " + std::to_string(xl.size()) + ")");
}

}  // namespace

UpperEval evaluate_upper(const BilevelProblem& p, const Vector& xu, const Vector& xl,
                         EvalCounter& counter) {
    check_dims(p, xu, xl);
    UpperEval e;
    e.F = p.F(xu, xl);
    e.G.resize(static_cast<Eigen::Index>(p.G.size()));
    for (std::size_t k = 0; k < p.G.size(); ++k) e.G[static_cast<Eigen::Index>(k)] = p.G[k](xu, xl);
    e.violation = aggregate_violation(e.G);
    ++counter.ul_evals;
    return e;
}

LowerEval evaluate_lower(const BilevelProblem& p, const Vector& xu, const Vector& xl,
                         EvalCounter& counter) {
    check_dims(p, xu, xl);
    LowerEval e;
    e.f = p.f(xu, xl);
    e.g.resize(static_cast<Eigen::Index>(p.g.size()));
    for (std::size_t j = 0; j < p.g.size(); ++j) e.g[static_cast<Eigen::Index>(j)] = p.g[j](xu, xl);
    e.violation = aggregate_violation(e.g);
    ++counter.ll_evals;
    return e;
}

void Individual::set_upper(const UpperEval& e) {
    F = e.F;
    G = e.G;
    ul_violation = e.violation;
}

void Individual::set_lower(const LowerEval& e) {
    f = e.f;
    g = e.g;
    ll_violation = e.violation;
}

namespace {

// NaN objectives rank behind every number.
std::weak_ordering compare_values(double a, double b) {
    const bool na = std::isnan(a), nb = std::isnan(b);
    if (na || nb) {
        if (na && nb) return std::weak_ordering::equivalent;
        return na ? std::weak_ordering::greater : std::weak_ordering::less;
    }
    if (a < b) return std::weak_ordering::less;
    if (a > b) return std::weak_ordering::greater;
    return std::weak_ordering::equivalent;
}

}  // namespace

std::weak_ordering compare_deb(const Individual& a, const Individual& b, Level level) {
    const double va = level == Level::Upper ? a.ul_violation + a.ll_violation : a.ll_violation;
    const double vb = level == Level::Upper ? b.ul_violation + b.ll_violation : b.ll_violation;
    const bool fa = va <= 0.0, fb = vb <= 0.0;
    if (fa != fb) return fa ? std::weak_ordering::less : std::weak_ordering::greater;
    if (!fa) return compare_values(va, vb);
    return level == Level::Upper ? compare_values(a.F, b.F) : compare_values(a.f, b.f);
}

std::size_t deb_best_index(std::span<const Individual> pop, Level level) {
    if (pop.empty()) throw UsageError("deb_best_index: empty population");
    std::size_t best = 0;
    for (std::size_t i = 1; i < pop.size(); ++i)
        if (deb_better(pop[i], pop[best], level)) best = i;
    return best;
}

void Archive::insert(const Individual& ind) {
    if (ind.tag != Tag::Tag1) throw UsageError("archive accepts Tag-1 members only");
    if (capacity_ && *capacity_ == 0) return;
    if (capacity_ && entries_.size() >= *capacity_) entries_.erase(entries_.begin());
    entries_.push_back(ind);
}

std::vector<std::size_t> Archive::nearest(const Vector& xu, std::size_t count) const {
    std::vector<std::size_t> idx(entries_.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    std::vector<double> dist(entries_.size());
    for (std::size_t i = 0; i < entries_.size(); ++i) dist[i] = (entries_[i].xu - xu).squaredNorm();
    count = std::min(count, idx.size());
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return dist[a] < dist[b]; });
    idx.resize(count);
    return idx;
}

std::vector<Individual> Archive::neighbors(const Vector& xu, std::size_t count) const {
    std::vector<Individual> out;
    for (std::size_t i : nearest(xu, count)) out.push_back(entries_[i]);
    return out;
}

Vector concat(const Vector& a, const Vector& b) {
    Vector out(a.size() + b.size());
    out << a, b;
    return out;
}

}  // namespace bilevel
