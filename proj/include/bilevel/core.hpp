#pragma once

#include <Eigen/Dense>

#include <compare>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace bilevel {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

/// Every stochastic operation draws from an explicitly passed engine of this type.
using Rng = std::mt19937_64;

/// Raised for caller mistakes: bad dimensions, unknown names, invalid parameters.
class UsageError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Closed box [lo, hi] per coordinate.
struct Box {
    Vector lo;
    Vector hi;

    Box() = default;
    Box(Vector lo_, Vector hi_);
    static Box uniform(int dim, double lo, double hi);

    int dim() const { return static_cast<int>(lo.size()); }
    bool contains(const Vector& x, double tol = 0.0) const;
    Vector clamp(const Vector& x) const;
    Vector sample(Rng& rng) const;
    Vector width() const { return hi - lo; }
};

using LevelFunction = std::function<double(const Vector& xu, const Vector& xl)>;

struct KnownOptimum {
    double F_star = 0.0;
    double f_star = 0.0;
    std::optional<Vector> xu_star;
    std::optional<Vector> xl_star;
};

/// Immutable description of one bilevel instance. All constraints are in `c(xu, xl) <= 0` form.
struct BilevelProblem {
    std::string name;
    int n = 0;  // upper-level dimension
    int m = 0;  // lower-level dimension
    Box upper_box;
    Box lower_box;
    LevelFunction F;
    std::vector<LevelFunction> G;
    LevelFunction f;
    std::vector<LevelFunction> g;
    bool ll_convex = true;
    int ll_starts = 1;  // local-solver restarts at the lower level
    std::optional<KnownOptimum> known_optimum;

    /// Throws UsageError if the description is inconsistent.
    void validate() const;
};

struct EvalCounter {
    std::uint64_t ul_evals = 0;
    std::uint64_t ll_evals = 0;

    std::uint64_t total() const { return ul_evals + ll_evals; }
    friend bool operator==(const EvalCounter&, const EvalCounter&) = default;
};

enum class Level { Upper, Lower };
enum class Tag { Tag0, Tag1 };

struct UpperEval {
    double F = 0.0;
    Vector G;
    double violation = 0.0;
};

struct LowerEval {
    double f = 0.0;
    Vector g;
    double violation = 0.0;
};

/// Sum of positive parts.
double aggregate_violation(const Vector& constraint_values);

/// F and every G_k at one point; increments counter.ul_evals by exactly one.
UpperEval evaluate_upper(const BilevelProblem& problem, const Vector& xu, const Vector& xl,
                         EvalCounter& counter);

/// f and every g_j at one point; increments counter.ll_evals by exactly one.
LowerEval evaluate_lower(const BilevelProblem& problem, const Vector& xu, const Vector& xl,
                         EvalCounter& counter);

struct Individual {
    Vector xu;
    Vector xl;
    double F = 0.0;
    double f = 0.0;
    Vector G;
    Vector g;
    double ul_violation = 0.0;
    double ll_violation = 0.0;
    Tag tag = Tag::Tag0;

    void set_upper(const UpperEval& e);
    void set_lower(const LowerEval& e);
    /// Pair is feasible at both levels.
    bool feasible(double tol = 0.0) const { return ul_violation + ll_violation <= tol; }
};

/// Feasibility-first ordering: `less` means `a` is better than `b`.
///
/// At the Lower level the lower objective and lower violation are compared.
/// At the Upper level the upper objective is compared and the violation is the sum of upper and
/// lower violations, so a pair whose lower vector breaks the follower's constraints never
/// outranks a bilevel-feasible pair.
std::weak_ordering compare_deb(const Individual& a, const Individual& b, Level level);

inline bool deb_better(const Individual& a, const Individual& b, Level level) {
    return compare_deb(a, b, level) == std::weak_ordering::less;
}

/// Index of the Deb-best member; requires a non-empty span.
std::size_t deb_best_index(std::span<const Individual> pop, Level level);

/// Growing store of Tag-1 individuals used for local mapping fits.
class Archive {
public:
    explicit Archive(std::optional<std::size_t> capacity = std::nullopt) : capacity_(capacity) {}

    /// Rejects Tag-0 individuals with UsageError. When full, the oldest entry is evicted.
    void insert(const Individual& ind);

    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<Individual>& entries() const { return entries_; }

    /// Indices of the `count` entries nearest to `xu` (Euclidean, upper space);
    /// ties keep insertion order. Returns fewer when the archive is smaller.
    std::vector<std::size_t> nearest(const Vector& xu, std::size_t count) const;
    std::vector<Individual> neighbors(const Vector& xu, std::size_t count) const;

private:
    std::vector<Individual> entries_;
    std::optional<std::size_t> capacity_;
};

Vector concat(const Vector& a, const Vector& b);

}  // namespace bilevel
