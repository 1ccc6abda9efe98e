#pragma once

#include "bilevel/core.hpp"

#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace bilevel {

/// Sub-vector sizes of the SMD layout xu = (a, b), xl = (c, d).
/// |a| = p, |b| = |d| = r, |c| = q (+ s for SMD14).
struct SmdDims {
    int p = 1;
    int q = 0;
    int r = 1;
    int s = 0;

    void validate() const;
    friend bool operator==(const SmdDims&, const SmdDims&) = default;
};

/// Standard instances TP1..TP8, constraints normalized to `<= 0`.
BilevelProblem make_tp(int id);

/// TP `id` with two extra lower variables (yp, yq) in [-1, 1] that make the reaction set
/// set-valued: F + yp^2 + yq^2 and f + (yp - yq)^2.
BilevelProblem make_mtp(int id);

BilevelProblem make_smd13(const SmdDims& dims);
BilevelProblem make_smd14(const SmdDims& dims);

/// Name -> factory catalog. Built-in names: tp1..tp8, mtp1..mtp8, smd13, smd14.
class ProblemRegistry {
public:
    using Factory = std::function<BilevelProblem(const std::optional<SmdDims>&)>;

    ProblemRegistry();

    /// Adds or replaces an entry. Names are case-insensitive.
    void add(const std::string& name, Factory factory, bool needs_dims = false);

    /// Throws UsageError listing the catalog when `name` is unknown, or when an SMD name is
    /// given without dimensions.
    BilevelProblem lookup(const std::string& name,
                          const std::optional<SmdDims>& dims = std::nullopt) const;

    bool contains(const std::string& name) const;
    bool needs_dims(const std::string& name) const;
    std::vector<std::string> names() const;

private:
    struct Entry {
        Factory factory;
        bool needs_dims = false;
    };
    std::map<std::string, Entry> entries_;
};

/// Lookup in a registry holding only the built-in catalog.
BilevelProblem registry_lookup(const std::string& name,
                               const std::optional<SmdDims>& dims = std::nullopt);

/// Parses "p,q,r" or "p,q,r,s".
SmdDims parse_smd_dims(const std::string& text);

}  // namespace bilevel
