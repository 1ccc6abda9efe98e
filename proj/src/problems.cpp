#include "bilevel/problems.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numbers>
#include <sstream>

namespace bilevel {

namespace {

constexpr double kOneSidedUpper = 100.0;

Box box2(double lo, double hi) { return Box::uniform(2, lo, hi); }

BilevelProblem tp1() {
    BilevelProblem p;
    p.name = "tp1";
    p.n = 2;
    p.m = 2;
    p.upper_box = box2(0.0, 50.0);
    p.lower_box = box2(0.0, 10.0);
    p.F = [](const Vector& x, const Vector& y) {
        return std::pow(x[0] - 30.0, 2) + std::pow(x[1] - 20.0, 2) - 20.0 * y[0] + 20.0 * y[1];
    };
    p.G = {
        [](const Vector& x, const Vector&) { return 30.0 - x[0] - 2.0 * x[1]; },
        [](const Vector& x, const Vector&) { return x[0] + x[1] - 25.0; },
        [](const Vector& x, const Vector&) { return x[1] - 15.0; },
    };
    p.f = [](const Vector& x, const Vector& y) {
        return std::pow(x[0] - y[0], 2) + std::pow(x[1] - y[1], 2);
    };
    p.known_optimum = KnownOptimum{225.0, 100.0, std::nullopt, std::nullopt};
    return p;
}

// TP2 and TP8 share the lower level.
double tp2_lower(const Vector& x, const Vector& y) {
    return std::pow(y[0] - x[0] + 20.0, 2) + std::pow(y[1] - x[1] + 20.0, 2);
}

std::vector<LevelFunction> tp2_lower_constraints() {
    return {
        [](const Vector& x, const Vector& y) { return 2.0 * y[0] - x[0] + 10.0; },
        [](const Vector& x, const Vector& y) { return 2.0 * y[1] - x[1] + 10.0; },
    };
}

double tp2_upper_linear(const Vector& x, const Vector& y) {
    return 2.0 * x[0] + 2.0 * x[1] - 3.0 * y[0] - 3.0 * y[1] - 60.0;
}

BilevelProblem tp2() {
    BilevelProblem p;
    p.name = "tp2";
    p.n = 2;
    p.m = 2;
    p.upper_box = box2(0.0, 50.0);
    p.lower_box = box2(-10.0, 20.0);
    p.F = tp2_upper_linear;
    p.G = {[](const Vector& x, const Vector& y) { return x[0] + x[1] + y[0] - 2.0 * y[1] - 40.0; }};
    p.f = tp2_lower;
    p.g = tp2_lower_constraints();
    p.known_optimum = KnownOptimum{0.0, 100.0, std::nullopt, std::nullopt};
    return p;
}

BilevelProblem tp3() {
    BilevelProblem p;
    p.name = "tp3";
    p.n = 2;
    p.m = 2;
    p.upper_box = box2(0.0, kOneSidedUpper);
    p.lower_box = box2(0.0, kOneSidedUpper);
    p.F = [](const Vector& x, const Vector& y) {
        return -x[0] * x[0] - 3.0 * x[1] * x[1] - 4.0 * y[0] + y[1] * y[1];
    };
    p.G = {[](const Vector& x, const Vector&) { return x[0] * x[0] + 2.0 * x[1] - 4.0; }};
    p.f = [](const Vector& x, const Vector& y) {
        return 2.0 * x[0] * x[0] + y[0] * y[0] - 5.0 * y[1];
    };
    p.g = {
        [](const Vector& x, const Vector& y) {
            return -(x[0] * x[0] - 2.0 * x[0] + x[1] * x[1] - 2.0 * y[0] + y[1] + 3.0);
        },
        [](const Vector& x, const Vector& y) { return 4.0 - x[1] - 3.0 * y[0] + 4.0 * y[1]; },
    };
    p.known_optimum = KnownOptimum{-18.6787, -1.0156, std::nullopt, std::nullopt};
    return p;
}

BilevelProblem tp4() {
    BilevelProblem p;
    p.name = "tp4";
    p.n = 2;
    p.m = 3;
    p.upper_box = box2(0.0, kOneSidedUpper);
    p.lower_box = Box::uniform(3, 0.0, kOneSidedUpper);
    p.F = [](const Vector& x, const Vector& y) {
        return -8.0 * x[0] - 4.0 * x[1] + 4.0 * y[0] - 40.0 * y[1] - 4.0 * y[2];
    };
    p.f = [](const Vector& x, const Vector& y) {
        return x[0] + 2.0 * x[1] + y[0] + y[1] + 2.0 * y[2];
    };
    p.g = {
        [](const Vector&, const Vector& y) { return y[1] + y[2] - y[0] - 1.0; },
        [](const Vector& x, const Vector& y) {
            return 2.0 * x[0] - y[0] + 2.0 * y[1] - 0.5 * y[2] - 1.0;
        },
        [](const Vector& x, const Vector& y) {
            return 2.0 * x[1] + 2.0 * y[0] - y[1] - 0.5 * y[2] - 1.0;
        },
    };
    p.known_optimum = KnownOptimum{-29.2, 3.2, std::nullopt, std::nullopt};
    return p;
}

BilevelProblem tp5() {
    BilevelProblem p;
    p.name = "tp5";
    p.n = 2;
    p.m = 2;
    p.upper_box = box2(0.0, kOneSidedUpper);
    p.lower_box = box2(0.0, kOneSidedUpper);
    constexpr double r = 0.1;
    p.F = [](const Vector& x, const Vector& y) {
        return r * x.squaredNorm() - 3.0 * y[0] - 4.0 * y[1] + 0.5 * y.squaredNorm();
    };
    p.f = [](const Vector& x, const Vector& y) {
        // h = [[1, 3], [3, 10]], b(x) = [[-1, 2], [3, -3]] x
        const double quad = y[0] * y[0] + 6.0 * y[0] * y[1] + 10.0 * y[1] * y[1];
        const double b0 = -x[0] + 2.0 * x[1];
        const double b1 = 3.0 * x[0] - 3.0 * x[1];
        return 0.5 * quad + b0 * y[0] + b1 * y[1];
    };
    p.g = {
        [](const Vector&, const Vector& y) { return -0.333 * y[0] + y[1] - 2.0; },
        [](const Vector&, const Vector& y) { return y[0] - 0.333 * y[1] - 2.0; },
    };
    p.known_optimum = KnownOptimum{-3.6, -2.0, std::nullopt, std::nullopt};
    return p;
}

BilevelProblem tp6() {
    BilevelProblem p;
    p.name = "tp6";
    p.n = 1;
    p.m = 2;
    p.upper_box = Box::uniform(1, 0.0, kOneSidedUpper);
    p.lower_box = box2(0.0, kOneSidedUpper);
    p.F = [](const Vector& x, const Vector& y) {
        return std::pow(x[0] - 1.0, 2) + 2.0 * y[0] - 2.0 * x[0];
    };
    p.f = [](const Vector& x, const Vector& y) {
        return std::pow(2.0 * y[0] - 4.0, 2) + std::pow(2.0 * y[1] - 1.0, 2) + x[0] * y[0];
    };
    p.g = {
        [](const Vector& x, const Vector& y) { return 4.0 * x[0] + 5.0 * y[0] + 4.0 * y[1] - 12.0; },
        [](const Vector& x, const Vector& y) { return 4.0 * y[1] - 4.0 * x[0] - 5.0 * y[0] + 4.0; },
        [](const Vector& x, const Vector& y) { return 4.0 * x[0] - 4.0 * y[0] + 5.0 * y[1] - 4.0; },
        [](const Vector& x, const Vector& y) { return 4.0 * y[0] - 4.0 * x[0] + 5.0 * y[1] - 4.0; },
    };
    p.known_optimum = KnownOptimum{-1.2091, 7.6145, std::nullopt, std::nullopt};
    return p;
}

double tp7_ratio(const Vector& x, const Vector& y) {
    return (x[0] + y[0]) * (x[1] + y[1]) / (1.0 + x[0] * y[0] + x[1] * y[1]);
}

BilevelProblem tp7() {
    BilevelProblem p;
    p.name = "tp7";
    p.n = 2;
    p.m = 2;
    p.upper_box = box2(0.0, kOneSidedUpper);
    p.lower_box = box2(0.0, 10.0);
    p.F = [](const Vector& x, const Vector& y) { return -tp7_ratio(x, y); };
    p.G = {
        [](const Vector& x, const Vector&) { return x.squaredNorm() - 100.0; },
        [](const Vector& x, const Vector&) { return x[0] - x[1]; },
    };
    p.f = tp7_ratio;
    // 0 <= y_i <= x_i
    p.g = {
        [](const Vector& x, const Vector& y) { return y[0] - x[0]; },
        [](const Vector& x, const Vector& y) { return y[1] - x[1]; },
    };
    p.ll_starts = 3;
    p.known_optimum = KnownOptimum{-1.96, 1.96, std::nullopt, std::nullopt};
    return p;
}

BilevelProblem tp8() {
    BilevelProblem p = tp2();
    p.name = "tp8";
    p.F = [](const Vector& x, const Vector& y) { return std::abs(tp2_upper_linear(x, y)); };
    return p;
}

std::string lowercase(std::string s) {
    std::transform(s.begin(), s.end(), s.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return s;
}

}  // namespace

void SmdDims::validate() const {
    if (p < 1 || r < 1 || q < 0 || s < 0)
        throw UsageError("SMD dimensions need p >= 1, r >= 1, q >= 0, s >= 0");
}

BilevelProblem make_tp(int id) {
    switch (id) {
        case 1: return tp1();
        case 2: return tp2();
        case 3: return tp3();
        case 4: return tp4();
        case 5: return tp5();
        case 6: return tp6();
        case 7: return tp7();
        case 8: return tp8();
        default: throw UsageError("TP id must be in 1..8, got " + std::to_string(id));
    }
}

BilevelProblem make_mtp(int id) {
    BilevelProblem base = make_tp(id);
    BilevelProblem p = base;
    const int mb = base.m;
    p.name = "mtp" + std::to_string(id);
    p.m = mb + 2;
    Vector lo(p.m), hi(p.m);
    lo << base.lower_box.lo, -1.0, -1.0;
    hi << base.lower_box.hi, 1.0, 1.0;
    p.lower_box = Box(lo, hi);

    auto wrap = [mb](LevelFunction fn) -> LevelFunction {
        return [fn = std::move(fn), mb](const Vector& x, const Vector& y) {
            return fn(x, y.head(mb));
        };
    };
    p.F = [F = base.F, mb](const Vector& x, const Vector& y) {
        const double yp = y[mb], yq = y[mb + 1];
        return F(x, y.head(mb)) + yp * yp + yq * yq;
    };
    p.f = [f = base.f, mb](const Vector& x, const Vector& y) {
        const double d = y[mb] - y[mb + 1];
        return f(x, y.head(mb)) + d * d;
    };
    p.G.clear();
    for (auto& G : base.G) p.G.push_back(wrap(G));
    p.g.clear();
    for (auto& g : base.g) p.g.push_back(wrap(g));
    return p;
}

namespace {

double smd_f1_upper(const Vector& a) {
    const Eigen::Index p = a.size();
    double v = std::pow(a[0] - 1.0, 2);
    for (Eigen::Index i = 0; i + 1 < p; ++i)
        v += std::pow(a[i] - 1.0, 2) + std::pow(a[i + 1] - a[i] * a[i], 2);
    return v;
}

// sum_{i=1}^{len} sum_{j=1}^{i} v_j^2
double nested_square_sum(const Vector& v) {
    double total = 0.0, running = 0.0;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        running += v[i] * v[i];
        total += running;
    }
    return total;
}

constexpr double kSmd13MinD = 1e-6;

}  // namespace

BilevelProblem make_smd13(const SmdDims& dims) {
    dims.validate();
    const int p = dims.p, q = dims.q, r = dims.r;
    BilevelProblem prob;
    prob.name = "smd13";
    prob.n = p + r;
    prob.m = q + r;
    Vector ulo(prob.n), uhi(prob.n), llo(prob.m), lhi(prob.m);
    ulo << Vector::Constant(p, -5.0), Vector::Constant(r, -5.0);
    uhi << Vector::Constant(p, 10.0), Vector::Constant(r, std::numbers::e);
    llo << Vector::Constant(q, -5.0), Vector::Constant(r, kSmd13MinD);
    lhi << Vector::Constant(q, 10.0), Vector::Constant(r, 10.0);
    prob.upper_box = Box(ulo, uhi);
    prob.lower_box = Box(llo, lhi);

    auto log_gap = [r](const Vector& b, const Vector& d) {
        double v = 0.0;
        for (int i = 0; i < r; ++i) v += std::pow(b[i] - std::log(std::max(d[i], kSmd13MinD)), 2);
        return v;
    };
    prob.F = [=](const Vector& xu, const Vector& xl) {
        const Vector a = xu.head(p), b = xu.tail(r);
        const Vector c = xl.head(q), d = xl.tail(r);
        return smd_f1_upper(a) - nested_square_sum(c) + nested_square_sum(b) - log_gap(b, d);
    };
    prob.f = [=](const Vector& xu, const Vector& xl) {
        const Vector a = xu.head(p), b = xu.tail(r);
        const Vector c = xl.head(q), d = xl.tail(r);
        double f1 = 0.0;
        for (int i = 0; i < p; ++i) f1 += std::abs(a[i]) + 2.0 * std::abs(std::sin(a[i]));
        return f1 + nested_square_sum(c) + log_gap(b, d);
    };
    prob.ll_convex = false;

    Vector xu_star(prob.n), xl_star(prob.m);
    xu_star << Vector::Ones(p), Vector::Zero(r);
    xl_star << Vector::Zero(q), Vector::Ones(r);
    prob.known_optimum =
        KnownOptimum{0.0, p * (1.0 + 2.0 * std::sin(1.0)), xu_star, xl_star};
    return prob;
}

BilevelProblem make_smd14(const SmdDims& dims) {
    dims.validate();
    const int p = dims.p, q = dims.q, r = dims.r, s = dims.s;
    BilevelProblem prob;
    prob.name = "smd14";
    prob.n = p + r;
    prob.m = q + s + r;
    prob.upper_box = Box::uniform(prob.n, -5.0, 10.0);
    prob.lower_box = Box::uniform(prob.m, -5.0, 10.0);

    prob.F = [=](const Vector& xu, const Vector& xl) {
        const Vector a = xu.head(p), b = xu.tail(r);
        const Vector c = xl.head(q + s), d = xl.tail(r);
        double F2 = 0.0;
        for (int i = 0; i < q; ++i) F2 -= std::pow(std::abs(c[i]), i + 2);
        for (int i = q; i < q + s; ++i) F2 += c[i] * c[i];
        double F3 = 0.0;
        for (int i = 0; i < r; ++i) F3 += (i + 1) * b[i] * b[i] - std::abs(d[i]);
        return smd_f1_upper(a) + F2 + F3;
    };
    prob.f = [=](const Vector& xu, const Vector& xl) {
        const Vector a = xu.head(p), b = xu.tail(r);
        const Vector c = xl.head(q + s), d = xl.tail(r);
        double f1 = 0.0;
        for (int i = 0; i < p; ++i) f1 += std::floor(a[i]);
        double f2 = 0.0;
        for (int i = 0; i < q; ++i) f2 += std::pow(std::abs(c[i]), i + 2);
        // adjacent pairs (c_{i+1} - c_i)^2 for i = q+1, q+3, ..., q+s-1 (1-based)
        for (int i = q; i + 1 < q + s; i += 2) f2 += std::pow(c[i + 1] - c[i], 2);
        double f3 = 0.0;
        for (int i = 0; i < r; ++i) f3 += std::abs(b[i] * b[i] - d[i] * d[i]);
        return f1 + f2 + f3;
    };
    prob.ll_convex = false;

    // F3 restricted to |d_i| = |b_i| is i*b^2 - |b|, minimized at |b| = 1/(2i).
    Vector xu_star(prob.n), xl_star(prob.m);
    Vector b_star(r);
    double F_star = 0.0;
    for (int i = 0; i < r; ++i) {
        b_star[i] = 1.0 / (2.0 * (i + 1));
        F_star -= 1.0 / (4.0 * (i + 1));
    }
    xu_star << Vector::Ones(p), b_star;
    xl_star << Vector::Zero(q + s), b_star;
    prob.known_optimum = KnownOptimum{F_star, static_cast<double>(p), xu_star, xl_star};
    return prob;
}

ProblemRegistry::ProblemRegistry() {
    for (int id = 1; id <= 8; ++id) {
        add("tp" + std::to_string(id), [id](const std::optional<SmdDims>&) { return make_tp(id); });
        add("mtp" + std::to_string(id),
            [id](const std::optional<SmdDims>&) { return make_mtp(id); });
    }
    add("smd13", [](const std::optional<SmdDims>& d) { return make_smd13(*d); }, true);
    add("smd14", [](const std::optional<SmdDims>& d) { return make_smd14(*d); }, true);
}

void ProblemRegistry::add(const std::string& name, Factory factory, bool needs_dims) {
    entries_[lowercase(name)] = Entry{std::move(factory), needs_dims};
}

bool ProblemRegistry::contains(const std::string& name) const {
    return entries_.count(lowercase(name)) > 0;
}

bool ProblemRegistry::needs_dims(const std::string& name) const {
    auto it = entries_.find(lowercase(name));
    return it != entries_.end() && it->second.needs_dims;
}

std::vector<std::string> ProblemRegistry::names() const {
    std::vector<std::string> out;
    for (const auto& [name, entry] : entries_) out.push_back(name);
    return out;
}

BilevelProblem ProblemRegistry::lookup(const std::string& name,
                                       const std::optional<SmdDims>& dims) const {
    auto it = entries_.find(lowercase(name));
    if (it == entries_.end()) {
        std::string catalog;
        for (const auto& n : names()) catalog += (catalog.empty() ? "" : ", ") + n;
        throw UsageError("unknown problem '" + name + "'; available: " + catalog);
    }
    if (it->second.needs_dims && !dims)
        throw UsageError("problem '" + name + "' requires dimensions p,q,r[,s]");
    BilevelProblem prob = it->second.factory(dims);
    prob.validate();
    return prob;
}

BilevelProblem registry_lookup(const std::string& name, const std::optional<SmdDims>& dims) {
    static const ProblemRegistry builtin;
    return builtin.lookup(name, dims);
}

SmdDims parse_smd_dims(const std::string& text) {
    std::vector<int> parts;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t used = 0;
            const int v = std::stoi(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            parts.push_back(v);
        } catch (const std::exception&) {
            throw UsageError("bad dimension list '" + text + "' (expected p,q,r[,s])");
        }
    }
    if (parts.size() != 3 && parts.size() != 4)
        throw UsageError("bad dimension list '" + text + "' (expected p,q,r[,s])");
    SmdDims d{parts[0], parts[1], parts[2], parts.size() == 4 ? parts[3] : 0};
    d.validate();
    return d;
}

}  // namespace bilevel
