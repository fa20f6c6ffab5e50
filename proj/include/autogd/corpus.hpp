#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "autogd/errors.hpp"
#include "autogd/linalg.hpp"
#include "autogd/objective.hpp"

namespace autogd::corpus {

// ---------------------------------------------------------------------------
// Single test functions. Each returns an Objective with a hand-derived gradient.

inline Objective valley() {
    return Objective(
        "valley", 2,
        [](std::span<const double> x) { return 1.0 - 1.0 / (1.0 + x[0] * x[0] + 4.0 * x[1] * x[1]); },
        [](std::span<const double> x) {
            const double q = 1.0 + x[0] * x[0] + 4.0 * x[1] * x[1];
            const double w = 1.0 / (q * q);
            return Vector{2.0 * x[0] * w, 8.0 * x[1] * w};
        },
        {2.0, 1.0}, 0.0, {-3.0, 3.0});
}

/// log(log(1 + x^2) + 1): quasi-convex with very flat tails.
inline Objective fat_tails() {
    return Objective(
        "fat_tails", 1, [](std::span<const double> x) { return std::log(std::log1p(x[0] * x[0]) + 1.0); },
        [](std::span<const double> x) {
            const double sq = x[0] * x[0];
            return Vector{2.0 * x[0] / ((1.0 + sq) * (std::log1p(sq) + 1.0))};
        },
        {1000.0}, 0.0, {-1000.0, 1000.0});
}

/// x^2 + 0.9(1 - cos(x^2)): second derivative oscillates wildly in the tails.
inline Objective oscillating() {
    return Objective(
        "oscillating", 1,
        [](std::span<const double> x) {
            const double sq = x[0] * x[0];
            return sq + 0.9 * (1.0 - std::cos(sq));
        },
        [](std::span<const double> x) { return Vector{2.0 * x[0] + 1.8 * x[0] * std::sin(x[0] * x[0])}; },
        {1000.0}, 0.0, {-30.0, 30.0});
}

namespace detail {

inline Objective even_power(std::string id, int exponent, double start, SamplingBox box) {
    return Objective(
        std::move(id), 1, [exponent](std::span<const double> x) { return std::pow(x[0], exponent); },
        [exponent](std::span<const double> x) {
            return Vector{static_cast<double>(exponent) * std::pow(x[0], exponent - 1)};
        },
        {start}, 0.0, box);
}

}  // namespace detail

/// x^20: overflows quickly in the tails and is extremely flat on (-1, 1).
inline Objective rapid_growth() { return detail::even_power("rapid_growth", 20, 100.0, {-2.0, 2.0}); }

/// sum_i 100 (x_{i+1} - x_i^2)^2 + (1 - x_i)^2
inline Objective rosenbrock(std::size_t n) {
    if (n < 2) throw UsageError("rosenbrock: dimension must be at least 2");
    Vector start(n);
    for (std::size_t i = 0; i < n; ++i) start[i] = (i % 2 == 0) ? -1.2 : 1.0;
    return Objective(
        "rosenbrock" + std::to_string(n), n,
        [](std::span<const double> x) {
            double f = 0.0;
            for (std::size_t i = 0; i + 1 < x.size(); ++i) {
                const double a = x[i + 1] - x[i] * x[i];
                const double b = 1.0 - x[i];
                f += 100.0 * a * a + b * b;
            }
            return f;
        },
        [](std::span<const double> x) {
            Vector g(x.size(), 0.0);
            for (std::size_t i = 0; i + 1 < x.size(); ++i) {
                const double a = x[i + 1] - x[i] * x[i];
                g[i] += -400.0 * x[i] * a - 2.0 * (1.0 - x[i]);
                g[i + 1] += 200.0 * a;
            }
            return g;
        },
        std::move(start), 0.0, {-2.0, 2.0});
}

inline Objective beale() {
    return Objective(
        "beale", 2,
        [](std::span<const double> v) {
            const double x = v[0], y = v[1];
            const double t1 = 1.5 - x + x * y;
            const double t2 = 2.25 - x + x * y * y;
            const double t3 = 2.625 - x + x * y * y * y;
            return t1 * t1 + t2 * t2 + t3 * t3;
        },
        [](std::span<const double> v) {
            const double x = v[0], y = v[1];
            const double t1 = 1.5 - x + x * y;
            const double t2 = 2.25 - x + x * y * y;
            const double t3 = 2.625 - x + x * y * y * y;
            return Vector{2.0 * (t1 * (y - 1.0) + t2 * (y * y - 1.0) + t3 * (y * y * y - 1.0)),
                          2.0 * x * (t1 + 2.0 * t2 * y + 3.0 * t3 * y * y)};
        },
        {1.0, 1.0}, 0.0, {-3.0, 3.0});
}

inline Objective matyas() {
    return Objective(
        "matyas", 2,
        [](std::span<const double> v) { return 0.26 * (v[0] * v[0] + v[1] * v[1]) - 0.48 * v[0] * v[1]; },
        [](std::span<const double> v) {
            return Vector{0.52 * v[0] - 0.48 * v[1], 0.52 * v[1] - 0.48 * v[0]};
        },
        {5.0, -3.0}, 0.0, {-10.0, 10.0});
}

inline Objective three_hump_camel() {
    return Objective(
        "three_hump_camel", 2,
        [](std::span<const double> v) {
            const double x = v[0], y = v[1];
            const double x2 = x * x;
            return 2.0 * x2 - 1.05 * x2 * x2 + x2 * x2 * x2 / 6.0 + x * y + y * y;
        },
        [](std::span<const double> v) {
            const double x = v[0], y = v[1];
            const double x2 = x * x;
            return Vector{4.0 * x - 4.2 * x2 * x + x2 * x2 * x + y, x + 2.0 * y};
        },
        {-0.5, 1.0}, 0.0, {-5.0, 5.0});
}

inline Objective powell_singular() {
    return Objective(
        "powell_singular", 4,
        [](std::span<const double> x) {
            const double a = x[0] + 10.0 * x[1];
            const double b = x[2] - x[3];
            const double c = x[1] - 2.0 * x[2];
            const double d = x[0] - x[3];
            return a * a + 5.0 * b * b + c * c * c * c + 10.0 * d * d * d * d;
        },
        [](std::span<const double> x) {
            const double a = x[0] + 10.0 * x[1];
            const double b = x[2] - x[3];
            const double c = x[1] - 2.0 * x[2];
            const double d = x[0] - x[3];
            const double c3 = c * c * c;
            const double d3 = d * d * d;
            return Vector{2.0 * a + 40.0 * d3, 20.0 * a + 4.0 * c3, 10.0 * b - 8.0 * c3, -10.0 * b - 40.0 * d3};
        },
        {3.0, -1.0, 0.0, 1.0}, 0.0, {-2.0, 2.0});
}

inline Objective wood() {
    return Objective(
        "wood", 4,
        [](std::span<const double> x) {
            const double a = x[0] * x[0] - x[1];
            const double b = x[2] * x[2] - x[3];
            return 100.0 * a * a + (x[0] - 1.0) * (x[0] - 1.0) + (x[2] - 1.0) * (x[2] - 1.0) + 90.0 * b * b +
                   10.1 * ((x[1] - 1.0) * (x[1] - 1.0) + (x[3] - 1.0) * (x[3] - 1.0)) +
                   19.8 * (x[1] - 1.0) * (x[3] - 1.0);
        },
        [](std::span<const double> x) {
            const double a = x[0] * x[0] - x[1];
            const double b = x[2] * x[2] - x[3];
            return Vector{400.0 * x[0] * a + 2.0 * (x[0] - 1.0),
                          -200.0 * a + 20.2 * (x[1] - 1.0) + 19.8 * (x[3] - 1.0),
                          360.0 * x[2] * b + 2.0 * (x[2] - 1.0),
                          -180.0 * b + 20.2 * (x[3] - 1.0) + 19.8 * (x[1] - 1.0)};
        },
        {-3.0, -1.0, -3.0, -1.0}, 0.0, {-2.0, 2.0});
}

/// Moré-Garbow-Hillstrom trigonometric function:
/// r_i = n - sum_j cos x_j + i (1 - cos x_i) - sin x_i, f = sum_i r_i^2 (i 1-based).
inline Objective trigonometric(std::size_t n) {
    auto residuals = [](std::span<const double> x) {
        const std::size_t m = x.size();
        double cos_sum = 0.0;
        for (double v : x) cos_sum += std::cos(v);
        Vector r(m);
        for (std::size_t i = 0; i < m; ++i)
            r[i] = static_cast<double>(m) - cos_sum + static_cast<double>(i + 1) * (1.0 - std::cos(x[i])) -
                   std::sin(x[i]);
        return r;
    };
    return Objective(
        "trigonometric" + std::to_string(n), n,
        [residuals](std::span<const double> x) { return norm_sq(residuals(x)); },
        [residuals](std::span<const double> x) {
            const Vector r = residuals(x);
            double r_sum = 0.0;
            for (double v : r) r_sum += v;
            Vector g(x.size());
            for (std::size_t j = 0; j < x.size(); ++j) {
                const double own = static_cast<double>(j + 1) * std::sin(x[j]) - std::cos(x[j]);
                g[j] = 2.0 * r_sum * std::sin(x[j]) + 2.0 * r[j] * own;
            }
            return g;
        },
        Vector(n, 1.0 / static_cast<double>(n)), 0.0, {-2.0, 2.0});
}

/// Moré-Garbow-Hillstrom variably dimensioned function:
/// sum_j (x_j - 1)^2 + s^2 + s^4 with s = sum_j j (x_j - 1).
inline Objective variably_dimensioned(std::size_t n) {
    auto weighted_sum = [](std::span<const double> x) {
        double s = 0.0;
        for (std::size_t j = 0; j < x.size(); ++j) s += static_cast<double>(j + 1) * (x[j] - 1.0);
        return s;
    };
    Vector start(n);
    for (std::size_t j = 0; j < n; ++j) start[j] = 1.0 - static_cast<double>(j + 1) / static_cast<double>(n);
    return Objective(
        "variably_dimensioned" + std::to_string(n), n,
        [weighted_sum](std::span<const double> x) {
            double f = 0.0;
            for (double v : x) f += (v - 1.0) * (v - 1.0);
            const double s = weighted_sum(x);
            const double s2 = s * s;
            return f + s2 + s2 * s2;
        },
        [weighted_sum](std::span<const double> x) {
            const double s = weighted_sum(x);
            const double outer = 2.0 * s + 4.0 * s * s * s;
            Vector g(x.size());
            for (std::size_t j = 0; j < x.size(); ++j) g[j] = 2.0 * (x[j] - 1.0) + outer * static_cast<double>(j + 1);
            return g;
        },
        std::move(start), 0.0, {-1.0, 1.0});
}

/// 0.5 * sum_i d_i x_i^2
inline Objective diagonal_quadratic(std::string id, Vector diag, Vector start) {
    if (diag.size() != start.size()) throw UsageError("diagonal_quadratic: size mismatch");
    const std::size_t n = diag.size();
    return Objective(
        std::move(id), n,
        [diag](std::span<const double> x) {
            double f = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) f += diag[i] * x[i] * x[i];
            return 0.5 * f;
        },
        [diag](std::span<const double> x) {
            Vector g(x.size());
            for (std::size_t i = 0; i < x.size(); ++i) g[i] = diag[i] * x[i];
            return g;
        },
        std::move(start), 0.0, {-10.0, 10.0});
}

/// f(x) = x^2
inline Objective square() {
    return Objective(
        "quadratic", 1, [](std::span<const double> x) { return x[0] * x[0]; },
        [](std::span<const double> x) { return Vector{2.0 * x[0]}; }, {1.0}, 0.0, {-10.0, 10.0});
}

/// log(1 + x^2): 2-smooth, not PL.
inline Objective log_quadratic() {
    return Objective(
        "log_quadratic", 1, [](std::span<const double> x) { return std::log1p(x[0] * x[0]); },
        [](std::span<const double> x) { return Vector{2.0 * x[0] / (1.0 + x[0] * x[0])}; }, {3.0}, 0.0,
        {-10.0, 10.0});
}

/// 0.5 x^T diag(1, ..., 1, 100) x in d = 10, started at norm 10.
inline Objective ill_conditioned_quadratic() {
    Vector diag(10, 1.0);
    diag.back() = 100.0;
    return diagonal_quadratic("ill_conditioned_quadratic", std::move(diag), Vector(10, std::sqrt(10.0)));
}

// ---------------------------------------------------------------------------
// Counterexample families

enum class Family { poly_divergence, limit_cycle, local_max_trap };

inline std::string_view to_string(Family f) {
    switch (f) {
        case Family::poly_divergence: return "poly_divergence";
        case Family::limit_cycle: return "limit_cycle";
        case Family::local_max_trap: return "local_max_trap";
    }
    return "unknown";
}

inline Family family_from_string(std::string_view s) {
    if (s == "poly_divergence") return Family::poly_divergence;
    if (s == "limit_cycle") return Family::limit_cycle;
    if (s == "local_max_trap") return Family::local_max_trap;
    throw UsageError("unknown counterexample family '" + std::string(s) + "'");
}

/// Parameters of a constructed counterexample; unused fields stay at 0.
struct CounterexampleParams {
    Family family = Family::poly_divergence;
    int p = 0;            ///< f = x^(2p)
    double b = 0.0;       ///< bump height
    double x_bar = 0.0;   ///< cycle anchor
    double delta = 0.0;   ///< start offset from the anchor
    double x0 = 0.0;
    double gamma0 = 0.0;
    double c = 2.0;
    double eta = 0.0;
};

/// x^(2p) with the smallest integer p >= 2 satisfying p > c(c+1) / (2 gamma0 |x0|),
/// which makes the forced-move ablation diverge.
inline CounterexampleParams make_poly_divergence(double c, double gamma0, double x0_abs) {
    if (!(c > 1.0)) throw UsageError("poly_divergence: c must exceed 1");
    if (!(gamma0 > 0.0)) throw UsageError("poly_divergence: gamma0 must be positive");
    if (!(std::abs(x0_abs) > 1.0)) throw UsageError("poly_divergence: |x0| must exceed 1");
    const double bound = c * (c + 1.0) / (2.0 * gamma0 * std::abs(x0_abs));
    const double p = std::max(2.0, std::floor(bound) + 1.0);
    if (p > 1e6) throw UsageError("poly_divergence: exponent bound too large");
    CounterexampleParams out;
    out.family = Family::poly_divergence;
    out.p = static_cast<int>(p);
    out.x0 = std::abs(x0_abs);
    out.gamma0 = gamma0;
    out.c = c;
    return out;
}

/// |x|^(7/4) + b exp(-x^2) with
///   b      = 7 xbar^(7/4) / (4 (1 - exp(-xbar^2)))
///   gamma0 = xbar^(1/4) / (7/8 - b xbar^(1/4) exp(-xbar^2))
/// and x0 = xbar + delta. With eta = 0 the iterates settle into +-xbar.
inline CounterexampleParams make_limit_cycle(double x_bar, double delta) {
    if (!(x_bar >= 1.25)) throw UsageError("limit_cycle: x_bar must be at least 5/4");
    if (!(delta > 0.0) || !std::isfinite(delta)) throw UsageError("limit_cycle: delta must be positive");
    const double decay = std::exp(-x_bar * x_bar);
    const double b = 7.0 * std::pow(x_bar, 1.75) / (4.0 * (1.0 - decay));
    const double root4 = std::pow(x_bar, 0.25);
    const double denom = 7.0 / 8.0 - b * root4 * decay;
    if (!(denom > 0.0)) throw UsageError("limit_cycle: gamma0 denominator is not positive");
    CounterexampleParams out;
    out.family = Family::limit_cycle;
    out.b = b;
    out.x_bar = x_bar;
    out.delta = delta;
    out.x0 = x_bar + delta;
    out.gamma0 = root4 / denom;
    out.c = 2.0;
    out.eta = 0.0;
    return out;
}

namespace detail {

inline double trap_gradient(double x, double b) { return 2.0 * x * (1.0 - b * std::exp(-x * x)); }

}  // namespace detail

/// x^2 + b exp(-x^2) started so that the gamma0/2 candidate lands on the local
/// maximum at 0: gamma0 = 2 x0 / f'(x0). Requires eta < 1/4 and
///   b (1 - (1 + 4 eta x0^2) exp(-x0^2)) < (1 - 4 eta) x0^2
///   x0 (1 - b exp(-x0^2)) > 0
inline CounterexampleParams make_local_max_trap(double x0, double b, double eta) {
    if (!(b > 0.0)) throw UsageError("local_max_trap: b must be positive");
    if (!(eta < 0.25)) throw UsageError("local_max_trap: eta must be below 1/4");
    const double sq = x0 * x0;
    const double decay = std::exp(-sq);
    const double lhs = b * (1.0 - (1.0 + 4.0 * eta * sq) * decay);
    const double rhs = (1.0 - 4.0 * eta) * sq;
    if (!(lhs < rhs))
        throw UsageError("local_max_trap: condition b(1-(1+4 eta x0^2)exp(-x0^2)) < (1-4 eta)x0^2 fails (" +
                         std::to_string(lhs) + " >= " + std::to_string(rhs) + ")");
    if (!(x0 * (1.0 - b * decay) > 0.0))
        throw UsageError("local_max_trap: condition x0(1 - b exp(-x0^2)) > 0 fails");
    CounterexampleParams out;
    out.family = Family::local_max_trap;
    out.b = b;
    out.x0 = x0;
    out.gamma0 = 2.0 * x0 / detail::trap_gradient(x0, b);
    out.c = 2.0;
    out.eta = eta;
    return out;
}

inline Objective make_objective(const CounterexampleParams& params) {
    switch (params.family) {
        case Family::poly_divergence:
            return autogd::corpus::detail::even_power("poly_divergence", 2 * params.p, params.x0, {-5.0, 5.0});
        case Family::limit_cycle: {
            const double b = params.b;
            return Objective(
                "limit_cycle", 1,
                [b](std::span<const double> x) {
                    return std::pow(std::abs(x[0]), 1.75) + b * std::exp(-x[0] * x[0]);
                },
                [b](std::span<const double> x) {
                    const double v = x[0];
                    const double sign = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
                    return Vector{1.75 * std::pow(std::abs(v), 0.75) * sign - 2.0 * v * b * std::exp(-v * v)};
                },
                {params.x0}, std::nullopt, {-6.0, 6.0});
        }
        case Family::local_max_trap: {
            const double b = params.b;
            // Global minima at x^2 = log b (when b > 1).
            const std::optional<double> minimum =
                b > 1.0 ? std::optional<double>(std::log(b) + 1.0) : std::optional<double>(b);
            return Objective(
                "local_max_trap", 1, [b](std::span<const double> x) { return x[0] * x[0] + b * std::exp(-x[0] * x[0]); },
                [b](std::span<const double> x) { return Vector{detail::trap_gradient(x[0], b)}; }, {params.x0},
                minimum, {-5.0, 5.0});
        }
    }
    throw UsageError("unknown counterexample family");
}

inline CounterexampleParams default_params(Family f) {
    switch (f) {
        case Family::poly_divergence: return make_poly_divergence(2.0, 1.0, 3.0);
        case Family::limit_cycle: return make_limit_cycle(5.0, 1e-3);
        case Family::local_max_trap: return make_local_max_trap(3.0, 5.0, 1e-4);
    }
    throw UsageError("unknown counterexample family");
}

// ---------------------------------------------------------------------------
// Registry

/// Every registered objective, in a fixed order. Built once; immutable.
inline const std::vector<Objective>& registry() {
    static const std::vector<Objective> all = [] {
        std::vector<Objective> v;
        v.push_back(valley());
        v.push_back(rosenbrock(2));
        v.push_back(rosenbrock(100));
        v.push_back(beale());
        v.push_back(matyas());
        v.push_back(three_hump_camel());
        v.push_back(powell_singular());
        v.push_back(wood());
        v.push_back(trigonometric(10));
        v.push_back(variably_dimensioned(10));
        v.push_back(fat_tails());
        v.push_back(oscillating());
        v.push_back(rapid_growth());
        v.push_back(make_objective(default_params(Family::poly_divergence)));
        v.push_back(make_objective(default_params(Family::limit_cycle)));
        v.push_back(make_objective(default_params(Family::local_max_trap)));
        v.push_back(square());
        v.push_back(log_quadratic());
        v.push_back(ill_conditioned_quadratic());
        return v;
    }();
    return all;
}

inline const Objective& find(std::string_view id) {
    for (const Objective& obj : registry())
        if (obj.id() == id) return obj;
    throw UsageError("unknown problem id '" + std::string(id) + "'");
}

inline std::vector<std::string> ids() {
    std::vector<std::string> out;
    for (const Objective& obj : registry()) out.push_back(obj.id());
    return out;
}

/// Named problem groups for the benchmark command.
inline std::vector<std::string> suite(std::string_view name) {
    if (name == "classical")
        return {"valley", "rosenbrock2", "rosenbrock100", "beale", "matyas", "three_hump_camel",
                "powell_singular", "wood", "trigonometric10", "variably_dimensioned10"};
    if (name == "extreme") return {"fat_tails", "oscillating", "rapid_growth"};
    if (name == "counterexamples") return {"poly_divergence", "limit_cycle", "local_max_trap"};
    if (name == "all") return ids();
    throw UsageError("unknown suite '" + std::string(name) + "'");
}

}  // namespace autogd::corpus
