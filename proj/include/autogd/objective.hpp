#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "autogd/errors.hpp"
#include "autogd/linalg.hpp"

namespace autogd {

using ValueFn = std::function<double(std::span<const double>)>;
using GradientFn = std::function<Vector(std::span<const double>)>;

/// Axis-aligned box used for random gradient checks and N(0,1) starts.
struct SamplingBox {
    double lower = -2.0;
    double upper = 2.0;
};

/// A differentiable objective with an analytic gradient.
///
/// Objectives are immutable once built and may be evaluated concurrently;
/// evaluation accounting lives in EvalCounter, which each run owns.
/// The value function may return Inf/NaN (overflowing polynomials); that is
/// a legal result, not an error.
class Objective {
public:
    Objective(std::string id, std::size_t dimension, ValueFn value, GradientFn gradient,
              Vector suggested_start, std::optional<double> known_minimum = std::nullopt,
              SamplingBox box = {})
        : id_(std::move(id)),
          dimension_(dimension),
          value_(std::move(value)),
          gradient_(std::move(gradient)),
          suggested_start_(std::move(suggested_start)),
          known_minimum_(known_minimum),
          box_(box) {
        if (dimension_ == 0) throw UsageError("objective '" + id_ + "': dimension must be positive");
        if (suggested_start_.size() != dimension_)
            throw UsageError("objective '" + id_ + "': suggested start has wrong dimension");
    }

    const std::string& id() const noexcept { return id_; }
    std::size_t dimension() const noexcept { return dimension_; }
    const Vector& suggested_start() const noexcept { return suggested_start_; }
    std::optional<double> known_minimum() const noexcept { return known_minimum_; }
    SamplingBox sampling_box() const noexcept { return box_; }

    /// Uncounted evaluation; prefer the counted free functions inside optimizers.
    double value(std::span<const double> x) const {
        check_dimension(x);
        return value_(x);
    }

    Vector gradient(std::span<const double> x) const {
        check_dimension(x);
        Vector g = gradient_(x);
        if (g.size() != dimension_)
            throw UsageError("objective '" + id_ + "': gradient returned wrong dimension");
        return g;
    }

    /// Same objective with its gradient replaced; used to build deliberately
    /// broken fixtures for gradient-check negative tests.
    Objective with_gradient(GradientFn gradient) const {
        Objective copy = *this;
        copy.gradient_ = std::move(gradient);
        return copy;
    }

private:
    void check_dimension(std::span<const double> x) const {
        if (x.size() != dimension_)
            throw UsageError("objective '" + id_ + "': expected dimension " + std::to_string(dimension_) +
                             ", got " + std::to_string(x.size()));
    }

    std::string id_;
    std::size_t dimension_;
    ValueFn value_;
    GradientFn gradient_;
    Vector suggested_start_;
    std::optional<double> known_minimum_;
    SamplingBox box_;
};

/// Function and gradient evaluation counts for one run.
struct EvalCounter {
    std::uint64_t n_f = 0;
    std::uint64_t n_g = 0;

    friend bool operator==(const EvalCounter&, const EvalCounter&) = default;
};

inline double evaluate(const Objective& obj, std::span<const double> x, EvalCounter& counter) {
    double v = obj.value(x);
    ++counter.n_f;
    return v;
}

inline Vector gradient(const Objective& obj, std::span<const double> x, EvalCounter& counter) {
    Vector g = obj.gradient(x);
    ++counter.n_g;
    return g;
}

/// Default central-difference step for gradient validation.
inline constexpr double kGradientCheckStep = 1e-6;

struct GradientCheck {
    double max_relative_error = 0.0;
    /// Set when a central difference hit a non-finite value.
    std::optional<std::size_t> failed_coordinate;

    bool passed(double tolerance) const {
        return !failed_coordinate && max_relative_error <= tolerance;
    }
};

/// Compares the analytic gradient against central differences with step h:
/// max_i |(f(x+h e_i) - f(x-h e_i))/(2h) - g_i| / max(1, |g_i|).
inline GradientCheck check_gradient(const Objective& obj, std::span<const double> x, double h) {
    if (!(h > 0.0)) throw UsageError("check_gradient: step must be positive");
    const Vector g = obj.gradient(x);
    GradientCheck result;
    Vector probe(x.begin(), x.end());
    for (std::size_t i = 0; i < probe.size(); ++i) {
        const double xi = probe[i];
        probe[i] = xi + h;
        const double up = obj.value(probe);
        probe[i] = xi - h;
        const double down = obj.value(probe);
        probe[i] = xi;
        const double fd = (up - down) / (2.0 * h);
        if (!std::isfinite(fd) || !std::isfinite(g[i])) {
            result.failed_coordinate = i;
            result.max_relative_error = std::numeric_limits<double>::infinity();
            return result;
        }
        const double err = std::abs(fd - g[i]) / std::max(1.0, std::abs(g[i]));
        result.max_relative_error = std::max(result.max_relative_error, err);
    }
    return result;
}

}  // namespace autogd
