#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <utility>

#include "autogd/autogd.hpp"
#include "autogd/errors.hpp"
#include "autogd/linalg.hpp"
#include "autogd/objective.hpp"
#include "autogd/run_loop.hpp"
#include "autogd/trace.hpp"

namespace autogd {

// ---------------------------------------------------------------------------
// Constant-rate gradient descent

/// x - gamma * grad f(x). No acceptance logic; f may go up.
inline OptimizerState gd_step(const OptimizerState& state, const Objective& obj, double gamma,
                              EvalCounter& counter) {
    if (!(gamma > 0.0)) throw UsageError("gd_step: learning rate must be positive");
    if (state.x.size() != obj.dimension()) throw UsageError("gd_step: dimension mismatch");
    const Vector g = gradient(obj, state.x, counter);
    OptimizerState next;
    next.x = step_along(state.x, gamma, g);
    next.gamma = gamma;
    next.t = state.t + 1;
    return next;
}

inline OptimizerState gd_step(const OptimizerState& state, const Objective& obj, double gamma) {
    EvalCounter scratch;
    return gd_step(state, obj, gamma, scratch);
}

class GDStepper {
public:
    GDStepper(const Objective& obj, Vector x0, double f0, double gamma)
        : obj_(&obj), x_(std::move(x0)), f_(f0), gamma_(gamma) {
        if (!(gamma_ > 0.0)) throw UsageError("GD: learning rate must be positive");
    }

    StepRecord step(EvalCounter& counter) {
        if (!all_finite(x_)) throw CorruptedStateError("GD iterate has non-finite entries");
        StepRecord rec;
        const Vector g = gradient(*obj_, x_, counter);
        Vector next = step_along(x_, gamma_, g);
        moved_ = next != x_;
        x_ = std::move(next);
        rec.gamma = rec.gamma_prime = rec.gamma_next = gamma_;
        rec.f_before = f_;
        f_ = evaluate(*obj_, x_, counter);  // monitoring only
        rec.f_after = f_;
        rec.grad_norm_sq = norm_sq(g);
        rec.accepted = moved_;
        rec.n_f_used = 1;
        rec.n_g_used = 1;
        return rec;
    }

    const Vector& x() const { return x_; }
    double gamma() const { return gamma_; }
    bool moved() const { return moved_; }

private:
    const Objective* obj_;
    Vector x_;
    double f_;
    double gamma_;
    bool moved_ = false;
};

// ---------------------------------------------------------------------------
// Armijo backtracking

struct BacktrackConfig {
    double gamma_max = 1.0;
    double shrink = 0.5;
    double eta = 1e-4;
    /// Maximum number of shrinks; at most max_backtracks + 1 trial points.
    std::size_t max_backtracks = 50;

    void validate() const {
        if (!(gamma_max > 0.0) || !std::isfinite(gamma_max))
            throw UsageError("backtracking: gamma_max must be positive and finite");
        if (!(shrink > 0.0 && shrink < 1.0)) throw UsageError("backtracking: shrink must lie in (0, 1)");
        if (!(eta >= 0.0 && eta < 1.0)) throw UsageError("backtracking: eta must lie in [0, 1)");
    }
};

namespace detail {

struct LineSearchResult {
    double rate = 0.0;  ///< 0 when every trial failed
    double value = 0.0;
    Vector point;
    std::uint64_t trials = 0;
    double last_rate = 0.0;
};

/// Tries x - r d for r = gamma_max, gamma_max*shrink, ... until
/// f <= f0 - eta * r * slope, where slope = d^T grad f(x).
inline LineSearchResult backtrack_along(const Objective& obj, std::span<const double> x, double f0,
                                        std::span<const double> direction, double slope,
                                        const BacktrackConfig& cfg, EvalCounter& counter) {
    LineSearchResult out;
    double rate = cfg.gamma_max;
    for (std::size_t k = 0; k <= cfg.max_backtracks; ++k) {
        Vector trial = step_along(x, rate, direction);
        const double v = evaluate(obj, trial, counter);
        ++out.trials;
        out.last_rate = rate;
        if (std::isfinite(v) && v <= f0 - cfg.eta * rate * slope) {
            out.rate = rate;
            out.value = v;
            out.point = std::move(trial);
            return out;
        }
        rate *= cfg.shrink;
    }
    out.value = f0;
    out.point.assign(x.begin(), x.end());
    return out;
}

}  // namespace detail

/// One backtracking gradient step. `record.n_f_used` counts the trial
/// evaluations plus f(x) when it was not cached in `state.f`.
inline StepResult backtrack_step(const OptimizerState& state, const Objective& obj, const BacktrackConfig& cfg,
                                 EvalCounter& counter) {
    cfg.validate();
    if (state.x.size() != obj.dimension()) throw UsageError("backtrack_step: dimension mismatch");
    if (!all_finite(state.x)) throw CorruptedStateError("backtracking iterate has non-finite entries");

    EvalCounter used;
    const double f0 = state.f ? *state.f : evaluate(obj, state.x, used);
    const Vector g = gradient(obj, state.x, used);
    const double gns = norm_sq(g);
    detail::LineSearchResult ls = detail::backtrack_along(obj, state.x, f0, g, gns, cfg, used);

    StepResult out;
    StepRecord& rec = out.record;
    rec.t = state.t;
    rec.gamma = cfg.gamma_max;
    rec.gamma_prime = ls.rate;
    rec.gamma_next = cfg.gamma_max;
    rec.f_before = f0;
    rec.f_after = ls.value;
    rec.grad_norm_sq = gns;
    rec.accepted = ls.rate > 0.0;
    rec.n_f_used = used.n_f;
    rec.n_g_used = used.n_g;

    out.state.x = std::move(ls.point);
    out.state.gamma = cfg.gamma_max;
    out.state.t = state.t + 1;
    out.state.f = ls.value;
    counter.n_f += used.n_f;
    counter.n_g += used.n_g;
    return out;
}

inline StepResult backtrack_step(const OptimizerState& state, const Objective& obj, const BacktrackConfig& cfg) {
    EvalCounter scratch;
    return backtrack_step(state, obj, cfg, scratch);
}

class BacktrackStepper {
public:
    BacktrackStepper(const Objective& obj, OptimizerState init, BacktrackConfig cfg)
        : obj_(&obj), state_(std::move(init)), cfg_(cfg) {}

    StepRecord step(EvalCounter& counter) {
        StepResult r = backtrack_step(state_, *obj_, cfg_, counter);
        moved_ = r.record.accepted && r.state.x != state_.x;
        state_ = std::move(r.state);
        return std::move(r.record);
    }

    const Vector& x() const { return state_.x; }
    double gamma() const { return cfg_.gamma_max; }
    bool moved() const { return moved_; }

private:
    const Objective* obj_;
    OptimizerState state_;
    BacktrackConfig cfg_;
    bool moved_ = false;
};

// ---------------------------------------------------------------------------
// AdGD2: adaptive rate from observed gradient differences.
//
//   L_k      = ||g_k - g_{k-1}|| / ||x_k - x_{k-1}||
//   lambda_k = min( sqrt(2/3 + theta_{k-1}) lambda_{k-1},
//                   lambda_{k-1} / sqrt([2 lambda_{k-1}^2 L_k^2 - 1]_+) )
//   theta_k  = lambda_k / lambda_{k-1},  theta_0 = 1/3
//   x_{k+1}  = x_k - lambda_k g_k
//
// lambda_0 and x_1 come from a single Armijo backtracking search.

struct AdGD2State {
    Vector x_prev;
    Vector grad_prev;
    double gamma_prev = kNaN;
    double theta_prev = 1.0 / 3.0;
    /// Last finite smoothness estimate, reused when x_k == x_{k-1}.
    double smoothness_prev = 0.0;
};

inline double adgd2_next_rate(double gamma_prev, double theta_prev, double smoothness) {
    const double growth = std::sqrt(2.0 / 3.0 + theta_prev) * gamma_prev;
    const double bracket = 2.0 * gamma_prev * gamma_prev * smoothness * smoothness - 1.0;
    const double curvature_cap =
        bracket > 0.0 ? gamma_prev / std::sqrt(bracket) : std::numeric_limits<double>::infinity();
    return std::min(growth, curvature_cap);
}

class AdGD2Stepper {
public:
    AdGD2Stepper(const Objective& obj, Vector x0, double f0, BacktrackConfig initial_search)
        : obj_(&obj), x_(std::move(x0)), f_(f0), search_(initial_search) {
        search_.validate();
    }

    StepRecord step(EvalCounter& counter) {
        if (!all_finite(x_)) throw CorruptedStateError("AdGD2 iterate has non-finite entries");
        StepRecord rec;
        EvalCounter used;
        const Vector g = gradient(*obj_, x_, used);
        rec.grad_norm_sq = norm_sq(g);
        rec.f_before = f_;
        Vector next;
        double rate = 0.0;
        if (!started_) {
            detail::LineSearchResult ls =
                detail::backtrack_along(*obj_, x_, f_, g, rec.grad_norm_sq, search_, used);
            // An exhausted search still fixes the rate at the smallest trial.
            rate = ls.rate > 0.0 ? ls.rate : ls.last_rate;
            if (ls.rate > 0.0) {
                next = std::move(ls.point);
                f_ = ls.value;
            } else {
                next = step_along(x_, rate, g);
                f_ = evaluate(*obj_, next, used);
            }
            started_ = true;
            rec.smoothness = kNaN;
        } else {
            const Vector dx = difference(x_, state_.x_prev);
            const double ndx = norm(dx);
            double smoothness = state_.smoothness_prev;
            if (ndx > 0.0) smoothness = norm(difference(g, state_.grad_prev)) / ndx;
            if (std::isfinite(smoothness)) state_.smoothness_prev = smoothness;
            rate = adgd2_next_rate(state_.gamma_prev, state_.theta_prev, smoothness);
            state_.theta_prev = rate / state_.gamma_prev;
            next = step_along(x_, rate, g);
            f_ = evaluate(*obj_, next, used);  // monitoring only
            rec.smoothness = smoothness;
        }
        state_.x_prev = x_;
        state_.grad_prev = g;
        state_.gamma_prev = rate;
        moved_ = next != x_;
        x_ = std::move(next);

        rec.gamma = rec.gamma_prime = rec.gamma_next = rate;
        rec.f_after = f_;
        rec.accepted = moved_;
        rec.n_f_used = used.n_f;
        rec.n_g_used = used.n_g;
        counter.n_f += used.n_f;
        counter.n_g += used.n_g;
        return rec;
    }

    const Vector& x() const { return x_; }
    double gamma() const { return started_ ? state_.gamma_prev : search_.gamma_max; }
    bool moved() const { return moved_; }
    const AdGD2State& state() const { return state_; }

private:
    const Objective* obj_;
    Vector x_;
    double f_;
    BacktrackConfig search_;
    AdGD2State state_;
    bool started_ = false;
    bool moved_ = false;
};

namespace detail {

template <class MakeStepper>
RunTrace run_baseline(const Objective& obj, const Vector& x0, double gamma0, const StoppingRule& stop,
                      EvalCounter& counter, MakeStepper&& make) {
    if (x0.size() != obj.dimension()) throw UsageError("start point has wrong dimension");
    RunTrace trace;
    trace.x_initial = x0;
    trace.gamma_initial = gamma0;
    trace.f_initial = evaluate(obj, x0, counter);
    auto stepper = make(trace.f_initial);
    drive(stepper, stop, trace, counter);
    return trace;
}

}  // namespace detail

inline RunTrace gd_run(const Objective& obj, const Vector& x0, double gamma, const StoppingRule& stop,
                       EvalCounter& counter) {
    return detail::run_baseline(obj, x0, gamma, stop, counter,
                                [&](double f0) { return GDStepper(obj, x0, f0, gamma); });
}

inline RunTrace gd_run(const Objective& obj, const Vector& x0, double gamma, const StoppingRule& stop) {
    EvalCounter scratch;
    return gd_run(obj, x0, gamma, stop, scratch);
}

inline RunTrace backtracking_run(const Objective& obj, const Vector& x0, const BacktrackConfig& cfg,
                                 const StoppingRule& stop, EvalCounter& counter) {
    cfg.validate();
    RunTrace trace = detail::run_baseline(obj, x0, cfg.gamma_max, stop, counter, [&](double f0) {
        OptimizerState s{x0, cfg.gamma_max, 0, f0};
        return BacktrackStepper(obj, std::move(s), cfg);
    });
    trace.settings = {{"shrink", cfg.shrink}, {"eta", cfg.eta}};
    return trace;
}

inline RunTrace backtracking_run(const Objective& obj, const Vector& x0, const BacktrackConfig& cfg,
                                 const StoppingRule& stop) {
    EvalCounter scratch;
    return backtracking_run(obj, x0, cfg, stop, scratch);
}

/// AdGD2 with its initial rate found by one backtracking search from
/// `initial_search.gamma_max`.
inline RunTrace adgd2_run(const Objective& obj, const Vector& x0, const StoppingRule& stop,
                          const BacktrackConfig& initial_search, EvalCounter& counter) {
    RunTrace trace = detail::run_baseline(obj, x0, initial_search.gamma_max, stop, counter, [&](double f0) {
        return AdGD2Stepper(obj, x0, f0, initial_search);
    });
    trace.settings = {{"search_gamma_max", initial_search.gamma_max},
                      {"search_shrink", initial_search.shrink},
                      {"search_eta", initial_search.eta},
                      {"theta0", 1.0 / 3.0}};
    return trace;
}

inline RunTrace adgd2_run(const Objective& obj, const Vector& x0, const StoppingRule& stop,
                          const BacktrackConfig& initial_search = {}) {
    EvalCounter scratch;
    return adgd2_run(obj, x0, stop, initial_search, scratch);
}

}  // namespace autogd
