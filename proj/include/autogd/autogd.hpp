#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <future>
#include <limits>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "autogd/errors.hpp"
#include "autogd/linalg.hpp"
#include "autogd/objective.hpp"
#include "autogd/run_loop.hpp"
#include "autogd/trace.hpp"

namespace autogd {

/// Tuning knobs for AutoGD and the two ablations used by the counterexamples.
struct AutoGDConfig {
    /// Rate scaling factor; candidates are {gamma/c, gamma, c*gamma}.
    double c = 2.0;
    /// Armijo constant, 0 < eta < (c+1)/(c^2+1).
    double eta = 1e-4;
    /// When false: pick the best of the three rates unconditionally, no
    /// Armijo test, no zero option, and the chosen rate becomes the baseline.
    bool no_movement_enabled = true;
    /// When false the sufficient-decrease test runs with eta = 0.
    bool armijo_enabled = true;
    /// Evaluate the three candidates on separate threads.
    bool parallel_candidates = false;

    double eta_upper_bound() const { return (c + 1.0) / (c * c + 1.0); }

    void validate() const {
        if (!(std::isfinite(c) && c > 1.0)) throw UsageError("AutoGD: c must be a finite number > 1");
        if (no_movement_enabled && armijo_enabled && !(eta > 0.0 && eta < eta_upper_bound()))
            throw UsageError("AutoGD: eta must satisfy 0 < eta < (c+1)/(c^2+1)");
    }
};

/// Iterate and baseline learning rate. `f` caches f(x) when the previous
/// step already evaluated it.
struct OptimizerState {
    Vector x;
    double gamma = 1.0;
    std::size_t t = 0;
    std::optional<double> f;
};

struct StepResult {
    OptimizerState state;
    StepRecord record;
};

/// Randomized start: x0 ~ N(x_center, sigma_sq I), log gamma0 ~ N(log_gamma_center, sigma_sq).
struct InitSpec {
    Vector x_center;
    double log_gamma_center = 0.0;
    double sigma_sq = 1e-12;
    std::uint64_t seed = 0;
};

inline OptimizerState diffuse_init(const InitSpec& spec) {
    if (!(spec.sigma_sq > 0.0) || !std::isfinite(spec.sigma_sq))
        throw UsageError("diffuse_init: sigma_sq must be a positive finite variance");
    std::mt19937_64 rng(spec.seed);
    std::normal_distribution<double> noise(0.0, std::sqrt(spec.sigma_sq));
    OptimizerState state;
    state.x = spec.x_center;
    for (double& xi : state.x) xi += noise(rng);
    state.gamma = std::exp(spec.log_gamma_center + noise(rng));
    return state;
}

/// Smallest learning rate the baseline can settle at on an L-smooth objective:
/// 2(c-1) / (L(c^2+1)).
inline double rate_floor(double c, double lipschitz) {
    return 2.0 * (c - 1.0) / (lipschitz * (c * c + 1.0));
}

/// ceil(|log_c(gamma0 / floor)|): iterations before the nonasymptotic bounds apply.
inline std::size_t warmup_iterations(double gamma0, double floor, double c) {
    return static_cast<std::size_t>(std::ceil(std::abs(std::log(gamma0 / floor) / std::log(c))));
}

namespace detail {

struct RateChoice {
    std::vector<Candidate> candidates;
    double gamma_prime = 0.0;
    double gamma_next = 0.0;
    double f_after = 0.0;
    Vector x_next;
    bool gradient_overflow = false;
};

/// Core of one AutoGD step along an arbitrary direction d (trial points
/// x - r d). Always spends exactly three function evaluations.
inline RateChoice select_rate(const Objective& obj, std::span<const double> x, double f0,
                              std::span<const double> direction, double dir_norm_sq, double gamma,
                              const AutoGDConfig& cfg, EvalCounter& counter) {
    const double c = cfg.c;
    const std::array<double, 3> rates{gamma / c, gamma, gamma * c};
    std::array<Vector, 3> points;
    std::array<double, 3> values{};
    for (std::size_t i = 0; i < 3; ++i) points[i] = step_along(x, rates[i], direction);

    if (cfg.parallel_candidates) {
        std::array<std::future<double>, 3> pending;
        for (std::size_t i = 0; i < 3; ++i)
            pending[i] = std::async(std::launch::async, [&obj, &points, i] { return obj.value(points[i]); });
        for (std::size_t i = 0; i < 3; ++i) values[i] = pending[i].get();
    } else {
        for (std::size_t i = 0; i < 3; ++i) values[i] = obj.value(points[i]);
    }
    counter.n_f += 3;

    RateChoice out;
    out.candidates.resize(3);
    for (std::size_t i = 0; i < 3; ++i) out.candidates[i] = {rates[i], values[i], false};

    std::optional<std::size_t> best;
    if (cfg.no_movement_enabled) {
        const double eta = cfg.armijo_enabled ? cfg.eta : 0.0;
        out.gradient_overflow = !std::isfinite(dir_norm_sq);
        double best_value = f0;
        // Ascending rate order, replace only on strict improvement: ties go
        // to the smaller rate, and the zero rate wins any tie with f0.
        for (std::size_t i = 0; i < 3; ++i) {
            const double v = values[i];
            const bool feasible = !out.gradient_overflow && std::isfinite(v) &&
                                  v <= f0 - eta * rates[i] * dir_norm_sq;
            out.candidates[i].feasible = feasible;
            if (feasible && v < best_value) {
                best = i;
                best_value = v;
            }
        }
        out.f_after = best_value;
        if (dir_norm_sq == 0.0)
            out.gamma_next = gamma;
        else if (!best)
            out.gamma_next = gamma / (c * c);
        else
            out.gamma_next = rates[*best];
    } else {
        // Ablation: forced move to the best of the three, non-finite values last.
        auto key = [](double v) { return std::isfinite(v) ? v : std::numeric_limits<double>::infinity(); };
        std::size_t pick = 0;
        for (std::size_t i = 1; i < 3; ++i)
            if (key(values[i]) < key(values[pick])) pick = i;
        for (auto& cand : out.candidates) cand.feasible = true;
        best = pick;
        out.f_after = values[pick];
        out.gamma_next = rates[pick];
    }

    if (best) {
        out.gamma_prime = rates[*best];
        out.x_next = std::move(points[*best]);
    } else {
        out.gamma_prime = 0.0;
        out.x_next.assign(x.begin(), x.end());
    }
    return out;
}

inline void check_state(const Objective& obj, const OptimizerState& state) {
    if (state.x.size() != obj.dimension())
        throw UsageError("state dimension " + std::to_string(state.x.size()) + " does not match objective '" +
                         obj.id() + "'");
    if (!all_finite(state.x)) throw CorruptedStateError("iterate has non-finite entries");
    if (!(state.gamma > 0.0) || !std::isfinite(state.gamma))
        throw UsageError("baseline learning rate must be positive and finite");
}

}  // namespace detail

/// One AutoGD iteration. Consumes three function evaluations and one gradient,
/// plus one more function evaluation when `state.f` is empty.
inline StepResult autogd_step(const OptimizerState& state, const Objective& obj, const AutoGDConfig& cfg,
                              EvalCounter& counter) {
    cfg.validate();
    detail::check_state(obj, state);

    EvalCounter used;
    const double f0 = state.f ? *state.f : evaluate(obj, state.x, used);
    const Vector g = gradient(obj, state.x, used);
    const double gns = norm_sq(g);
    detail::RateChoice choice = detail::select_rate(obj, state.x, f0, g, gns, state.gamma, cfg, used);

    StepResult out;
    StepRecord& rec = out.record;
    rec.t = state.t;
    rec.gamma = state.gamma;
    rec.gamma_prime = choice.gamma_prime;
    rec.gamma_next = choice.gamma_next;
    rec.f_before = f0;
    rec.f_after = choice.f_after;
    rec.grad_norm_sq = gns;
    rec.candidates = std::move(choice.candidates);
    rec.accepted = choice.gamma_prime != 0.0;
    rec.n_f_used = used.n_f;
    rec.n_g_used = used.n_g;
    rec.gradient_overflow = choice.gradient_overflow;

    out.state.x = std::move(choice.x_next);
    out.state.gamma = choice.gamma_next;
    out.state.t = state.t + 1;
    out.state.f = choice.f_after;

    counter.n_f += used.n_f;
    counter.n_g += used.n_g;
    return out;
}

inline StepResult autogd_step(const OptimizerState& state, const Objective& obj, const AutoGDConfig& cfg) {
    EvalCounter scratch;
    return autogd_step(state, obj, cfg, scratch);
}

class AutoGDStepper {
public:
    AutoGDStepper(const Objective& obj, OptimizerState init, AutoGDConfig cfg)
        : obj_(&obj), state_(std::move(init)), cfg_(cfg) {}

    StepRecord step(EvalCounter& counter) {
        StepResult r = autogd_step(state_, *obj_, cfg_, counter);
        moved_ = r.record.accepted;
        state_ = std::move(r.state);
        return std::move(r.record);
    }

    const Vector& x() const { return state_.x; }
    double gamma() const { return state_.gamma; }
    bool moved() const { return moved_; }
    const OptimizerState& state() const { return state_; }

private:
    const Objective* obj_;
    OptimizerState state_;
    AutoGDConfig cfg_;
    bool moved_ = false;
};

/// Runs AutoGD from `init` until a stopping rule fires.
inline RunTrace run(const Objective& obj, const OptimizerState& init, const AutoGDConfig& cfg,
                    const StoppingRule& stop, EvalCounter& counter) {
    cfg.validate();
    detail::check_state(obj, init);
    RunTrace trace;
    trace.x_initial = init.x;
    trace.gamma_initial = init.gamma;
    OptimizerState start = init;
    if (!start.f) start.f = evaluate(obj, start.x, counter);
    trace.f_initial = *start.f;
    trace.settings = {{"c", cfg.c},
                      {"eta", cfg.armijo_enabled ? cfg.eta : 0.0},
                      {"no_movement", cfg.no_movement_enabled ? 1.0 : 0.0}};
    AutoGDStepper stepper(obj, std::move(start), cfg);
    detail::drive(stepper, stop, trace, counter);
    return trace;
}

inline RunTrace run(const Objective& obj, const OptimizerState& init, const AutoGDConfig& cfg,
                    const StoppingRule& stop) {
    EvalCounter scratch;
    return run(obj, init, cfg, stop, scratch);
}

}  // namespace autogd
