#pragma once

#include <cmath>
#include <concepts>
#include <cstddef>
#include <utility>

#include "autogd/errors.hpp"
#include "autogd/linalg.hpp"
#include "autogd/objective.hpp"
#include "autogd/trace.hpp"

namespace autogd {

/// Anything that can advance one iteration and report where it is.
template <class S>
concept Stepper = requires(S s, const S cs, EvalCounter& counter) {
    { s.step(counter) } -> std::same_as<StepRecord>;
    { cs.x() } -> std::convertible_to<const Vector&>;
    { cs.gamma() } -> std::convertible_to<double>;
    { cs.moved() } -> std::convertible_to<bool>;
};

namespace detail {

/// Shared iteration loop: stopping rules, divergence and stagnation detection.
/// The caller fills x_initial / gamma_initial / f_initial beforehand.
template <Stepper S>
void drive(S& stepper, const StoppingRule& stop, RunTrace& trace, EvalCounter& counter) {
    if (stop.record_iterates) trace.iterates.push_back(stepper.x());
    std::size_t still = 0;
    double spent = 0.0;
    trace.status = TerminalStatus::budget;
    for (std::size_t t = 0; t < stop.max_iters; ++t) {
        if (stop.eval_budget && counter.n_f + counter.n_g >= *stop.eval_budget) break;
        if (stop.cost_budget && spent >= *stop.cost_budget) break;

        StepRecord rec;
        try {
            rec = stepper.step(counter);
        } catch (const CorruptedStateError&) {
            trace.status = TerminalStatus::diverged;
            break;
        }
        rec.t = t;
        spent += stop.step_cost ? stop.step_cost(rec) : static_cast<double>(rec.n_f_used + rec.n_g_used);
        const double f_before = rec.f_before;
        const double f_after = rec.f_after;
        const double gns = rec.grad_norm_sq;
        const double gamma_next = rec.gamma_next;
        trace.records.push_back(std::move(rec));
        if (stop.record_iterates) trace.iterates.push_back(stepper.x());

        const bool blew_up = (std::isfinite(f_before) && !std::isfinite(f_after)) ||
                             !all_finite(stepper.x()) || !std::isfinite(gamma_next);
        if (blew_up) {
            trace.status = TerminalStatus::diverged;
            break;
        }
        if (stop.grad_tol && std::isfinite(gns) && std::sqrt(gns) <= *stop.grad_tol) {
            trace.status = TerminalStatus::converged;
            break;
        }
        if (stop.f_target && f_after <= *stop.f_target) {
            trace.status = TerminalStatus::converged;
            break;
        }
        still = stepper.moved() ? 0 : still + 1;
        // A baseline rate that underflowed to zero can never move again.
        if (still >= stop.stagnation_window || !(gamma_next > 0.0)) {
            trace.status = TerminalStatus::stagnant;
            break;
        }
    }
    trace.x_final = stepper.x();
    trace.gamma_final = stepper.gamma();
}

}  // namespace detail
}  // namespace autogd
