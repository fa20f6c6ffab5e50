#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "autogd/errors.hpp"
#include "autogd/linalg.hpp"

namespace autogd {

inline constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

/// One trial rate evaluated by an AutoGD-style step.
struct Candidate {
    double rate = 0.0;
    double value = kNaN;
    bool feasible = false;
};

/// Per-iteration audit record shared by every optimizer.
///
/// `gamma` is the baseline (or fixed) rate going into the step and
/// `gamma_prime` the rate actually applied. Non-Auto optimizers leave
/// `candidates` empty.
struct StepRecord {
    std::size_t t = 0;
    double gamma = kNaN;
    double gamma_prime = 0.0;
    double gamma_next = kNaN;
    double f_before = kNaN;
    double f_after = kNaN;
    double grad_norm_sq = kNaN;
    std::vector<Candidate> candidates;
    bool accepted = false;
    std::uint64_t n_f_used = 0;
    std::uint64_t n_g_used = 0;
    /// Local smoothness estimate (AdGD2 only).
    double smoothness = kNaN;
    /// ||g||^2 overflowed; the step was forced to no-movement.
    bool gradient_overflow = false;
};

enum class TerminalStatus { converged, budget, diverged, stagnant };

inline std::string_view to_string(TerminalStatus s) {
    switch (s) {
        case TerminalStatus::converged: return "converged";
        case TerminalStatus::budget: return "budget";
        case TerminalStatus::diverged: return "diverged";
        case TerminalStatus::stagnant: return "stagnant";
    }
    return "unknown";
}

inline TerminalStatus terminal_status_from_string(std::string_view s) {
    if (s == "converged") return TerminalStatus::converged;
    if (s == "budget") return TerminalStatus::budget;
    if (s == "diverged") return TerminalStatus::diverged;
    if (s == "stagnant") return TerminalStatus::stagnant;
    throw UsageError("unknown terminal status '" + std::string(s) + "'");
}

/// When to stop a run. Tolerances are optional; max_iters is required.
struct StoppingRule {
    std::size_t max_iters = 0;
    /// Stop (converged) once ||grad f(x_t)|| <= grad_tol.
    std::optional<double> grad_tol;
    /// Stop (converged) once f(x_t) <= f_target.
    std::optional<double> f_target;
    /// Cap on total function + gradient evaluations.
    std::optional<std::uint64_t> eval_budget;
    /// Cap on accumulated step_cost; a run stops before the step that would
    /// start at or beyond it. Without step_cost each step costs n_f + n_g.
    std::optional<double> cost_budget;
    std::function<double(const StepRecord&)> step_cost;
    /// Consecutive no-movement steps before a run is declared stagnant.
    std::size_t stagnation_window = 1000;
    /// Keep every iterate in RunTrace::iterates.
    bool record_iterates = false;
};

/// One cell of a benchmark matrix.
struct RunSpec {
    std::string problem_id;
    std::string optimizer_id;
    double learning_rate = 1.0;
    std::uint64_t seed = 0;
    std::size_t max_iters = 1000;
    std::optional<std::uint64_t> budget;

    friend bool operator==(const RunSpec&, const RunSpec&) = default;
};

struct RunTrace {
    RunSpec spec;
    Vector x_initial;
    double gamma_initial = kNaN;
    double f_initial = kNaN;
    std::vector<StepRecord> records;
    /// Cumulative eval-weighted cost after each record (filled by the harness).
    std::vector<double> weighted_time;
    TerminalStatus status = TerminalStatus::budget;
    Vector x_final;
    double gamma_final = kNaN;
    /// x_0, x_1, ... when StoppingRule::record_iterates is set.
    std::vector<Vector> iterates;
    /// Free-form provenance (optimizer settings actually used).
    std::vector<std::pair<std::string, double>> settings;

    double final_value() const { return records.empty() ? f_initial : records.back().f_after; }
};

}  // namespace autogd
