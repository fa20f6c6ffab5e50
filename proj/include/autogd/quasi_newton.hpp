#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <span>
#include <utility>

#include "autogd/autogd.hpp"
#include "autogd/baselines.hpp"
#include "autogd/errors.hpp"
#include "autogd/linalg.hpp"
#include "autogd/objective.hpp"
#include "autogd/run_loop.hpp"
#include "autogd/trace.hpp"

namespace autogd {

/// Curvature pairs with y^T s at or below this are discarded.
inline constexpr double kCurvatureThreshold = 1e-12;

/// Dense inverse-Hessian approximation H, starting from the identity.
using HessianApprox = SquareMatrix;

/// BFGS inverse update H <- (I - s y^T/rho) H (I - y s^T/rho) + s s^T/rho,
/// rho = y^T s. Returns H unchanged when rho <= 1e-12.
///
/// Expanded form for symmetric H, with u = H y:
///   H - (s u^T + u s^T)/rho + (1 + y^T u / rho) s s^T / rho.
/// Only the upper triangle is computed, so the result is exactly symmetric.
inline HessianApprox bfgs_update(const HessianApprox& h, std::span<const double> s, std::span<const double> y) {
    const std::size_t n = h.size();
    if (s.size() != n || y.size() != n) throw UsageError("bfgs_update: dimension mismatch");
    const double rho = dot(y, s);
    if (!(rho > kCurvatureThreshold)) return h;
    const Vector u = h.multiply(y);
    const double k = (1.0 + dot(y, u) / rho) / rho;
    HessianApprox out(n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i; j < n; ++j) {
            const double v = h(i, j) - (s[i] * u[j] + u[i] * s[j]) / rho + k * s[i] * s[j];
            out(i, j) = v;
            out(j, i) = v;
        }
    }
    return out;
}

/// Limited-memory curvature history, oldest pair first.
struct LBFGSMemory {
    std::size_t capacity = 10;
    std::deque<Vector> s;
    std::deque<Vector> y;
    /// 1 / (y^T s) for each stored pair.
    std::deque<double> inv_curvature;

    std::size_t size() const { return s.size(); }
    bool empty() const { return s.empty(); }

    /// Stores (s, y) if y^T s > 1e-12, evicting the oldest beyond capacity.
    /// Returns whether the pair was kept.
    bool push(Vector s_new, Vector y_new) {
        if (capacity == 0) throw UsageError("L-BFGS memory capacity must be positive");
        const double rho = dot(y_new, s_new);
        if (!(rho > kCurvatureThreshold)) return false;
        s.push_back(std::move(s_new));
        y.push_back(std::move(y_new));
        inv_curvature.push_back(1.0 / rho);
        while (s.size() > capacity) {
            s.pop_front();
            y.pop_front();
            inv_curvature.pop_front();
        }
        return true;
    }

    friend bool operator==(const LBFGSMemory&, const LBFGSMemory&) = default;
};

/// Two-loop recursion: returns p = -H_k g, with H_0 = (s^T y / y^T y) I from
/// the newest pair (identity when the memory is empty).
inline Vector lbfgs_direction(const LBFGSMemory& mem, std::span<const double> g) {
    Vector q(g.begin(), g.end());
    const std::size_t m = mem.size();
    std::vector<double> alpha(m);
    for (std::size_t k = m; k-- > 0;) {
        alpha[k] = mem.inv_curvature[k] * dot(mem.s[k], q);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] -= alpha[k] * mem.y[k][i];
    }
    if (m > 0) {
        const double scale = dot(mem.s.back(), mem.y.back()) / norm_sq(mem.y.back());
        for (double& v : q) v *= scale;
    }
    for (std::size_t k = 0; k < m; ++k) {
        const double beta = mem.inv_curvature[k] * dot(mem.y[k], q);
        for (std::size_t i = 0; i < q.size(); ++i) q[i] += mem.s[k][i] * (alpha[k] - beta);
    }
    for (double& v : q) v = -v;
    return q;
}

/// State for Auto(L)BFGS: the AutoGD state plus the cached gradient at x.
struct QuasiNewtonState {
    OptimizerState base;
    std::optional<Vector> grad;
};

struct QuasiNewtonStep {
    QuasiNewtonState state;
    StepRecord record;
    /// Whether a curvature pair was applied to H / memory.
    bool updated = false;
};

namespace detail {

/// AutoGD rate selection along preconditioned_grad = H g (so trial points are
/// x - r H g = x + r p). The Armijo term uses ||H g||^2. On acceptance the
/// gradient at the new point is evaluated and `on_pair(s, y)` is invoked.
template <class OnPair>
QuasiNewtonStep auto_preconditioned_step(const QuasiNewtonState& state, const Objective& obj,
                                         const AutoGDConfig& cfg, EvalCounter& counter,
                                         const Vector& g, const Vector& preconditioned_grad, EvalCounter used,
                                         double f0, OnPair&& on_pair) {
    const double dns = norm_sq(preconditioned_grad);
    RateChoice choice =
        select_rate(obj, state.base.x, f0, preconditioned_grad, dns, state.base.gamma, cfg, used);

    QuasiNewtonStep out;
    StepRecord& rec = out.record;
    rec.t = state.base.t;
    rec.gamma = state.base.gamma;
    rec.gamma_prime = choice.gamma_prime;
    rec.gamma_next = choice.gamma_next;
    rec.f_before = f0;
    rec.f_after = choice.f_after;
    rec.grad_norm_sq = norm_sq(g);
    rec.accepted = choice.gamma_prime != 0.0;
    rec.gradient_overflow = choice.gradient_overflow;
    rec.candidates = std::move(choice.candidates);

    out.state.base.gamma = choice.gamma_next;
    out.state.base.t = state.base.t + 1;
    out.state.base.f = choice.f_after;
    if (rec.accepted) {
        Vector g_new = gradient(obj, choice.x_next, used);
        // s = gamma' p with p = -H g
        Vector s = scaled(preconditioned_grad, -choice.gamma_prime);
        Vector y = difference(g_new, g);
        out.updated = on_pair(std::move(s), std::move(y));
        out.state.base.x = std::move(choice.x_next);
        out.state.grad = std::move(g_new);
    } else {
        out.state.base.x = state.base.x;
        out.state.grad = g;
    }
    rec.n_f_used = used.n_f;
    rec.n_g_used = used.n_g;
    counter.n_f += used.n_f;
    counter.n_g += used.n_g;
    return out;
}

struct StepInputs {
    EvalCounter used;
    double f0;
    Vector g;
};

inline StepInputs gather(const QuasiNewtonState& state, const Objective& obj) {
    check_state(obj, state.base);
    StepInputs in{};
    in.f0 = state.base.f ? *state.base.f : evaluate(obj, state.base.x, in.used);
    in.g = state.grad ? *state.grad : gradient(obj, state.base.x, in.used);
    if (in.g.size() != obj.dimension()) throw UsageError("cached gradient has wrong dimension");
    return in;
}

}  // namespace detail

/// AutoGD step in the BFGS direction. H is replaced only when the step moved
/// and the curvature pair passed the threshold.
inline QuasiNewtonStep autobfgs_step(const QuasiNewtonState& state, HessianApprox& h, const Objective& obj,
                                     const AutoGDConfig& cfg, EvalCounter& counter) {
    cfg.validate();
    if (h.size() != obj.dimension()) throw UsageError("autobfgs_step: Hessian approximation has wrong size");
    detail::StepInputs in = detail::gather(state, obj);
    const Vector hg = h.multiply(in.g);
    return detail::auto_preconditioned_step(state, obj, cfg, counter, in.g, hg, in.used, in.f0,
                                            [&h](Vector s, Vector y) {
                                                if (!(dot(y, s) > kCurvatureThreshold)) return false;
                                                h = bfgs_update(h, s, y);
                                                return true;
                                            });
}

/// AutoGD step in the L-BFGS direction; accepted pairs are appended to `mem`.
inline QuasiNewtonStep autolbfgs_step(const QuasiNewtonState& state, LBFGSMemory& mem, const Objective& obj,
                                      const AutoGDConfig& cfg, EvalCounter& counter) {
    cfg.validate();
    detail::StepInputs in = detail::gather(state, obj);
    Vector hg = lbfgs_direction(mem, in.g);
    for (double& v : hg) v = -v;
    return detail::auto_preconditioned_step(
        state, obj, cfg, counter, in.g, hg, in.used, in.f0,
        [&mem](Vector s, Vector y) { return mem.push(std::move(s), std::move(y)); });
}

class AutoBFGSStepper {
public:
    AutoBFGSStepper(const Objective& obj, OptimizerState init, AutoGDConfig cfg)
        : obj_(&obj), state_{std::move(init), std::nullopt}, h_(HessianApprox::identity(obj.dimension())),
          cfg_(cfg) {}

    StepRecord step(EvalCounter& counter) {
        QuasiNewtonStep r = autobfgs_step(state_, h_, *obj_, cfg_, counter);
        moved_ = r.record.accepted;
        state_ = std::move(r.state);
        return std::move(r.record);
    }

    const Vector& x() const { return state_.base.x; }
    double gamma() const { return state_.base.gamma; }
    bool moved() const { return moved_; }
    const HessianApprox& hessian() const { return h_; }

private:
    const Objective* obj_;
    QuasiNewtonState state_;
    HessianApprox h_;
    AutoGDConfig cfg_;
    bool moved_ = false;
};

class AutoLBFGSStepper {
public:
    AutoLBFGSStepper(const Objective& obj, OptimizerState init, AutoGDConfig cfg, std::size_t memory = 10)
        : obj_(&obj), state_{std::move(init), std::nullopt}, cfg_(cfg) {
        mem_.capacity = memory;
    }

    StepRecord step(EvalCounter& counter) {
        QuasiNewtonStep r = autolbfgs_step(state_, mem_, *obj_, cfg_, counter);
        moved_ = r.record.accepted;
        state_ = std::move(r.state);
        return std::move(r.record);
    }

    const Vector& x() const { return state_.base.x; }
    double gamma() const { return state_.base.gamma; }
    bool moved() const { return moved_; }
    const LBFGSMemory& memory() const { return mem_; }

private:
    const Objective* obj_;
    QuasiNewtonState state_;
    LBFGSMemory mem_;
    AutoGDConfig cfg_;
    bool moved_ = false;
};

/// Plain (L)BFGS with Armijo backtracking along p; falls back to -g when p
/// is not a descent direction.
template <bool Limited>
class BacktrackingQuasiNewtonStepper {
public:
    BacktrackingQuasiNewtonStepper(const Objective& obj, Vector x0, double f0, BacktrackConfig cfg,
                                   std::size_t memory = 10)
        : obj_(&obj), x_(std::move(x0)), f_(f0), cfg_(cfg) {
        cfg_.validate();
        if constexpr (Limited)
            mem_.capacity = memory;
        else
            h_ = HessianApprox::identity(obj.dimension());
    }

    StepRecord step(EvalCounter& counter) {
        if (!all_finite(x_)) throw CorruptedStateError("quasi-Newton iterate has non-finite entries");
        EvalCounter used;
        if (!g_) g_ = gradient(*obj_, x_, used);
        const Vector& g = *g_;
        Vector descent;  // trial points are x - r * descent
        if constexpr (Limited) {
            descent = lbfgs_direction(mem_, g);
            for (double& v : descent) v = -v;
        } else {
            descent = h_.multiply(g);
        }
        double slope = dot(descent, g);
        if (!(slope > 0.0) || !std::isfinite(slope)) {
            descent = g;
            slope = norm_sq(g);
        }
        detail::LineSearchResult ls = detail::backtrack_along(*obj_, x_, f_, descent, slope, cfg_, used);

        StepRecord rec;
        rec.gamma = rec.gamma_next = cfg_.gamma_max;
        rec.gamma_prime = ls.rate;
        rec.f_before = f_;
        rec.f_after = ls.value;
        rec.grad_norm_sq = norm_sq(g);
        rec.accepted = ls.rate > 0.0;
        moved_ = rec.accepted && ls.point != x_;
        if (rec.accepted) {
            Vector g_new = gradient(*obj_, ls.point, used);
            Vector s = difference(ls.point, x_);
            Vector y = difference(g_new, g);
            if constexpr (Limited)
                mem_.push(std::move(s), std::move(y));
            else
                h_ = bfgs_update(h_, s, y);
            x_ = std::move(ls.point);
            f_ = ls.value;
            g_ = std::move(g_new);
        }
        rec.n_f_used = used.n_f;
        rec.n_g_used = used.n_g;
        counter.n_f += used.n_f;
        counter.n_g += used.n_g;
        return rec;
    }

    const Vector& x() const { return x_; }
    double gamma() const { return cfg_.gamma_max; }
    bool moved() const { return moved_; }

private:
    const Objective* obj_;
    Vector x_;
    double f_;
    std::optional<Vector> g_;
    BacktrackConfig cfg_;
    HessianApprox h_;
    LBFGSMemory mem_;
    bool moved_ = false;
};

inline RunTrace autobfgs_run(const Objective& obj, const OptimizerState& init, const AutoGDConfig& cfg,
                             const StoppingRule& stop, EvalCounter& counter) {
    cfg.validate();
    detail::check_state(obj, init);
    RunTrace trace;
    trace.x_initial = init.x;
    trace.gamma_initial = init.gamma;
    OptimizerState start = init;
    if (!start.f) start.f = evaluate(obj, start.x, counter);
    trace.f_initial = *start.f;
    trace.settings = {{"c", cfg.c}, {"eta", cfg.eta}};
    AutoBFGSStepper stepper(obj, std::move(start), cfg);
    detail::drive(stepper, stop, trace, counter);
    return trace;
}

inline RunTrace autolbfgs_run(const Objective& obj, const OptimizerState& init, const AutoGDConfig& cfg,
                              const StoppingRule& stop, EvalCounter& counter, std::size_t memory = 10) {
    cfg.validate();
    detail::check_state(obj, init);
    RunTrace trace;
    trace.x_initial = init.x;
    trace.gamma_initial = init.gamma;
    OptimizerState start = init;
    if (!start.f) start.f = evaluate(obj, start.x, counter);
    trace.f_initial = *start.f;
    trace.settings = {{"c", cfg.c}, {"eta", cfg.eta}, {"memory", static_cast<double>(memory)}};
    AutoLBFGSStepper stepper(obj, std::move(start), cfg, memory);
    detail::drive(stepper, stop, trace, counter);
    return trace;
}

inline RunTrace bfgs_run(const Objective& obj, const Vector& x0, const BacktrackConfig& cfg,
                         const StoppingRule& stop, EvalCounter& counter) {
    return detail::run_baseline(obj, x0, cfg.gamma_max, stop, counter, [&](double f0) {
        return BacktrackingQuasiNewtonStepper<false>(obj, x0, f0, cfg);
    });
}

inline RunTrace lbfgs_run(const Objective& obj, const Vector& x0, const BacktrackConfig& cfg,
                          const StoppingRule& stop, EvalCounter& counter, std::size_t memory = 10) {
    return detail::run_baseline(obj, x0, cfg.gamma_max, stop, counter, [&](double f0) {
        return BacktrackingQuasiNewtonStepper<true>(obj, x0, f0, cfg, memory);
    });
}

}  // namespace autogd
