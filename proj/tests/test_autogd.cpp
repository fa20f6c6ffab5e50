#include <cmath>
#include <limits>
#include <random>

#include <gtest/gtest.h>

#include "autogd/autogd.hpp"
#include "autogd/corpus.hpp"
#include "oracles.hpp"

using namespace autogd;

namespace {

OptimizerState at(Vector x, double gamma) {
    OptimizerState s;
    s.x = std::move(x);
    s.gamma = gamma;
    return s;
}

AutoGDConfig config(double c = 2.0, double eta = 1e-4) {
    AutoGDConfig cfg;
    cfg.c = c;
    cfg.eta = eta;
    return cfg;
}

StoppingRule horizon(std::size_t n, std::optional<double> grad_tol = std::nullopt) {
    StoppingRule stop;
    stop.max_iters = n;
    stop.grad_tol = grad_tol;
    stop.record_iterates = true;
    stop.stagnation_window = n + 1;
    return stop;
}

}  // namespace

// Hand-enumerated steps on f(x) = x^2 from x = 1.

TEST(AutoGDStep, AllFeasiblePicksLargestDecrease) {
    EvalCounter counter;
    const StepResult r = autogd_step(at({1.0}, 0.1), corpus::square(), config(), counter);
    ASSERT_EQ(r.record.candidates.size(), 3u);
    EXPECT_DOUBLE_EQ(r.record.candidates[0].value, 0.81);
    EXPECT_DOUBLE_EQ(r.record.candidates[1].value, 0.64);
    EXPECT_DOUBLE_EQ(r.record.candidates[2].value, 0.36);
    for (const auto& cand : r.record.candidates) EXPECT_TRUE(cand.feasible);
    EXPECT_EQ(r.record.gamma_prime, 0.2);
    EXPECT_DOUBLE_EQ(r.state.x[0], 0.6);
    EXPECT_EQ(r.state.gamma, 0.2);
    EXPECT_TRUE(r.record.accepted);
}

TEST(AutoGDStep, NothingFeasibleShrinksByCSquared) {
    const StepResult r = autogd_step(at({1.0}, 100.0), corpus::square(), config());
    EXPECT_DOUBLE_EQ(r.record.candidates[0].value, 9801.0);
    EXPECT_DOUBLE_EQ(r.record.candidates[1].value, 39601.0);
    EXPECT_DOUBLE_EQ(r.record.candidates[2].value, 159201.0);
    for (const auto& cand : r.record.candidates) EXPECT_FALSE(cand.feasible);
    EXPECT_EQ(r.record.gamma_prime, 0.0);
    EXPECT_EQ(r.state.x[0], 1.0);
    EXPECT_EQ(r.state.gamma, 25.0);
    EXPECT_FALSE(r.record.accepted);
    EXPECT_EQ(r.record.f_after, r.record.f_before);
}

TEST(AutoGDStep, KeepsConstantRateWhenMiddleIsBest) {
    const StepResult r = autogd_step(at({1.0}, 0.4), corpus::square(), config());
    EXPECT_DOUBLE_EQ(r.record.candidates[0].value, 0.36);
    EXPECT_DOUBLE_EQ(r.record.candidates[1].value, 0.04);
    EXPECT_DOUBLE_EQ(r.record.candidates[2].value, 0.36);
    EXPECT_EQ(r.record.gamma_prime, 0.4);
    EXPECT_DOUBLE_EQ(r.state.x[0], 0.2);
    EXPECT_EQ(r.state.gamma, 0.4);
}

TEST(AutoGDStep, StationaryPointKeepsBaseline) {
    const StepResult r = autogd_step(at({0.0, 0.0}, 3.0), corpus::valley(), config());
    EXPECT_EQ(r.record.grad_norm_sq, 0.0);
    EXPECT_EQ(r.record.gamma_prime, 0.0);
    EXPECT_EQ(r.state.x, (Vector{0.0, 0.0}));
    EXPECT_EQ(r.state.gamma, 3.0);
}

TEST(AutoGDStep, EvalCountsColdAndWarm) {
    EvalCounter counter;
    const StepResult first = autogd_step(at({1.0}, 0.1), corpus::square(), config(), counter);
    EXPECT_EQ(first.record.n_f_used, 4u);
    EXPECT_EQ(first.record.n_g_used, 1u);
    ASSERT_TRUE(first.state.f.has_value());
    const StepResult second = autogd_step(first.state, corpus::square(), config(), counter);
    EXPECT_EQ(second.record.n_f_used, 3u);
    EXPECT_EQ(second.record.n_g_used, 1u);
    EXPECT_EQ(counter.n_f, 7u);
    EXPECT_EQ(counter.n_g, 2u);
}

TEST(AutoGDStep, RejectsCorruptedStateAndBadConfig) {
    EXPECT_THROW(autogd_step(at({std::nan("")}, 1.0), corpus::square(), config()), CorruptedStateError);
    EXPECT_THROW(autogd_step(at({1.0}, 1.0), corpus::square(), config(1.0)), UsageError);
    EXPECT_THROW(autogd_step(at({1.0}, 1.0), corpus::square(), config(2.0, 0.6)), UsageError);
    EXPECT_THROW(autogd_step(at({1.0}, 1.0), corpus::square(), config(2.0, 0.0)), UsageError);
    EXPECT_THROW(autogd_step(at({1.0}, 0.0), corpus::square(), config()), UsageError);
    EXPECT_THROW(autogd_step(at({1.0, 2.0}, 1.0), corpus::square(), config()), UsageError);
}

TEST(AutoGDConfigTest, EtaUpperBound) {
    EXPECT_DOUBLE_EQ(config(2.0).eta_upper_bound(), 0.6);
    EXPECT_NO_THROW(config(2.0, 0.59).validate());
    EXPECT_THROW(config(2.0, 0.6).validate(), UsageError);
    AutoGDConfig ablated = config(2.0, 5.0);
    ablated.armijo_enabled = false;
    EXPECT_NO_THROW(ablated.validate());
}

TEST(AutoGDStep, OverflowingCandidatesAreRejected) {
    // x^20 at x = 100 with gamma = 1: every trial point overflows.
    const StepResult r = autogd_step(at({100.0}, 1.0), corpus::rapid_growth(), config());
    for (const auto& cand : r.record.candidates) {
        EXPECT_FALSE(std::isfinite(cand.value));
        EXPECT_FALSE(cand.feasible);
    }
    EXPECT_EQ(r.state.gamma, 0.25);
    EXPECT_EQ(r.state.x[0], 100.0);
}

TEST(AutoGDStep, GradientOverflowRejectsAndFlags) {
    const Objective steep(
        "steep", 1, [](std::span<const double> x) { return x[0]; },
        [](std::span<const double>) { return Vector{1e200}; }, Vector{0.0});
    const StepResult r = autogd_step(at({0.0}, 1e-300), steep, config());
    EXPECT_TRUE(std::isinf(r.record.grad_norm_sq));
    EXPECT_TRUE(r.record.gradient_overflow);
    EXPECT_EQ(r.record.gamma_prime, 0.0);
    EXPECT_EQ(r.state.gamma, 1e-300 / 4.0);
}

TEST(AutoGDAblation, NoMovementDisabledForcesBestOfThree) {
    AutoGDConfig cfg = config();
    cfg.no_movement_enabled = false;
    const StepResult r = autogd_step(at({1.0}, 100.0), corpus::square(), cfg);
    EXPECT_EQ(r.record.gamma_prime, 50.0);
    EXPECT_EQ(r.state.x[0], -99.0);
    EXPECT_EQ(r.state.gamma, 50.0);
    EXPECT_GT(r.record.f_after, r.record.f_before);
}

TEST(AutoGDAblation, EtaZeroTieGoesToZero) {
    // gamma = 2, c = 2: the rate-1 candidate lands on x = -1 with f exactly f0.
    AutoGDConfig cfg = config();
    cfg.armijo_enabled = false;
    const StepResult r = autogd_step(at({1.0}, 2.0), corpus::square(), cfg);
    EXPECT_TRUE(r.record.candidates[0].feasible);
    EXPECT_EQ(r.record.candidates[0].value, 1.0);
    EXPECT_EQ(r.record.gamma_prime, 0.0);
    EXPECT_EQ(r.state.gamma, 0.5);
    // With eta > 0 that candidate is simply infeasible; same outcome.
    const StepResult strict = autogd_step(at({1.0}, 2.0), corpus::square(), config());
    EXPECT_FALSE(strict.record.candidates[0].feasible);
    EXPECT_EQ(strict.record.gamma_prime, 0.0);
}

TEST(DiffuseInit, DeterministicPerSeed) {
    const InitSpec spec{{1.0, 2.0}, 0.0, 1e-12, 42};
    const OptimizerState a = diffuse_init(spec);
    const OptimizerState b = diffuse_init(spec);
    EXPECT_EQ(a.x, b.x);
    EXPECT_EQ(a.gamma, b.gamma);
    const OptimizerState other = diffuse_init({{1.0, 2.0}, 0.0, 1e-12, 43});
    EXPECT_NE(a.x, other.x);
}

TEST(DiffuseInit, DefaultRateNearOne) {
    for (std::uint64_t seed = 0; seed < 1000; ++seed) {
        const OptimizerState s = diffuse_init({{0.0}, 0.0, 1e-12, seed});
        EXPECT_GT(s.gamma, 0.999);
        EXPECT_LT(s.gamma, 1.001);
        EXPECT_NE(s.gamma, 1.0);
    }
}

TEST(DiffuseInit, RejectsDegenerateVariance) {
    EXPECT_THROW(diffuse_init({{0.0}, 0.0, 0.0, 1}), UsageError);
    EXPECT_THROW(diffuse_init({{0.0}, 0.0, -1.0, 1}), UsageError);
}

TEST(Theory, FloorAndWarmup) {
    EXPECT_DOUBLE_EQ(rate_floor(2.0, 100.0), 1.0 / 250.0);
    EXPECT_DOUBLE_EQ(rate_floor(2.0, 2.0), 0.2);
    EXPECT_EQ(warmup_iterations(1.0, 1.0 / 250.0, 2.0), 8u);     // log2(250) = 7.97
    EXPECT_EQ(warmup_iterations(1e-6, 1.0 / 250.0, 2.0), 12u);   // log2(4000) = 11.97
    EXPECT_EQ(warmup_iterations(0.2, 0.2, 2.0), 0u);
}

TEST(Run, ValleyFromTwoOneIsMonotone) {
    const Objective obj = corpus::valley();
    const OptimizerState init = diffuse_init({{2.0, 1.0}, std::log(10.0), 1e-12, 3});
    const RunTrace t = run(obj, init, config(), horizon(100));
    ASSERT_EQ(t.records.size(), 100u);
    EXPECT_LT(norm(t.x_final), norm(init.x));
    for (const auto& r : t.records) {
        EXPECT_LE(r.f_after, r.f_before);
        if (r.accepted) { EXPECT_LT(r.f_after, r.f_before); }
    }
}

TEST(Run, GrowthPhaseOnSquare) {
    const Objective obj = corpus::square();  // L = 2
    const double floor = rate_floor(2.0, 2.0);
    const RunTrace t = run(obj, at({1.0}, 1e-6), config(), horizon(10000, 1e-8));
    EXPECT_EQ(t.status, TerminalStatus::converged);
    std::size_t growth = 0;
    for (std::size_t i = 0; i + 1 < t.records.size() && t.records[i].gamma < floor; ++i) {
        EXPECT_EQ(t.records[i + 1].gamma, 2.0 * t.records[i].gamma) << "t=" << i;
        ++growth;
    }
    EXPECT_EQ(growth, warmup_iterations(1e-6, floor, 2.0));
}

TEST(Run, ZeroIterationsKeepsInitialState) {
    const RunTrace t = run(corpus::square(), at({1.0}, 1.0), config(), horizon(0));
    EXPECT_TRUE(t.records.empty());
    EXPECT_EQ(t.x_final, Vector{1.0});
    EXPECT_EQ(t.gamma_final, 1.0);
    EXPECT_EQ(t.f_initial, 1.0);
    EXPECT_EQ(t.status, TerminalStatus::budget);
}

TEST(Run, StopsOnFTargetAndGradTol) {
    StoppingRule stop = horizon(1000);
    stop.f_target = 1e-6;
    const RunTrace t = run(corpus::square(), at({1.0}, 0.1), config(), stop);
    EXPECT_EQ(t.status, TerminalStatus::converged);
    EXPECT_LE(t.records.back().f_after, 1e-6);
}

TEST(Run, StagnationWindow) {
    // A constant objective: gradient zero, never moves, baseline unchanged.
    const Objective flat(
        "flat", 1, [](std::span<const double>) { return 1.0; },
        [](std::span<const double>) { return Vector{0.0}; }, Vector{0.0});
    StoppingRule stop;
    stop.max_iters = 100;
    stop.stagnation_window = 10;
    const RunTrace t = run(flat, at({0.0}, 1.0), config(), stop);
    EXPECT_EQ(t.status, TerminalStatus::stagnant);
    EXPECT_EQ(t.records.size(), 10u);
}

TEST(Properties, MonotoneDescentAcrossRegistry) {
    std::mt19937_64 rng(1);
    for (const Objective& obj : corpus::registry()) {
        for (double rate : {1e-4, 1.0, 100.0}) {
            const OptimizerState init = diffuse_init({obj.suggested_start(), std::log(rate), 1e-12, rng()});
            const RunTrace t = run(obj, init, config(), horizon(300));
            double prev = t.f_initial;
            for (const auto& r : t.records) {
                EXPECT_LE(r.f_after, prev) << obj.id();
                if (r.accepted) { EXPECT_LT(r.f_after, prev) << obj.id(); }
                prev = r.f_after;
            }
        }
    }
}

TEST(Properties, RejectionShrinkIsExact) {
    std::mt19937_64 rng(2);
    std::size_t rejections = 0;
    for (int k = 0; k < 300; ++k) {
        const auto q = oracle::random_quadratic(rng, 3, 0.1);
        const Objective obj = q.objective("q");
        std::normal_distribution<double> n01;
        OptimizerState s = at({n01(rng), n01(rng), n01(rng)}, std::pow(10.0, n01(rng) * 2.0));
        const double c = k % 2 ? 2.0 : 3.5;
        const StepResult r = autogd_step(s, obj, config(c));
        if (!r.record.accepted && r.record.grad_norm_sq > 0.0) {
            ++rejections;
            EXPECT_EQ(r.state.gamma, s.gamma / (c * c));
            EXPECT_EQ(r.state.x, s.x);
        }
    }
    EXPECT_GT(rejections, 20u);
}

TEST(Properties, CandidateOrderIndependence) {
    std::mt19937_64 rng(3);
    for (int k = 0; k < 200; ++k) {
        const auto q = oracle::random_quadratic(rng, 4, k % 2 ? -1.0 : 0.1);
        const Objective obj = q.objective("q");
        std::normal_distribution<double> n01;
        const OptimizerState s = at({n01(rng), n01(rng), n01(rng), n01(rng)}, std::pow(10.0, n01(rng)));
        AutoGDConfig parallel = config();
        parallel.parallel_candidates = true;
        const StepResult a = autogd_step(s, obj, config());
        const StepResult b = autogd_step(s, obj, parallel);
        EXPECT_EQ(a.record.gamma_prime, b.record.gamma_prime);
        EXPECT_EQ(a.state.x, b.state.x);
        EXPECT_EQ(a.state.gamma, b.state.gamma);
    }
}

TEST(Properties, MatchesBruteForceOracle) {
    std::mt19937_64 rng(4);
    for (int k = 0; k < 300; ++k) {
        const auto q = oracle::random_quadratic(rng, 1 + k % 5, k % 3 == 0 ? -1.5 : 0.2);
        const Objective obj = q.objective("q");
        std::normal_distribution<double> n01;
        Vector x(q.b.size());
        for (double& v : x) v = n01(rng);
        const double gamma = std::pow(10.0, 3.0 * n01(rng));
        const StepResult got = autogd_step(at(x, gamma), obj, config());
        const auto want = oracle::autogd_step(obj, x, gamma, 2.0, 1e-4);
        EXPECT_EQ(got.state.x, want.x_next);
        EXPECT_EQ(got.record.gamma_prime, want.gamma_prime);
        EXPECT_EQ(got.state.gamma, want.gamma_next);
    }
}

TEST(Properties, ScaleCoverageOnQuadratic) {
    // On 1/2 L x^2 starting above the floor, the first accepted step comes
    // within ceil(|log_c(floor/gamma0)|)/2 + 1 iterations.
    const double lipschitz = 8.0;
    const Objective obj = corpus::diagonal_quadratic("q8", {lipschitz}, {1.0});
    const double floor = rate_floor(2.0, lipschitz);
    for (double gamma0 : {1.0, 10.0, 1e3, 1e6, 1e12}) {
        const RunTrace t = run(obj, at({1.0}, gamma0), config(), horizon(200));
        std::size_t first = 0;
        while (first < t.records.size() && !t.records[first].accepted) ++first;
        const double bound = std::ceil(std::abs(std::log(floor / gamma0) / std::log(2.0))) / 2.0 + 1.0;
        EXPECT_LE(static_cast<double>(first), bound) << "gamma0=" << gamma0;
    }
}

TEST(Properties, FloorNeverBreachedOnQuadratics) {
    for (double lipschitz : {0.5, 2.0, 64.0}) {
        const Objective obj = corpus::diagonal_quadratic("q", {lipschitz, lipschitz / 3.0}, {1.0, -2.0});
        const double floor = rate_floor(2.0, lipschitz);
        for (double gamma0 : {1e-5, 1.0, 1e5}) {
            const RunTrace t = run(obj, at({1.0, -2.0}, gamma0), config(), horizon(400));
            const std::size_t from = warmup_iterations(gamma0, floor, 2.0);
            // Once f is down at the underflow scale no candidate can decrease it, and
            // the shrink rule takes over; the floor only concerns the representable regime.
            for (std::size_t i = from; i < t.records.size() && t.records[i].f_before > 1e-100; ++i)
                EXPECT_GE(t.records[i].gamma, floor);
        }
    }
}
