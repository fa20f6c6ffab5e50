#include <atomic>
#include <cmath>
#include <memory>

#include <gtest/gtest.h>

#include "autogd/autogd.hpp"
#include "autogd/baselines.hpp"
#include "autogd/corpus.hpp"
#include "autogd/objective.hpp"
#include "autogd/quasi_newton.hpp"

using namespace autogd;

TEST(Evaluate, ValleyAtOriginIsZeroAndCounts) {
    EvalCounter counter;
    EXPECT_EQ(evaluate(corpus::valley(), Vector{0.0, 0.0}, counter), 0.0);
    EXPECT_EQ(counter.n_f, 1u);
    EXPECT_EQ(counter.n_g, 0u);
}

TEST(Evaluate, SquareAtZero) {
    EvalCounter counter;
    EXPECT_EQ(evaluate(corpus::square(), Vector{0.0}, counter), 0.0);
}

TEST(Evaluate, TwentiethPowerAtHundred) {
    // 100^20 by repeated multiplication, independent of std::pow.
    double expected = 1.0;
    for (int i = 0; i < 20; ++i) expected *= 100.0;
    EvalCounter counter;
    const double got = evaluate(corpus::rapid_growth(), Vector{100.0}, counter);
    EXPECT_NEAR(got / 1e40, 1.0, 1e-14);
    EXPECT_NEAR(got / expected, 1.0, 1e-14);
}

TEST(Evaluate, NonFiniteValuesAreReturnedNotThrown) {
    EvalCounter counter;
    EXPECT_TRUE(std::isinf(evaluate(corpus::rapid_growth(), Vector{1e20}, counter)));
}

TEST(Evaluate, DimensionMismatchIsUsageError) {
    EvalCounter counter;
    EXPECT_THROW(evaluate(corpus::valley(), Vector{1.0}, counter), UsageError);
    EXPECT_THROW(gradient(corpus::valley(), Vector{1.0, 2.0, 3.0}, counter), UsageError);
    EXPECT_EQ(counter.n_f + counter.n_g, 0u);
}

TEST(Gradient, SquareAtOne) {
    EvalCounter counter;
    EXPECT_EQ(gradient(corpus::square(), Vector{1.0}, counter), Vector{2.0});
    EXPECT_EQ(counter.n_g, 1u);
    EXPECT_EQ(counter.n_f, 0u);
}

TEST(Gradient, ValleyAtOrigin) {
    EvalCounter counter;
    EXPECT_EQ(gradient(corpus::valley(), Vector{0.0, 0.0}, counter), (Vector{0.0, 0.0}));
}

TEST(Gradient, OscillatingAtOne) {
    EvalCounter counter;
    const double g = gradient(corpus::oscillating(), Vector{1.0}, counter)[0];
    EXPECT_DOUBLE_EQ(g, 2.0 + 1.8 * std::sin(1.0));
    EXPECT_NEAR(g, 3.5146, 1e-4);
    // Central-difference cross-check written out here.
    const auto f = [](double x) { return x * x + 0.9 * (1.0 - std::cos(x * x)); };
    const double h = 1e-6;
    EXPECT_NEAR((f(1.0 + h) - f(1.0 - h)) / (2 * h), g, 1e-8);
}

TEST(CheckGradient, SquareIsNearlyExact) {
    EXPECT_LE(check_gradient(corpus::square(), Vector{1.0}, 1e-5).max_relative_error, 1e-8);
}

TEST(CheckGradient, RosenbrockAtStandardStart) {
    EXPECT_LE(check_gradient(corpus::rosenbrock(2), Vector{-1.2, 1.0}, 1e-6).max_relative_error, 1e-5);
}

TEST(CheckGradient, ValleyOffCenter) {
    EXPECT_LE(check_gradient(corpus::valley(), Vector{0.3, -0.2}, 1e-6).max_relative_error, 1e-5);
}

TEST(CheckGradient, DetectsWrongGradient) {
    const Objective wrong = corpus::square().with_gradient([](std::span<const double> x) { return Vector{3.0 * x[0]}; });
    const GradientCheck gc = check_gradient(wrong, Vector{1.0}, 1e-6);
    EXPECT_NEAR(gc.max_relative_error, 1.0 / 3.0, 1e-6);
    EXPECT_FALSE(gc.passed(1e-5));
}

TEST(CheckGradient, NonFiniteReportsCoordinate) {
    const Objective blowup(
        "blowup", 2, [](std::span<const double> x) { return x[0] * x[0] + std::exp(1000.0 * x[1]); },
        [](std::span<const double> x) { return Vector{2.0 * x[0], 1000.0 * std::exp(1000.0 * x[1])}; },
        Vector{0.0, 0.0});
    // f is finite at x, but exp overflows one step up along coordinate 1.
    const GradientCheck gc = check_gradient(blowup, Vector{0.5, 0.7097825}, 1e-6);
    ASSERT_TRUE(gc.failed_coordinate.has_value());
    EXPECT_EQ(*gc.failed_coordinate, 1u);
    EXPECT_FALSE(gc.passed(1e-5));
}

TEST(CheckGradient, RejectsNonPositiveStep) {
    EXPECT_THROW(check_gradient(corpus::square(), Vector{1.0}, 0.0), UsageError);
}

TEST(ObjectiveType, ConstructionChecksDimensions) {
    const auto f = [](std::span<const double>) { return 0.0; };
    const auto g = [](std::span<const double> x) { return Vector(x.size(), 0.0); };
    EXPECT_THROW(Objective("bad", 0, f, g, Vector{}), UsageError);
    EXPECT_THROW(Objective("bad", 2, f, g, Vector{1.0}), UsageError);
}

TEST(ObjectiveType, EvaluationIsPure) {
    for (const Objective& obj : corpus::registry()) {
        const Vector& x = obj.suggested_start();
        const double a = obj.value(x);
        const double b = obj.value(x);
        EXPECT_TRUE(a == b || (std::isnan(a) && std::isnan(b))) << obj.id();
        EXPECT_EQ(obj.gradient(x), obj.gradient(x)) << obj.id();
    }
}

// ---------------------------------------------------------------------------
// Instrumented mock: the objective counts its own calls, and every optimizer's
// EvalCounter must match those counts exactly.

namespace {

struct CallLog {
    std::atomic<std::uint64_t> f{0};
    std::atomic<std::uint64_t> g{0};
};

Objective instrumented_rosenbrock(std::shared_ptr<CallLog> log) {
    const Objective base = corpus::rosenbrock(2);
    return Objective(
        "instrumented", 2,
        [base, log](std::span<const double> x) {
            ++log->f;
            return base.value(x);
        },
        [base, log](std::span<const double> x) {
            ++log->g;
            return base.gradient(x);
        },
        base.suggested_start());
}

StoppingRule iterations(std::size_t n) {
    StoppingRule stop;
    stop.max_iters = n;
    return stop;
}

void expect_counts_match(const CallLog& log, const EvalCounter& counter, const RunTrace& trace) {
    EXPECT_EQ(counter.n_f, log.f.load());
    EXPECT_EQ(counter.n_g, log.g.load());
    std::uint64_t nf = 0, ng = 0;
    for (const auto& r : trace.records) {
        nf += r.n_f_used;
        ng += r.n_g_used;
    }
    // Only the initial f(x0) is outside the per-step records.
    EXPECT_EQ(nf + 1, counter.n_f);
    EXPECT_EQ(ng, counter.n_g);
}

}  // namespace

TEST(EvalCounter, MatchesInstrumentedCallsForEveryOptimizer) {
    const Vector x0{-1.2, 1.0};
    OptimizerState init;
    init.x = x0;
    init.gamma = 1e-3;
    BacktrackConfig bt;
    const auto check = [&](auto&& runner) {
        auto log = std::make_shared<CallLog>();
        const Objective obj = instrumented_rosenbrock(log);
        EvalCounter counter;
        const RunTrace trace = runner(obj, counter);
        ASSERT_GT(trace.records.size(), 0u);
        expect_counts_match(*log, counter, trace);
    };
    check([&](const Objective& o, EvalCounter& c) { return run(o, init, AutoGDConfig{}, iterations(50), c); });
    check([&](const Objective& o, EvalCounter& c) { return autobfgs_run(o, init, AutoGDConfig{}, iterations(50), c); });
    check([&](const Objective& o, EvalCounter& c) { return autolbfgs_run(o, init, AutoGDConfig{}, iterations(50), c); });
    check([&](const Objective& o, EvalCounter& c) { return gd_run(o, x0, 1e-3, iterations(50), c); });
    check([&](const Objective& o, EvalCounter& c) { return backtracking_run(o, x0, bt, iterations(50), c); });
    check([&](const Objective& o, EvalCounter& c) { return adgd2_run(o, x0, iterations(50), bt, c); });
    check([&](const Objective& o, EvalCounter& c) { return bfgs_run(o, x0, bt, iterations(50), c); });
    check([&](const Objective& o, EvalCounter& c) { return lbfgs_run(o, x0, bt, iterations(50), c); });
}

TEST(EvalCounter, ParallelCandidatesCountTheSame) {
    auto log = std::make_shared<CallLog>();
    const Objective obj = instrumented_rosenbrock(log);
    AutoGDConfig cfg;
    cfg.parallel_candidates = true;
    OptimizerState init;
    init.x = {-1.2, 1.0};
    init.gamma = 1e-3;
    EvalCounter counter;
    const RunTrace trace = run(obj, init, cfg, iterations(20), counter);
    expect_counts_match(*log, counter, trace);
    EXPECT_EQ(counter.n_f, 1u + 3u * 20u);
    EXPECT_EQ(counter.n_g, 20u);
}
