#pragma once

// Command implementations behind the autogd command-line tool. Kept in a
// header so tests can call them directly with in-memory streams.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "autogd/autogd.hpp"
#include "autogd/corpus.hpp"
#include "autogd/errors.hpp"
#include "autogd/harness.hpp"
#include "autogd/objective.hpp"

namespace autogd::cli {

struct CliConfig {
    std::string command;
    std::vector<std::string> problems;
    std::string suite;
    std::vector<std::string> optimizers;
    std::vector<double> rates;
    std::vector<std::uint64_t> seeds;
    std::size_t max_iters = 1000;
    std::optional<std::uint64_t> budget;
    std::filesystem::path out = "autogd_out";
    std::string cost_model = "parallel";
    std::size_t workers = 1;
    double c = 2.0;
    double eta = 1e-4;
    double sigma_sq = 1e-12;

    // counterexample
    std::string family;
    std::size_t trials = 100;
    std::optional<double> gamma0;
    std::optional<double> x0;
    std::optional<double> b;
    std::optional<double> x_bar;
    std::optional<double> delta;

    // gradcheck
    std::size_t points = 100;
    double tolerance = 1e-5;

    void validate() const {
        if (workers == 0) throw UsageError("--workers must be at least 1");
        if (max_iters == 0) throw UsageError("--max-iters must be at least 1");
        harness::cost_model_from_string(cost_model);
        for (const auto& p : problems) corpus::find(p);
        for (const auto& o : optimizers)
            if (!harness::is_known_optimizer(o)) throw UsageError("unknown optimizer id '" + o + "'");
        for (double r : rates)
            if (!(r > 0.0) || !std::isfinite(r)) throw UsageError("learning rates must be positive and finite");
        if (!(sigma_sq > 0.0)) throw UsageError("--sigma-sq must be positive");
        AutoGDConfig{c, eta}.validate();
        if (!suite.empty()) corpus::suite(suite);
        if (!family.empty()) corpus::family_from_string(family);
    }

    harness::HarnessConfig harness_config() const {
        harness::HarnessConfig h;
        h.autogd.c = c;
        h.autogd.eta = eta;
        h.sigma_sq = sigma_sq;
        h.cost_model = harness::cost_model_from_string(cost_model);
        return h;
    }
};

namespace detail {

inline double final_grad_norm(const RunTrace& trace) {
    if (!all_finite(trace.x_final)) return std::numeric_limits<double>::quiet_NaN();
    return norm(corpus::find(trace.spec.problem_id).gradient(trace.x_final));
}

inline std::uint64_t total_evals(const RunTrace& trace) {
    std::uint64_t n = 0;
    for (const StepRecord& r : trace.records) n += r.n_f_used + r.n_g_used;
    return n;
}

}  // namespace detail

/// Single run: first problem, optimizer, rate and seed from the config.
inline int cmd_run(const CliConfig& cfg, std::ostream& out, std::ostream&) {
    cfg.validate();
    RunSpec spec;
    spec.problem_id = cfg.problems.empty() ? "valley" : cfg.problems.front();
    spec.optimizer_id = cfg.optimizers.empty() ? "autogd" : cfg.optimizers.front();
    spec.learning_rate = cfg.rates.empty() ? 1.0 : cfg.rates.front();
    spec.seed = cfg.seeds.empty() ? 0 : cfg.seeds.front();
    spec.max_iters = cfg.max_iters;
    spec.budget = cfg.budget;
    const auto hcfg = cfg.harness_config();
    const RunTrace trace = harness::execute_run(spec, hcfg);
    harness::persist_trace(cfg.out, trace, hcfg.cost_model);

    out << "problem      " << spec.problem_id << '\n'
        << "optimizer    " << spec.optimizer_id << '\n'
        << "status       " << to_string(trace.status) << '\n'
        << "final f      " << harness::format_number(trace.final_value()) << '\n'
        << "final |grad| " << harness::format_number(detail::final_grad_norm(trace)) << '\n'
        << "iterations   " << trace.records.size() << '\n'
        << "evals        " << detail::total_evals(trace) << '\n'
        << "trace        " << harness::trace_path(cfg.out, spec).string() << '\n';
    return 0;
}

/// Run matrix over problems x optimizers x rates x seeds, then the success curve.
inline int cmd_bench(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    cfg.validate();
    std::string suite_name = cfg.suite;
    std::vector<std::string> problems = cfg.problems;
    if (problems.empty()) {
        if (suite_name.empty()) suite_name = "classical";
        problems = corpus::suite(suite_name);
    } else if (suite_name.empty()) {
        suite_name = "custom";
    }
    const auto optimizers = cfg.optimizers.empty() ? harness::optimizer_ids() : cfg.optimizers;
    const auto rates = cfg.rates.empty() ? harness::default_rate_grid() : cfg.rates;
    const auto seeds = cfg.seeds.empty() ? std::vector<std::uint64_t>{0} : cfg.seeds;
    const auto specs = harness::make_matrix(problems, optimizers, rates, seeds, cfg.max_iters, cfg.budget);
    const auto hcfg = cfg.harness_config();

    const auto traces = harness::execute_matrix(specs, hcfg, cfg.workers, cfg.out);
    const auto curve = harness::success_curves(traces);
    const auto csv_path = cfg.out / "curves" / (suite_name + ".csv");
    std::filesystem::create_directories(csv_path.parent_path());
    {
        std::ofstream csv(csv_path, std::ios::binary | std::ios::trunc);
        harness::write_curves_csv(csv, curve);
        if (!csv) {
            err << "error: could not write " << csv_path.string() << '\n';
            return 1;
        }
    }

    std::size_t by_status[4] = {0, 0, 0, 0};
    for (const auto& t : traces) ++by_status[static_cast<int>(t.status)];
    out << specs.size() << " runs: " << by_status[0] << " converged, " << by_status[1] << " budget, "
        << by_status[2] << " diverged, " << by_status[3] << " stagnant\n";
    for (const auto& s : curve.series)
        out << "  " << s.optimizer << " @ " << harness::format_number(s.learning_rate)
            << "  final success " << harness::format_number(s.fraction.back()) << '\n';
    out << "curves  " << csv_path.string() << '\n';
    return 0;
}

namespace detail {

inline OptimizerState fixed_start(double x0, double gamma0) {
    OptimizerState s;
    s.x = {x0};
    s.gamma = gamma0;
    return s;
}

inline StoppingRule fixture_stop(std::size_t iters, std::optional<double> grad_tol) {
    StoppingRule stop;
    stop.max_iters = iters;
    stop.grad_tol = grad_tol;
    stop.record_iterates = true;
    stop.stagnation_window = iters + 1;
    return stop;
}

inline int report(std::ostream& out, bool failure_mode, bool control) {
    out << "predicted failure mode: " << (failure_mode ? "observed" : "NOT observed") << '\n'
        << "control run (full AutoGD): " << (control ? "converged" : "did NOT converge") << '\n';
    return failure_mode && control ? 0 : 1;
}

}  // namespace detail

/// Runs the ablation that each counterexample is built to break, next to a
/// full AutoGD control run on the same fixture.
inline int cmd_counterexample(const CliConfig& cfg, std::ostream& out, std::ostream&) {
    cfg.validate();
    if (cfg.family.empty()) throw UsageError("counterexample: --family is required");
    const corpus::Family family = corpus::family_from_string(cfg.family);
    const std::size_t iters = cfg.max_iters;
    out << "family " << corpus::to_string(family) << '\n';

    switch (family) {
        case corpus::Family::poly_divergence: {
            const auto p = corpus::make_poly_divergence(cfg.c, cfg.gamma0.value_or(1.0), cfg.x0.value_or(3.0));
            const Objective obj = corpus::make_objective(p);
            out << "p = " << p.p << "  (f = x^" << 2 * p.p << ")\n";

            AutoGDConfig ablated{p.c, cfg.eta};
            ablated.no_movement_enabled = false;
            const RunTrace bad = run(obj, detail::fixed_start(p.x0, p.gamma0), ablated,
                                     detail::fixture_stop(std::min<std::size_t>(iters, 200), std::nullopt));
            std::size_t streak = 0;
            double min_ratio = std::numeric_limits<double>::infinity();
            for (std::size_t t = 0; t + 1 < bad.iterates.size(); ++t) {
                const double a = std::abs(bad.iterates[t][0]);
                const double b = std::abs(bad.iterates[t + 1][0]);
                if (!std::isfinite(b) || !std::isfinite(bad.records[t].f_after)) break;
                const double ratio = b / a;
                min_ratio = std::min(min_ratio, ratio);
                if (ratio < p.c) break;
                ++streak;
            }
            out << "ablation (no-movement off): " << streak << " consecutive steps with |x_{t+1}|/|x_t| >= "
                << harness::format_number(p.c) << ", min ratio " << harness::format_number(min_ratio)
                << ", status " << to_string(bad.status) << '\n';
            const bool failure = streak >= 3 && bad.status == TerminalStatus::diverged;

            const RunTrace good = run(obj, detail::fixed_start(p.x0, p.gamma0), AutoGDConfig{p.c, cfg.eta},
                                      detail::fixture_stop(iters, 1e-8));
            out << "control: status " << to_string(good.status) << " after " << good.records.size()
                << " iterations\n";
            return detail::report(out, failure, good.status == TerminalStatus::converged);
        }
        case corpus::Family::limit_cycle: {
            const auto p = corpus::make_limit_cycle(cfg.x_bar.value_or(5.0), cfg.delta.value_or(1e-3));
            const Objective obj = corpus::make_objective(p);
            out << "b = " << harness::format_number(p.b) << "  gamma0 = " << harness::format_number(p.gamma0) << '\n';

            AutoGDConfig ablated{p.c, 0.0};
            ablated.armijo_enabled = false;
            const RunTrace bad = run(obj, detail::fixed_start(p.x0, p.gamma0), ablated, detail::fixture_stop(iters, 1e-6));
            std::size_t alternations = 0;
            while (alternations + 1 < bad.iterates.size() &&
                   bad.iterates[alternations][0] * bad.iterates[alternations + 1][0] < 0.0)
                ++alternations;
            out << "ablation (eta = 0): " << alternations << " sign alternations before leaving the cycle, "
                << bad.records.size() << " iterations, status " << to_string(bad.status) << '\n';
            bool cycling = bad.iterates.size() >= 3 && bad.status != TerminalStatus::converged;
            if (cycling) {
                const double last = bad.iterates.back()[0];
                const double prev = bad.iterates[bad.iterates.size() - 2][0];
                const double tol = 1e-3;
                cycling = std::abs(std::abs(last) - p.x_bar) <= tol && std::abs(std::abs(prev) - p.x_bar) <= tol &&
                          last * prev < 0.0 && std::abs(obj.gradient(bad.iterates.back())[0]) >= 1.0;
                out << "ablation (eta = 0): last iterates " << harness::format_number(prev) << ", "
                    << harness::format_number(last) << '\n';
            }
            const RunTrace good = run(obj, detail::fixed_start(p.x0, p.gamma0), AutoGDConfig{p.c, cfg.eta},
                                      detail::fixture_stop(iters, 1e-6));
            out << "control: status " << to_string(good.status) << " after " << good.records.size()
                << " iterations\n";
            return detail::report(out, cycling, good.status == TerminalStatus::converged);
        }
        case corpus::Family::local_max_trap: {
            const auto p = corpus::make_local_max_trap(cfg.x0.value_or(3.0), cfg.b.value_or(5.0), cfg.eta);
            const Objective obj = corpus::make_objective(p);
            out << "gamma0 = " << harness::format_number(p.gamma0) << '\n';
            const AutoGDConfig acfg{p.c, p.eta};

            const RunTrace det = run(obj, detail::fixed_start(p.x0, p.gamma0), acfg, detail::fixture_stop(50, std::nullopt));
            bool trapped = det.iterates.size() > 1;
            for (std::size_t t = 1; t < det.iterates.size(); ++t) trapped = trapped && det.iterates[t][0] == 0.0;
            out << "deterministic start: " << (trapped ? "stuck at x = 0" : "escaped") << '\n';

            // No gradient-tolerance stop here: near x = 0 the gradient is tiny
            // too, so a tolerance would end runs while they are still escaping.
            std::size_t at_max = 0;
            std::size_t converged_low = 0;
            for (std::size_t s = 0; s < cfg.trials; ++s) {
                InitSpec init{{p.x0}, std::log(p.gamma0), cfg.sigma_sq, s};
                const RunTrace r = run(obj, diffuse_init(init), acfg, detail::fixture_stop(iters, std::nullopt));
                if (std::abs(r.x_final[0]) < 0.1) ++at_max;
                if (std::abs(obj.gradient(r.x_final)[0]) <= 1e-6 && r.final_value() < p.b) ++converged_low;
            }
            out << "diffuse start: " << at_max << "/" << cfg.trials << " runs at the local maximum, "
                << converged_low << "/" << cfg.trials << " converged below the bump\n";
            return detail::report(out, trapped, at_max == 0 && converged_low == cfg.trials);
        }
    }
    return 1;
}

/// Gradient validation over `pool`: suggested start plus `points` uniform
/// draws from each function's sampling box.
inline int cmd_gradcheck_on(const std::vector<Objective>& pool, const CliConfig& cfg, std::ostream& out,
                            std::ostream& err) {
    int failures = 0;
    for (const Objective& obj : pool) {
        const SamplingBox box = obj.sampling_box();
        std::mt19937_64 rng(harness::detail::fnv1a(obj.id()));
        std::uniform_real_distribution<double> draw(box.lower, box.upper);
        double worst = 0.0;
        bool ok = true;
        for (std::size_t k = 0; k <= cfg.points; ++k) {
            Vector x = obj.suggested_start();
            if (k > 0)
                for (double& v : x) v = draw(rng);
            const GradientCheck gc = check_gradient(obj, x, kGradientCheckStep);
            worst = std::max(worst, gc.max_relative_error);
            if (!gc.passed(cfg.tolerance)) ok = false;
        }
        out << (ok ? "ok    " : "FAIL  ") << obj.id() << "  max rel err " << harness::format_number(worst) << '\n';
        if (!ok) {
            err << "gradient check failed for '" << obj.id() << "'\n";
            ++failures;
        }
    }
    return failures == 0 ? 0 : 1;
}

inline int cmd_gradcheck(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    cfg.validate();
    std::vector<Objective> pool;
    if (cfg.problems.empty())
        pool = corpus::registry();
    else
        for (const auto& id : cfg.problems) pool.push_back(corpus::find(id));
    return cmd_gradcheck_on(pool, cfg, out, err);
}

inline int cmd_list(const CliConfig&, std::ostream& out, std::ostream&) {
    out << "problems:\n";
    for (const Objective& obj : corpus::registry()) {
        out << "  " << obj.id() << "  d=" << obj.dimension();
        if (obj.known_minimum()) out << "  min=" << harness::format_number(*obj.known_minimum());
        out << '\n';
    }
    out << "optimizers:\n";
    for (const auto& id : harness::optimizer_ids()) out << "  " << id << '\n';
    out << "suites:\n  classical\n  extreme\n  counterexamples\n  all\n";
    out << "counterexample families:\n  poly_divergence\n  limit_cycle\n  local_max_trap\n";
    return 0;
}

/// Exit codes: 0 success, 1 a run or assertion failed, 2 invalid usage.
inline int dispatch(const CliConfig& cfg, std::ostream& out, std::ostream& err) {
    try {
        if (cfg.command == "run") return cmd_run(cfg, out, err);
        if (cfg.command == "bench") return cmd_bench(cfg, out, err);
        if (cfg.command == "counterexample") return cmd_counterexample(cfg, out, err);
        if (cfg.command == "gradcheck") return cmd_gradcheck(cfg, out, err);
        if (cfg.command == "list") return cmd_list(cfg, out, err);
        throw UsageError("unknown command '" + cfg.command + "'");
    } catch (const UsageError& e) {
        err << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return 1;
    }
}

}  // namespace autogd::cli
