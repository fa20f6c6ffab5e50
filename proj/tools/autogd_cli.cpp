#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "cli_commands.hpp"

namespace {

void add_common(CLI::App& sub, autogd::cli::CliConfig& cfg) {
    sub.add_option("--problem", cfg.problems, "Problem id(s)")->delimiter(',');
    sub.add_option("--optimizer", cfg.optimizers, "Optimizer id(s)")->delimiter(',');
    sub.add_option("--rates", cfg.rates, "Learning rates")->delimiter(',');
    sub.add_option("--seeds,--seed", cfg.seeds, "Seeds")->delimiter(',');
    sub.add_option("--max-iters", cfg.max_iters, "Iteration cap per run");
    sub.add_option("--budget", cfg.budget, "Eval-weighted cost cap per run");
    sub.add_option("--out", cfg.out, "Output directory");
    sub.add_option("--cost-model", cfg.cost_model, "parallel or sequential")
        ->check(CLI::IsMember({"parallel", "sequential"}));
    sub.add_option("--workers", cfg.workers, "Concurrent runs");
    sub.add_option("--c", cfg.c, "AutoGD rate factor");
    sub.add_option("--eta", cfg.eta, "Armijo constant");
    sub.add_option("--sigma-sq", cfg.sigma_sq, "Diffuse initialization variance");
}

}  // namespace

int main(int argc, char** argv) {
    autogd::cli::CliConfig cfg;
    CLI::App app{"AutoGD optimizers, benchmark corpus and experiment harness"};
    app.set_config("--config", "", "TOML/INI file whose keys mirror the flags");
    app.require_subcommand(1);

    auto* run = app.add_subcommand("run", "Single optimization run; writes its trace");
    auto* bench = app.add_subcommand("bench", "Run matrix plus success-curve CSV");
    auto* ce = app.add_subcommand("counterexample", "Ablation vs. full AutoGD on a constructed fixture");
    auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient validation");
    auto* list = app.add_subcommand("list", "List problems, optimizers, suites and families");
    for (auto* sub : {run, bench, ce, gc}) add_common(*sub, cfg);

    bench->add_option("--suite", cfg.suite, "classical, extreme, counterexamples or all");
    ce->add_option("--family", cfg.family, "poly_divergence, limit_cycle or local_max_trap")->required();
    ce->add_option("--trials", cfg.trials, "Diffuse-start seeds for local_max_trap");
    ce->add_option("--gamma0", cfg.gamma0);
    ce->add_option("--x0", cfg.x0);
    ce->add_option("--b", cfg.b);
    ce->add_option("--x-bar", cfg.x_bar);
    ce->add_option("--delta", cfg.delta);
    gc->add_option("--points", cfg.points, "Random points per function");
    gc->add_option("--tolerance", cfg.tolerance, "Relative error tolerance");
    (void)list;

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    cfg.command = app.get_subcommands().front()->get_name();
    if (cfg.command == "counterexample" && !ce->count("--max-iters")) cfg.max_iters = 10000;
    return autogd::cli::dispatch(cfg, std::cout, std::cerr);
}
