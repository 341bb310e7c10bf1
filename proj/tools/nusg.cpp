#include "nusg/cli.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Non-uniform small-gain toolkit: trapping checks, simulation and identifier reproduction"};
    app.require_subcommand(1);
    nusg::cli::Options opts;
    std::string config, out = "out";
    std::uint64_t seed = 0;
    double dt = 0.0, horizon = 0.0;

    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", config, "Scenario file");
        sub->add_option("--out", out, "Output directory")->capture_default_str();
        sub->add_option("--seed", seed, "Seed for random initial-condition fans");
        sub->add_option("--dt", dt, "Step size override");
        sub->add_option("--horizon", horizon, "Final time override");
        sub->add_flag("--json", opts.json, "Print the summary as JSON");
    };
    auto* check = app.add_subcommand("check", "Evaluate trapping and small-gain conditions");
    auto* simulate = app.add_subcommand("simulate", "Integrate a fixture and classify the run");
    auto* reproduce = app.add_subcommand("reproduce", "Regenerate constants, ex1 or ex2 outputs");
    auto* sweep = app.add_subcommand("sweep", "Run a scenario over a range of one parameter");
    for (auto* sub : {check, simulate, reproduce, sweep}) add_common(sub);
    reproduce->add_option("which", opts.which, "constants, ex1 or ex2")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : nusg::cli::kExitUsage;
    }

    opts.command = app.get_subcommands().front()->get_name();
    auto* sub = app.get_subcommands().front();
    if (!config.empty()) opts.config = config;
    opts.out = out;
    if (sub->count("--seed")) opts.seed = seed;
    if (sub->count("--dt")) opts.dt = dt;
    if (sub->count("--horizon")) opts.horizon = horizon;
    return nusg::cli::run(opts, std::cout, std::cerr);
}
