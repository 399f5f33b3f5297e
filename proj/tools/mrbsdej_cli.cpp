#include "mrbsdej/commands.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
    CLI::App app{"Mean-reflected BSDEs with jumps: solvers and propagation-of-chaos experiments"};
    app.require_subcommand(1);

    mrbsdej::CommandOptions opt;
    std::uint64_t seed = 0;
    std::string out_dir, backend;
    int jobs = 0;

    const char* names[] = {"validate", "solve-single", "solve-particles", "chaos-rate", "probe-regularity"};
    const char* help[] = {"check the assumptions of a config", "solve the mean-reflected BSDE",
                          "solve the interacting particle system", "propagation-of-chaos rate sweep",
                          "time-regularity probes on refined grids"};
    for (int i = 0; i < 5; ++i) {
        CLI::App* sub = app.add_subcommand(names[i], help[i]);
        sub->add_option("--config", opt.config_path, "run config (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--seed", seed, "overrides master_seed");
        sub->add_option("--out", out_dir, "output directory");
        sub->add_flag("--force", opt.force, "run despite failed assumption checks");
        sub->add_option("--backend", backend, "exact | mc")->check(CLI::IsMember({"exact", "mc"}));
        sub->add_option("--jobs", jobs, "worker threads")->check(CLI::PositiveNumber);
    }
    CLI11_PARSE(app, argc, argv);

    CLI::App* sub = app.get_subcommands().front();
    if (sub->count("--seed")) opt.seed = seed;
    if (sub->count("--out")) opt.out_dir = out_dir;
    if (sub->count("--backend")) opt.backend = backend;
    if (sub->count("--jobs")) opt.jobs = jobs;
    return mrbsdej::run_subcommand(sub->get_name(), opt, std::cout, std::cerr);
}
