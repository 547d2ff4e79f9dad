#include "cli/commands.hpp"

#include "CLI11.hpp"

#include <iostream>

int main(int argc, char** argv) {
    using namespace rbsde::cli;
    CLI::App app{"Reflected BSDE lab: simulate, solve and verify regime-switching problems"};
    app.set_version_flag("--version", code_version());
    app.require_subcommand(1);

    RunOptions opts;
    std::uint64_t seed = 0;
    unsigned threads = 0;
    std::string other;
    std::string run_dir;

    auto add_run = [&](const char* name, const char* help) {
        CLI::App* sub = app.add_subcommand(name, help);
        sub->add_option("--config", opts.config, "Run configuration (JSON)")->required()->check(CLI::ExistingFile);
        sub->add_option("--out", run_dir, "Output directory (overrides output.directory)");
        sub->add_option("--seed", seed, "Seed (overrides the config)");
        sub->add_option("--threads", threads, "Worker threads; affects speed only")->check(CLI::PositiveNumber);
        return sub;
    };
    add_run("simulate", "Simulate paths and check the compensator");
    add_run("solve", "Solve the configured problem and check the reflection invariants");
    add_run("check", "Solve and run every configured check");
    add_run("compare", "Solve two problems and run the comparison check")
        ->add_option("--other", other, "Config of the primed problem")
        ->check(CLI::ExistingFile);
    CLI::App* rep = app.add_subcommand("report", "Verify a run directory and print its summary");
    rep->add_option("--out,dir", run_dir, "Run directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : kExitConfig;
    }

    CLI::App* sub = app.get_subcommands().front();
    if (sub->get_name() == "report") return report_command(run_dir, std::cout, std::cerr);
    if (sub->count("--out")) opts.out = run_dir;
    if (sub->count("--seed")) opts.seed = seed;
    if (sub->count("--threads")) opts.threads = threads;
    if (sub->get_name() == "compare" && sub->count("--other")) opts.other = other;
    return run_command(sub->get_name(), opts, std::cout, std::cerr);
}
