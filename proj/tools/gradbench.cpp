#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "gradbench/commands.hpp"

using namespace gradbench;

int main(int argc, char** argv) {
    CLI::App app{"Optimizer benchmark for small convolutional networks"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto* train = app.add_subcommand("train", "Train one configuration");
    train->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    train->add_option("--set", overrides, "Override a config entry (key=value)");

    std::optional<std::size_t> jobs;
    auto* sweep = app.add_subcommand("sweep", "Run every architecture/optimizer/transfer cell");
    sweep->add_option("--config", config_path, "Config file")->required()->check(CLI::ExistingFile);
    sweep->add_option("--jobs", jobs, "Parallel cells (default: hardware threads capped by GRADBENCH_THREADS)")
        ->check(CLI::PositiveNumber);
    sweep->add_option("--set", overrides, "Override a config entry (key=value)");

    std::string scope = "ops";
    std::uint64_t seed = 1;
    bool corrupt = false;
    auto* gradcheck = app.add_subcommand("gradcheck", "Compare analytic and finite-difference gradients");
    gradcheck->add_option("--scope", scope, "ops or networks")->check(CLI::IsMember({"ops", "networks"}));
    gradcheck->add_option("--seed", seed, "Random seed");
    gradcheck->add_flag("--corrupt-gradient", corrupt, "Perturb one analytic gradient (self-test)");

    cli::SynthArgs synth_args;
    auto* synth = app.add_subcommand("synth", "Write a synthetic image dataset with a manifest");
    synth->add_option("--out", synth_args.out, "Output directory")->required();
    synth->add_option("--classes", synth_args.classes, "Number of classes");
    synth->add_option("--per-class", synth_args.per_class, "Images per class");
    synth->add_option("--size", synth_args.size, "Image side length");
    synth->add_option("--noise", synth_args.noise, "Gaussian noise level");
    synth->add_option("--seed", synth_args.seed, "Random seed");
    synth->add_option("--pattern-offset", synth_args.pattern_offset, "First pattern index");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? cli::kExitOk : cli::kExitUsage;
    }

    cli::tune_allocator();
    if (*train) return cli::cmd_train(config_path, overrides, std::cout, std::cerr);
    if (*sweep) return cli::cmd_sweep(config_path, jobs, overrides, std::cout, std::cerr);
    if (*gradcheck) {
        auto s = scope == "networks" ? GradCheckScope::networks : GradCheckScope::ops;
        return cli::cmd_gradcheck(s, seed, corrupt, std::cout, std::cerr);
    }
    return cli::cmd_synth(synth_args, std::cout, std::cerr);
}
