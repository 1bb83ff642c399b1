#include <cstdint>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "dapo/errors.hpp"
#include "dapo/experiments.hpp"

namespace {

dapo::ExperimentConfig load_config(const std::string& path, bool seed_set, std::uint64_t seed) {
    if (path.empty()) throw dapo::ConfigError("missing --config <path>");
    dapo::ExperimentConfig cfg = dapo::ExperimentConfig::from_file(path);
    if (seed_set) cfg.seed = seed;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mirror-descent policy optimization experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir = "out";
    std::uint64_t seed = 0;
    bool seed_set = false;
    bool quiet = false;
    app.add_option("--config", config_path, "experiment config (JSON)");
    app.add_option("--out", out_dir, "output directory");
    app.add_option("--seed", seed, "override the config master seed")
        ->each([&](const std::string&) { seed_set = true; });
    app.add_flag("--quiet", quiet, "suppress progress output");

    auto* run = app.add_subcommand("run", "seeded repetitions of one algorithm");
    auto* sweep = app.add_subcommand("sweep", "cartesian hyperparameter sweep");
    auto* compare = app.add_subcommand("compare", "algorithms side by side on shared seeds");
    auto* verify = app.add_subcommand("verify", "numerical lemma verification");
    auto* gen = app.add_subcommand("gen-mdp", "write the configured MDP to a JSON file");
    for (auto* sub : {run, sweep, compare, verify, gen}) sub->fallthrough();

    std::string selector = "all";
    double verify_scale = 1.0;
    bool inject_fault = false;
    verify->add_option("selector", selector, "lemma name or 'all'");
    verify->add_option("--scale", verify_scale, "sample count multiplier");
    verify->add_flag("--inject-fault", inject_fault, "test hook: corrupt a Bregman value");

    std::string gen_out = "mdp.json";
    gen->add_option("--file", gen_out, "output path for the MDP");

    CLI11_PARSE(app, argc, argv);

    try {
        if (run->parsed())
            return dapo::cmd_run(load_config(config_path, seed_set, seed), out_dir, quiet);
        if (sweep->parsed())
            return dapo::cmd_sweep(load_config(config_path, seed_set, seed), out_dir, quiet);
        if (compare->parsed())
            return dapo::cmd_compare(load_config(config_path, seed_set, seed), out_dir, quiet);
        if (verify->parsed())
            return dapo::cmd_verify(selector, out_dir, seed_set ? seed : 20240701, verify_scale,
                                    inject_fault, quiet);
        if (gen->parsed())
            return dapo::cmd_gen_mdp(load_config(config_path, seed_set, seed), gen_out, quiet);
    } catch (const dapo::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return dapo::kExitConfigError;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return dapo::kExitRuntimeError;
    }
    return dapo::kExitOk;
}
