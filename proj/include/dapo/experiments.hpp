#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dapo/engine.hpp"

namespace dapo {

// Where the MDP comes from: a seeded random generator, a gridworld, or a
// JSON file on disk.
struct MdpSource {
    std::string kind = "random";  // random | gridworld | file
    int n_states = 5;
    int n_actions = 3;
    std::uint64_t seed = 1;
    double gamma = 0.9;
    int size = 4;       // gridworld
    double slip = 0.1;  // gridworld
    std::string path;   // file

    TabularMdp build() const;
};

// Full experiment description; JSON schema documented in the README with a
// complete example under configs/.
struct ExperimentConfig {
    MdpSource mdp;
    std::string algorithm = "dapo_kl";
    std::string mirror;  // optional; must match the algorithm's projection map

    std::string approx_kind = "tabular";  // tabular | linear | mlp
    int mlp_hidden = 32;
    int linear_feature_dim = 0;  // 0 = one-hot

    std::string schedule_kind = "constant";  // constant | geometric
    double eta0 = 1.0;
    double ratio = 0.0;  // geometric; 0 = vartheta/(vartheta-1)
    double vartheta = 10.0;

    std::string critic_mode = "exact";  // exact | uniform_noise
    double critic_epsilon = 0.0;

    std::string actor_mode = "exact";  // exact | sgd
    int actor_steps = 1;
    double actor_lr = 0.1;
    int actor_batch = 0;

    int iterations = 100;
    double tau = 0.0;
    std::string rho = "uniform";  // "uniform" or "custom" with rho_weights
    Vec rho_weights;

    int repetitions = 1;
    std::uint64_t seed = 42;

    bool has_sweep = false;
    std::vector<std::string> sweep_algorithms;
    std::vector<double> sweep_eta0;
    std::vector<double> sweep_lr;
    std::vector<int> sweep_m;

    bool has_compare = false;
    std::vector<std::string> compare_algorithms;
    std::vector<int> compare_m = {1, 10};
    std::vector<std::uint64_t> compare_seeds;

    static ExperimentConfig from_json(const std::string& text);
    static ExperimentConfig from_file(const std::string& path);
    std::string to_json() const;

    DapoConfig engine_config(const TabularMdp& mdp_built) const;
    bool sac_mode() const { return algorithm == "sac"; }
};

// Exit codes shared by the CLI: 0 ok, 1 verification failure, 2 config
// error, 3 runtime failure.
inline constexpr int kExitOk = 0;
inline constexpr int kExitVerifyFailure = 1;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitRuntimeError = 3;

// `repetitions` seeded runs; one CSV per run plus aggregate.json with the
// per-iteration mean and 95% t-interval of the value gap.
int cmd_run(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet);

// Cartesian sweep over {algorithm, eta0, lr, m}; one subdirectory per grid
// point plus a summary CSV of final gaps. A failing grid point is recorded
// and the sweep continues.
int cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet);

// All listed algorithms on the same seeded MDPs for every m in compare_m;
// emits per-run CSVs plus a long-format compare.csv
// (algorithm,m,seed,k,value_gap).
int cmd_compare(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet);

// Lemma fuzz campaigns; prints per-lemma pass counts.
int cmd_verify(const std::string& selector, const std::string& out_dir, std::uint64_t seed,
               double scale, bool inject_fault, bool quiet);

// Materialize the configured MDP to a JSON file.
int cmd_gen_mdp(const ExperimentConfig& cfg, const std::string& out_path, bool quiet);

// 95% two-sided Student-t quantile (t_{0.975, df}), used for the aggregate
// confidence intervals.
double student_t_975(int df);

}  // namespace dapo
