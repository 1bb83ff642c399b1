#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dapo/approx.hpp"
#include "dapo/mdp.hpp"
#include "dapo/mirror_maps.hpp"

namespace dapo {

// Actor-loss / projection pairings. The mirror map used for projection is
// implied: dapo_l2 projects with the Euclidean map, everything else with the
// entropy map (softmax of f).
enum class Algorithm { DapoKl, DapoKlStar, DapoL2, Ampo, AmpoV2, Mampo, Sac };

Algorithm algorithm_from_key(const std::string& key);
const char* algorithm_key(Algorithm alg);
MirrorVariant mirror_of(Algorithm alg);
LossKind loss_of(Algorithm alg);

// Step sizes grow geometrically past eta0 (ratio >= vartheta/(vartheta-1))
// or stay constant. Geometric steps are capped; past the cap all targets are
// formed in log space anyway, so the update degrades gracefully to greedy.
struct StepSchedule {
    enum class Kind { Geometric, Constant };
    Kind kind = Kind::Constant;
    double eta0 = 1.0;
    double ratio = 0.0;     // Geometric only; 0 means "derive from vartheta"
    double vartheta = 10.0; // assumed mismatch coefficient behind the default ratio

    static StepSchedule geometric(double eta0, double vartheta, double ratio = 0.0);
    static StepSchedule constant(double eta0);
    void validate() const;
    double eta(int k) const;
};

inline constexpr double kEtaCap = 1e8;

struct CriticConfig {
    enum class Mode { Exact, UniformNoise };
    Mode mode = Mode::Exact;
    double epsilon = 0.0;  // target E_s ||Qhat_s - Q_s||_inf
    void validate() const;
};

enum class ActorMode { Exact, Sgd };

struct DapoConfig {
    Algorithm algorithm = Algorithm::DapoKl;
    ApproxKind approx_kind = ApproxKind::Tabular;
    int mlp_hidden = 32;
    int linear_feature_dim = 0;  // 0 = one-hot features
    Vec linear_features;
    StepSchedule schedule = StepSchedule::constant(1.0);
    CriticConfig critic;
    ActorMode actor_mode = ActorMode::Exact;
    int actor_steps = 1;
    double actor_lr = 0.1;
    int actor_batch = 0;  // 0 = full batch
    int iterations = 100;
    double tau = 0.0;  // 0 = unregularized; > 0 only in SAC mode
    Vec rho;           // empty = uniform
    std::uint64_t seed = 0;
    bool record_iterates = false;  // keep the policy trace in the log
    Mat initial_policy;            // empty = uniform start

    void validate(const TabularMdp& mdp, bool sac_mode) const;
};

struct IterationRow {
    int k = 0;
    double eta = 0.0;
    double value_gap = 0.0;
    double actor_loss = 0.0;  // realized dual divergence of the step producing this iterate
    double critic_err = 0.0;  // realized E_{s~d}||Qhat_s - Q_s||_inf of that step
    double kl_prev = 0.0;     // D_Phi(pi^(k), pi^(k-1)) under E_{s~d^(k)}
    double d_star = 0.0;      // E_{s~d*}[D_Phi(pi*_s, pi^(k)_s)]
    double vartheta_hat = 1.0;  // running (A2) estimate
    double c_rho_hat = 0.0;     // running (A3) estimate, support-restricted
};

struct IterationLog {
    std::vector<IterationRow> rows;
    double vartheta_hat = 1.0;
    double c_rho_hat = 0.0;        // restricted to supp(d^(k))
    double c_rho_hat_full = 0.0;   // over all states
    double gap0 = 0.0;
    double d_star0 = 0.0;
    double sac_grad_identity_max_rel = 0.0;  // SAC mode diagnostic, 0 otherwise
    std::vector<Policy> iterates;  // filled only when record_iterates is set

    // Header: k,eta,value_gap,actor_loss,critic_err,kl_prev,d_star,vartheta_hat,c_rho_hat
    std::string to_csv() const;
    std::string to_json(const std::string& config_echo, std::uint64_t seed) const;
};

double schedule_eta(const StepSchedule& schedule, int k);

// Algorithm 1: critic step (exact or calibrated uniform noise), actor loss
// minimization (exact tabular fit or warm-started SGD), policy projection,
// per-iteration diagnostics against the optimal comparator.
IterationLog run_dapo(const TabularMdp& mdp, const DapoConfig& cfg);

// Entropy-regularized driver: critic evaluates Q_tau, the gap is measured
// against the tau-regularized optimum, and the step size is constant with
// eta <= 1/(tau * vartheta). Also cross-checks the actor gradient against
// the soft-q form of the loss at eta = 1/tau every iteration.
IterationLog run_sac_mode(const TabularMdp& mdp, const DapoConfig& cfg);

struct ConstantEstimates {
    double vartheta_hat = 1.0;
    double c_rho_hat = 0.0;       // support-restricted
    double c_rho_hat_full = 0.0;
};

// Recompute the realized (A2)/(A3) constants from a full iterate sequence
// (pi^(0..K)) with exact visitation solves.
ConstantEstimates estimate_constants(const TabularMdp& mdp, const std::vector<Policy>& iterates,
                                     const Policy& pi_star, const StateDistribution& rho);

// 17-significant-digit decimal formatting used for every CSV field.
std::string fmt_g17(double v);

}  // namespace dapo
