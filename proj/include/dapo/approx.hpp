#pragma once

#include <cstdint>
#include <string>

#include "dapo/linalg.hpp"
#include "dapo/mdp.hpp"

namespace dapo {

enum class ApproxKind { Tabular, Linear, Mlp };

// Parametrized dual-space function f^theta over S x A. Three families:
//   Tabular  - one parameter per (s,a), can represent any target exactly
//   Linear   - f(s,a) = <phi[s,a], theta>, features given up front
//   Mlp      - one-hot state input, two tanh hidden layers, |A| outputs,
//              hand-written backprop (no autodiff dependency)
struct ApproxFunction {
    ApproxKind kind = ApproxKind::Tabular;
    int n_states = 0;
    int n_actions = 0;
    Vec theta;

    // Linear spec: features[(s*A + a)*feature_dim + j]
    int feature_dim = 0;
    Vec features;

    // Mlp spec
    int hidden = 0;

    static ApproxFunction tabular(int n_states, int n_actions);
    static ApproxFunction linear(int n_states, int n_actions, Vec features, int feature_dim);
    // One-hot features: reproduces the tabular family through the linear path.
    static ApproxFunction linear_one_hot(int n_states, int n_actions);
    static ApproxFunction mlp(int n_states, int n_actions, int hidden, std::uint64_t init_seed);

    double eval(int s, int a) const;
    Vec eval_state(int s) const;  // the vector f_s
    Mat eval_all() const;         // S x A

    // Chain rule from a per-(s,a) loss gradient dL/df to dL/dtheta.
    Vec backprop(const Mat& dl_df) const;

    std::string to_json() const;
    static ApproxFunction from_json(const std::string& text);
};

enum class LossKind { DapoKl, DapoKlStar, DapoL2, Ampo, AmpoV2, Mampo, Sac };

const char* loss_kind_name(LossKind k);

// Everything a loss needs besides f itself. The builders below fill in the
// member matching the loss kind; weights are the state distribution the
// expectation is taken under.
struct ActorTarget {
    LossKind kind = LossKind::DapoKl;
    Vec weights;            // d[s], sums to 1
    Mat dual_target;        // L2-style regression target t[s][a]
    Mat log_target;         // DapoKl: normalized log p; DapoKlStar: log m (unnormalized)
    Mat q_soft;             // Sac
    double tau = 0.0;       // Sac
};

// log_pi rows are normalized log-probabilities of the current policy. All
// targets use the cost-minimization sign, i.e. -eta * qhat.
ActorTarget make_target_dapo_kl(const Mat& log_pi, const Mat& qhat, double eta, Vec weights);
ActorTarget make_target_dapo_klstar(const Mat& log_pi, const Mat& qhat, double eta, Vec weights);
ActorTarget make_target_dapo_l2(const Mat& pi, const Mat& qhat, double eta, Vec weights);
ActorTarget make_target_ampo(const Mat& log_pi, const Mat& qhat, double eta, Vec weights);
ActorTarget make_target_ampo_v2(const Mat& f_prev, const Mat& qhat, double eta, Vec weights);
ActorTarget make_target_mampo(const Mat& pi, const Mat& qhat, double eta, Vec weights);
ActorTarget make_target_sac(const Mat& q_soft, double tau, Vec weights);

// Loss value; throws DomainError on domain violations (non-positive KL
// targets, f entries above the exp overflow guard for the KL* loss).
double actor_loss(const ApproxFunction& f, const ActorTarget& target);

// Exact analytic gradient of the loss with respect to theta.
Vec loss_gradient(const ApproxFunction& f, const ActorTarget& target);

// Loss and the per-(s,a) gradient dL/df in one pass.
double loss_with_df(const ApproxFunction& f, const ActorTarget& target, Mat& dl_df);

// Named per-loss wrappers. pi_k rows must be strictly positive where logs
// are taken; eta > 0.
double loss_dapo_kl(const ApproxFunction& f, const ActorTarget& target);
double loss_dapo_klstar(const ApproxFunction& f, const ActorTarget& target);
double loss_dapo_l2(const ApproxFunction& f, const ActorTarget& target);
double loss_ampo(const ApproxFunction& f, const Policy& pi_k, const Mat& qhat, double eta,
                 const Vec& weights);
double loss_ampo_v2(const ApproxFunction& f, const ApproxFunction& f_k, const Mat& qhat,
                    double eta, const Vec& weights);
double loss_mampo(const ApproxFunction& f, const Policy& pi_k, const Mat& qhat, double eta,
                  const Vec& weights);
double loss_sac(const ApproxFunction& f, const Policy& pi_k, const Mat& q_soft, double tau,
                const Vec& weights);

struct SgdOptions {
    int steps = 1;
    double lr = 0.1;
    int batch = 0;  // 0 = full batch, otherwise uniform state minibatch size
    std::uint64_t seed = 0;
};

struct SgdResult {
    ApproxFunction f;
    double final_loss = 0.0;
};

// Plain (possibly stochastic) gradient descent on the actor loss. Throws
// DivergenceError when the loss stops being finite, ConfigError on steps < 1.
SgdResult sgd_minimize(const ApproxFunction& f0, const ActorTarget& target, const SgdOptions& opt);

// Set a Tabular function to the exact minimizer of the target (zero loss).
void exact_fit(ApproxFunction& f, const ActorTarget& target);

Mat log_probs_of(const Policy& pi);  // log pi, throws DomainError on zeros

}  // namespace dapo
