#pragma once

#include <cstdint>
#include <string>
#include <utility>

#include "dapo/linalg.hpp"

namespace dapo {

// Finite MDP with costs in [0, 1] and discount gamma in (0, 1). Cost
// minimization everywhere; there is no reward mode.
struct TabularMdp {
    int n_states = 0;
    int n_actions = 0;
    Vec transition;  // P[s][a][s'], index ((s * A) + a) * S + s'
    Mat cost;        // c[s][a]
    double gamma = 0.9;

    double p(int s, int a, int s2) const {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    double& p(int s, int a, int s2) {
        return transition[(static_cast<std::size_t>(s) * n_actions + a) * n_states + s2];
    }
    void validate() const;  // row-stochastic P, cost bounds, gamma range
};

// Row-stochastic |S| x |A| table; the primal iterate of every algorithm.
struct Policy {
    Mat probs;
    int n_states() const { return probs.rows; }
    int n_actions() const { return probs.cols; }
    void validate() const;
    static Policy uniform(int n_states, int n_actions);
};

struct ValueEstimate {
    Vec v;       // V[s]
    Mat q;       // Q[s][a]
    double tau = 0.0;
};

struct StateDistribution {
    Vec weights;
    void validate() const;
    static StateDistribution uniform(int n_states);
};

// Exact policy evaluation: solves (I - gamma P_pi) V = c_pi by dense LU,
// then Q[s][a] = c[s][a] + gamma sum_s' P[s][a][s'] V[s'].
ValueEstimate evaluate(const TabularMdp& mdp, const Policy& pi);

// Entropy-regularized evaluation: same linear solve with the augmented cost
// c + tau log pi. Satisfies V[s] = <pi_s, Q_s>.
ValueEstimate evaluate_regularized(const TabularMdp& mdp, const Policy& pi, double tau);

// Soft Q-values in the q = Q - tau log pi convention; satisfies the
// recursion q[s][a] = c[s][a] + gamma E_{s'}[V(s')].
Mat soft_q(const TabularMdp& mdp, const Policy& pi, double tau);

// Discounted state-visitation distribution d = (1-gamma) rho' (I - gamma P_pi)^-1,
// renormalized defensively. Componentwise d >= (1-gamma) rho.
StateDistribution visitation(const TabularMdp& mdp, const Policy& pi,
                             const StateDistribution& rho);

// Policy gradient theorem: row s equals d_s Q_s / (1-gamma).
Mat policy_gradient(const TabularMdp& mdp, const Policy& pi, const StateDistribution& rho);

// Value iteration to linf tolerance 1e-12, greedy tie-break on the lowest
// action index; the returned values come from an exact evaluation of the
// greedy policy, so the Bellman optimality residual is at solver precision.
std::pair<Policy, ValueEstimate> solve_optimal(const TabularMdp& mdp);

// Soft (entropy-regularized) optimum: soft value iteration to 1e-12 and the
// Boltzmann policy of the fixed point.
std::pair<Policy, ValueEstimate> solve_optimal_regularized(const TabularMdp& mdp, double tau);

// Performance difference, first form: (1/(1-gamma)) E_{s~d^pi_rho}[<Q^pitilde_s, pi_s - pitilde_s>].
// Equals V^pi_rho - V^pitilde_rho.
double performance_difference(const TabularMdp& mdp, const Policy& pi, const Policy& pitilde,
                              const StateDistribution& rho);

// Regularized form: adds tau KL(pi_s || pitilde_s) inside the expectation.
double performance_difference_regularized(const TabularMdp& mdp, const Policy& pi,
                                          const Policy& pitilde, const StateDistribution& rho,
                                          double tau);

// Random MDP: Dirichlet(1,...,1) transition rows, uniform [0,1] costs.
TabularMdp random_mdp(int n_states, int n_actions, double gamma, std::uint64_t seed);

// N x N gridworld, 4 actions, slip probability, absorbing zero-cost goal in
// the last cell, cost 1 elsewhere.
TabularMdp gridworld(int size, double slip, double gamma);

// Lossless JSON round trip (doubles preserved exactly).
std::string mdp_to_json(const TabularMdp& mdp);
TabularMdp mdp_from_json(const std::string& text);
void write_mdp_file(const TabularMdp& mdp, const std::string& path);
TabularMdp read_mdp_file(const std::string& path);

}  // namespace dapo
