#include "dapo/mdp.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "dapo/errors.hpp"
#include "dapo/mirror_maps.hpp"
#include "dapo/prng.hpp"

namespace dapo {

namespace {

constexpr double kRowSumTol = 1e-9;

Mat policy_transition(const TabularMdp& mdp, const Policy& pi) {
    Mat p(mdp.n_states, mdp.n_states, 0.0);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            const double w = pi.probs(s, a);
            if (w == 0.0) continue;
            for (int s2 = 0; s2 < mdp.n_states; ++s2) p(s, s2) += w * mdp.p(s, a, s2);
        }
    return p;
}

Vec policy_cost(const TabularMdp& mdp, const Policy& pi, const Mat& cost) {
    Vec c(static_cast<std::size_t>(mdp.n_states), 0.0);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            c[static_cast<std::size_t>(s)] += pi.probs(s, a) * cost(s, a);
    return c;
}

// V solving (I - gamma P_pi) V = c_pi for an arbitrary per-(s,a) cost table.
Vec bellman_solve(const TabularMdp& mdp, const Policy& pi, const Mat& cost) {
    const Mat p_pi = policy_transition(mdp, pi);
    Mat a(mdp.n_states, mdp.n_states, 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int s2 = 0; s2 < mdp.n_states; ++s2) a(s, s2) = -mdp.gamma * p_pi(s, s2);
        a(s, s) += 1.0;
    }
    return lu_solve(a, policy_cost(mdp, pi, cost));
}

double kl_row(const Vec& p, const Vec& q) {
    double s = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i)
        if (p[i] > 0.0) s += p[i] * std::log(p[i] / q[i]);
    return s;
}

}  // namespace

void TabularMdp::validate() const {
    if (n_states <= 0 || n_actions <= 0) throw ConfigError("mdp: state/action counts must be positive");
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("mdp: gamma must lie in (0,1)");
    if (static_cast<int>(transition.size()) != n_states * n_actions * n_states ||
        cost.rows != n_states || cost.cols != n_actions)
        throw ConfigError("mdp: tensor shapes inconsistent");
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            double sum = 0.0;
            for (int s2 = 0; s2 < n_states; ++s2) {
                const double v = p(s, a, s2);
                if (v < -kRowSumTol) throw ConfigError("mdp: negative transition probability");
                sum += v;
            }
            if (std::abs(sum - 1.0) > kRowSumTol)
                throw ConfigError("mdp: transition row does not sum to 1");
            if (cost(s, a) < -kRowSumTol || cost(s, a) > 1.0 + kRowSumTol)
                throw ConfigError("mdp: cost outside [0,1]");
        }
}

void Policy::validate() const {
    for (int s = 0; s < probs.rows; ++s) {
        double sum = 0.0;
        for (int a = 0; a < probs.cols; ++a) {
            if (probs(s, a) < -kRowSumTol) throw DomainError("policy: negative probability");
            sum += probs(s, a);
        }
        if (std::abs(sum - 1.0) > kRowSumTol) throw DomainError("policy: row does not sum to 1");
    }
}

Policy Policy::uniform(int n_states, int n_actions) {
    Policy pi;
    pi.probs = Mat(n_states, n_actions, 1.0 / n_actions);
    return pi;
}

void StateDistribution::validate() const {
    double sum = 0.0;
    for (double w : weights) {
        if (w < -kRowSumTol) throw DomainError("state distribution: negative weight");
        sum += w;
    }
    if (std::abs(sum - 1.0) > kRowSumTol) throw DomainError("state distribution: does not sum to 1");
}

StateDistribution StateDistribution::uniform(int n_states) {
    return {Vec(static_cast<std::size_t>(n_states), 1.0 / n_states)};
}

ValueEstimate evaluate(const TabularMdp& mdp, const Policy& pi) {
    ValueEstimate est;
    est.tau = 0.0;
    est.v = bellman_solve(mdp, pi, mdp.cost);
    est.q = Mat(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            double q = mdp.cost(s, a);
            for (int s2 = 0; s2 < mdp.n_states; ++s2)
                q += mdp.gamma * mdp.p(s, a, s2) * est.v[static_cast<std::size_t>(s2)];
            est.q(s, a) = q;
        }
    return est;
}

ValueEstimate evaluate_regularized(const TabularMdp& mdp, const Policy& pi, double tau) {
    Mat aug = mdp.cost;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            if (pi.probs(s, a) <= 0.0)
                throw DomainError("evaluate_regularized: policy must be strictly positive");
            aug(s, a) += tau * std::log(pi.probs(s, a));
        }
    ValueEstimate est;
    est.tau = tau;
    est.v = bellman_solve(mdp, pi, aug);
    est.q = Mat(mdp.n_states, mdp.n_actions);
    // Q_tau includes the time-0 entropy term: c + tau log pi + gamma E[V']
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) {
            double q = aug(s, a);
            for (int s2 = 0; s2 < mdp.n_states; ++s2)
                q += mdp.gamma * mdp.p(s, a, s2) * est.v[static_cast<std::size_t>(s2)];
            est.q(s, a) = q;
        }
    return est;
}

Mat soft_q(const TabularMdp& mdp, const Policy& pi, double tau) {
    const ValueEstimate est = evaluate_regularized(mdp, pi, tau);
    Mat q = est.q;
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a) q(s, a) -= tau * std::log(pi.probs(s, a));
    return q;
}

StateDistribution visitation(const TabularMdp& mdp, const Policy& pi,
                             const StateDistribution& rho) {
    const Mat p_pi = policy_transition(mdp, pi);
    // (I - gamma P_pi^T) d = (1 - gamma) rho
    Mat a(mdp.n_states, mdp.n_states, 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
        for (int s2 = 0; s2 < mdp.n_states; ++s2) a(s, s2) = -mdp.gamma * p_pi(s2, s);
        a(s, s) += 1.0;
    }
    Vec rhs(static_cast<std::size_t>(mdp.n_states));
    for (int s = 0; s < mdp.n_states; ++s)
        rhs[static_cast<std::size_t>(s)] = (1.0 - mdp.gamma) * rho.weights[static_cast<std::size_t>(s)];
    Vec d = lu_solve(a, rhs);
    double sum = 0.0;
    for (double v : d) sum += v;
    for (auto& v : d) v /= sum;
    return {d};
}

Mat policy_gradient(const TabularMdp& mdp, const Policy& pi, const StateDistribution& rho) {
    const ValueEstimate est = evaluate(mdp, pi);
    const StateDistribution d = visitation(mdp, pi, rho);
    Mat g(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s)
        for (int a = 0; a < mdp.n_actions; ++a)
            g(s, a) = d.weights[static_cast<std::size_t>(s)] * est.q(s, a) / (1.0 - mdp.gamma);
    return g;
}

std::pair<Policy, ValueEstimate> solve_optimal(const TabularMdp& mdp) {
    Vec v(static_cast<std::size_t>(mdp.n_states), 0.0);
    constexpr int kMaxSweeps = 1000000;
    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
        Vec next(static_cast<std::size_t>(mdp.n_states));
        double diff = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            double best = 0.0;
            for (int a = 0; a < mdp.n_actions; ++a) {
                double q = mdp.cost(s, a);
                for (int s2 = 0; s2 < mdp.n_states; ++s2)
                    q += mdp.gamma * mdp.p(s, a, s2) * v[static_cast<std::size_t>(s2)];
                if (a == 0 || q < best) best = q;
            }
            next[static_cast<std::size_t>(s)] = best;
            diff = std::max(diff, std::abs(best - v[static_cast<std::size_t>(s)]));
        }
        v = next;
        if (diff <= 1e-13) break;
    }
    if (sweep >= kMaxSweeps) throw NonConvergenceError("solve_optimal: value iteration budget exhausted");

    Policy greedy;
    greedy.probs = Mat(mdp.n_states, mdp.n_actions, 0.0);
    for (int s = 0; s < mdp.n_states; ++s) {
        int best_a = 0;
        double best = 0.0;
        for (int a = 0; a < mdp.n_actions; ++a) {
            double q = mdp.cost(s, a);
            for (int s2 = 0; s2 < mdp.n_states; ++s2)
                q += mdp.gamma * mdp.p(s, a, s2) * v[static_cast<std::size_t>(s2)];
            if (a == 0 || q < best) {
                best = q;
                best_a = a;
            }
        }
        greedy.probs(s, best_a) = 1.0;
    }
    ValueEstimate est = evaluate(mdp, greedy);
    for (int s = 0; s < mdp.n_states; ++s) {
        double best = est.q(s, 0);
        for (int a = 1; a < mdp.n_actions; ++a) best = std::min(best, est.q(s, a));
        if (std::abs(est.v[static_cast<std::size_t>(s)] - best) > 1e-10)
            throw NonConvergenceError("solve_optimal: Bellman optimality residual too large");
    }
    return {greedy, est};
}

std::pair<Policy, ValueEstimate> solve_optimal_regularized(const TabularMdp& mdp, double tau) {
    if (tau <= 0.0) throw ConfigError("solve_optimal_regularized: tau must be positive");
    Vec v(static_cast<std::size_t>(mdp.n_states), 0.0);
    constexpr int kMaxSweeps = 1000000;
    int sweep = 0;
    for (; sweep < kMaxSweeps; ++sweep) {
        Vec next(static_cast<std::size_t>(mdp.n_states));
        double diff = 0.0;
        for (int s = 0; s < mdp.n_states; ++s) {
            // soft-min backup: -tau log sum_a exp(-q(s,a)/tau)
            Vec z(static_cast<std::size_t>(mdp.n_actions));
            for (int a = 0; a < mdp.n_actions; ++a) {
                double q = mdp.cost(s, a);
                for (int s2 = 0; s2 < mdp.n_states; ++s2)
                    q += mdp.gamma * mdp.p(s, a, s2) * v[static_cast<std::size_t>(s2)];
                z[static_cast<std::size_t>(a)] = -q / tau;
            }
            next[static_cast<std::size_t>(s)] = -tau * log_sum_exp(z);
            diff = std::max(diff, std::abs(next[static_cast<std::size_t>(s)] - v[static_cast<std::size_t>(s)]));
        }
        v = next;
        if (diff <= 1e-13) break;
    }
    if (sweep >= kMaxSweeps)
        throw NonConvergenceError("solve_optimal_regularized: soft value iteration budget exhausted");

    Policy pi;
    pi.probs = Mat(mdp.n_states, mdp.n_actions);
    for (int s = 0; s < mdp.n_states; ++s) {
        Vec z(static_cast<std::size_t>(mdp.n_actions));
        for (int a = 0; a < mdp.n_actions; ++a) {
            double q = mdp.cost(s, a);
            for (int s2 = 0; s2 < mdp.n_states; ++s2)
                q += mdp.gamma * mdp.p(s, a, s2) * v[static_cast<std::size_t>(s2)];
            z[static_cast<std::size_t>(a)] = -q / tau;
        }
        pi.probs.set_row(s, softmax(z));
    }
    return {pi, evaluate_regularized(mdp, pi, tau)};
}

double performance_difference(const TabularMdp& mdp, const Policy& pi, const Policy& pitilde,
                              const StateDistribution& rho) {
    const ValueEstimate qt = evaluate(mdp, pitilde);
    const StateDistribution d = visitation(mdp, pi, rho);
    double acc = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
        double inner = 0.0;
        for (int a = 0; a < mdp.n_actions; ++a)
            inner += qt.q(s, a) * (pi.probs(s, a) - pitilde.probs(s, a));
        acc += d.weights[static_cast<std::size_t>(s)] * inner;
    }
    return acc / (1.0 - mdp.gamma);
}

double performance_difference_regularized(const TabularMdp& mdp, const Policy& pi,
                                          const Policy& pitilde, const StateDistribution& rho,
                                          double tau) {
    const ValueEstimate qt = evaluate_regularized(mdp, pitilde, tau);
    const StateDistribution d = visitation(mdp, pi, rho);
    double acc = 0.0;
    for (int s = 0; s < mdp.n_states; ++s) {
        double inner = 0.0;
        for (int a = 0; a < mdp.n_actions; ++a)
            inner += qt.q(s, a) * (pi.probs(s, a) - pitilde.probs(s, a));
        inner += tau * kl_row(pi.probs.row(s), pitilde.probs.row(s));
        acc += d.weights[static_cast<std::size_t>(s)] * inner;
    }
    return acc / (1.0 - mdp.gamma);
}

TabularMdp random_mdp(int n_states, int n_actions, double gamma, std::uint64_t seed) {
    Rng rng(seed);
    TabularMdp mdp;
    mdp.n_states = n_states;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition.assign(static_cast<std::size_t>(n_states) * n_actions * n_states, 0.0);
    mdp.cost = Mat(n_states, n_actions);
    for (int s = 0; s < n_states; ++s)
        for (int a = 0; a < n_actions; ++a) {
            const Vec row = rng.dirichlet(n_states);
            for (int s2 = 0; s2 < n_states; ++s2) mdp.p(s, a, s2) = row[static_cast<std::size_t>(s2)];
            mdp.cost(s, a) = rng.uniform();
        }
    mdp.validate();
    return mdp;
}

TabularMdp gridworld(int size, double slip, double gamma) {
    if (size < 2) throw ConfigError("gridworld: size must be at least 2");
    if (slip < 0.0 || slip >= 1.0) throw ConfigError("gridworld: slip must lie in [0,1)");
    const int n = size * size;
    const int goal = n - 1;
    TabularMdp mdp;
    mdp.n_states = n;
    mdp.n_actions = 4;
    mdp.gamma = gamma;
    mdp.transition.assign(static_cast<std::size_t>(n) * 4 * n, 0.0);
    mdp.cost = Mat(n, 4);
    const int dr[4] = {-1, 1, 0, 0};
    const int dc[4] = {0, 0, -1, 1};
    auto step = [&](int s, int dir) {
        const int r = s / size, c = s % size;
        const int r2 = r + dr[dir], c2 = c + dc[dir];
        if (r2 < 0 || r2 >= size || c2 < 0 || c2 >= size) return s;  // wall: stay
        return r2 * size + c2;
    };
    for (int s = 0; s < n; ++s)
        for (int a = 0; a < 4; ++a) {
            if (s == goal) {
                mdp.p(s, a, s) = 1.0;  // absorbing goal, cost 0
                mdp.cost(s, a) = 0.0;
                continue;
            }
            mdp.cost(s, a) = 1.0;
            // intended direction with prob 1-slip, otherwise uniform over all 4
            mdp.p(s, a, step(s, a)) += 1.0 - slip;
            for (int dir = 0; dir < 4; ++dir) mdp.p(s, a, step(s, dir)) += slip / 4.0;
        }
    mdp.validate();
    return mdp;
}

std::string mdp_to_json(const TabularMdp& mdp) {
    nlohmann::json j;
    j["n_states"] = mdp.n_states;
    j["n_actions"] = mdp.n_actions;
    j["gamma"] = mdp.gamma;
    nlohmann::json trans = nlohmann::json::array();
    for (int s = 0; s < mdp.n_states; ++s) {
        nlohmann::json per_s = nlohmann::json::array();
        for (int a = 0; a < mdp.n_actions; ++a) {
            nlohmann::json row = nlohmann::json::array();
            for (int s2 = 0; s2 < mdp.n_states; ++s2) row.push_back(mdp.p(s, a, s2));
            per_s.push_back(std::move(row));
        }
        trans.push_back(std::move(per_s));
    }
    j["transition"] = std::move(trans);
    nlohmann::json cost = nlohmann::json::array();
    for (int s = 0; s < mdp.n_states; ++s) {
        nlohmann::json row = nlohmann::json::array();
        for (int a = 0; a < mdp.n_actions; ++a) row.push_back(mdp.cost(s, a));
        cost.push_back(std::move(row));
    }
    j["cost"] = std::move(cost);
    return j.dump(2);
}

TabularMdp mdp_from_json(const std::string& text) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("mdp json: ") + e.what());
    }
    TabularMdp mdp;
    try {
        mdp.n_states = j.at("n_states").get<int>();
        mdp.n_actions = j.at("n_actions").get<int>();
        mdp.gamma = j.at("gamma").get<double>();
        mdp.transition.assign(
            static_cast<std::size_t>(mdp.n_states) * mdp.n_actions * mdp.n_states, 0.0);
        mdp.cost = Mat(mdp.n_states, mdp.n_actions);
        const auto& trans = j.at("transition");
        const auto& cost = j.at("cost");
        for (int s = 0; s < mdp.n_states; ++s)
            for (int a = 0; a < mdp.n_actions; ++a) {
                for (int s2 = 0; s2 < mdp.n_states; ++s2)
                    mdp.p(s, a, s2) = trans.at(s).at(a).at(s2).get<double>();
                mdp.cost(s, a) = cost.at(s).at(a).get<double>();
            }
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("mdp json: ") + e.what());
    }
    mdp.validate();
    return mdp;
}

void write_mdp_file(const TabularMdp& mdp, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write mdp file: " + path);
    out << mdp_to_json(mdp) << "\n";
}

TabularMdp read_mdp_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read mdp file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return mdp_from_json(buf.str());
}

}  // namespace dapo
