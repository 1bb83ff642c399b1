#include <doctest.h>

#include <cmath>

#include "dapo/errors.hpp"
#include "dapo/mdp.hpp"
#include "dapo/prng.hpp"

using namespace dapo;

namespace {

// Monte-Carlo rollout oracle: truncated discounted cost from state s, many
// episodes, with an optional per-step entropy term tau log pi.
double rollout_value(const TabularMdp& mdp, const Policy& pi, int s0, double tau, int episodes,
                     int horizon, std::uint64_t seed) {
    Rng rng(seed);
    double total = 0.0;
    for (int ep = 0; ep < episodes; ++ep) {
        int s = s0;
        double disc = 1.0, acc = 0.0;
        for (int t = 0; t < horizon; ++t) {
            // sample action
            double u = rng.uniform();
            int a = 0;
            for (; a < mdp.n_actions - 1; ++a) {
                u -= pi.probs(s, a);
                if (u <= 0.0) break;
            }
            acc += disc * (mdp.cost(s, a) + (tau != 0.0 ? tau * std::log(pi.probs(s, a)) : 0.0));
            // sample next state
            double w = rng.uniform();
            int s2 = 0;
            for (; s2 < mdp.n_states - 1; ++s2) {
                w -= mdp.p(s, a, s2);
                if (w <= 0.0) break;
            }
            s = s2;
            disc *= mdp.gamma;
        }
        total += acc;
    }
    return total / episodes;
}

// Two-state chain: state 0 costs 0 and moves to state 1; state 1 costs 1 and
// absorbs. Action-independent.
TabularMdp two_state_chain() {
    TabularMdp mdp;
    mdp.n_states = 2;
    mdp.n_actions = 1;
    mdp.gamma = 0.5;
    mdp.transition = {0.0, 1.0, 0.0, 1.0};
    mdp.cost = Mat(2, 1);
    mdp.cost(0, 0) = 0.0;
    mdp.cost(1, 0) = 1.0;
    return mdp;
}

TabularMdp single_state(int n_actions, double cost, double gamma) {
    TabularMdp mdp;
    mdp.n_states = 1;
    mdp.n_actions = n_actions;
    mdp.gamma = gamma;
    mdp.transition.assign(static_cast<std::size_t>(n_actions), 1.0);
    mdp.cost = Mat(1, n_actions, cost);
    return mdp;
}

}  // namespace

TEST_CASE("evaluate: geometric series and zero cost") {
    const TabularMdp mdp = single_state(1, 1.0, 0.9);
    const Policy pi = Policy::uniform(1, 1);
    const ValueEstimate est = evaluate(mdp, pi);
    CHECK(est.v[0] == doctest::Approx(10.0).epsilon(1e-12));
    CHECK(est.q(0, 0) == doctest::Approx(10.0).epsilon(1e-12));

    TabularMdp zero = random_mdp(4, 3, 0.8, 42);
    zero.cost = Mat(4, 3, 0.0);
    const ValueEstimate z = evaluate(zero, Policy::uniform(4, 3));
    for (double v : z.v) CHECK(v == doctest::Approx(0.0));
}

TEST_CASE("evaluate: deterministic chain, hand Bellman solve + rollout oracle") {
    const TabularMdp mdp = two_state_chain();
    const Policy pi = Policy::uniform(2, 1);
    const ValueEstimate est = evaluate(mdp, pi);
    CHECK(est.v[0] == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(est.v[1] == doctest::Approx(2.0).epsilon(1e-12));
    // Monte-Carlo rollout oracle (statistical tolerance; chain is
    // deterministic so only the truncation error remains)
    CHECK(rollout_value(mdp, pi, 0, 0.0, 200, 60, 9) == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(rollout_value(mdp, pi, 1, 0.0, 200, 60, 10) == doctest::Approx(2.0).epsilon(1e-9));
}

TEST_CASE("evaluate: exact Bellman residual on random MDPs") {
    for (std::uint64_t seed : {1ull, 2ull, 3ull}) {
        const TabularMdp mdp = random_mdp(20, 4, 0.95, seed);
        Rng rng(seed + 100);
        Policy pi;
        pi.probs = Mat(20, 4);
        for (int s = 0; s < 20; ++s) pi.probs.set_row(s, rng.dirichlet(4));
        const ValueEstimate est = evaluate(mdp, pi);
        // residual ||V - (c_pi + gamma P_pi V)||_inf
        for (int s = 0; s < 20; ++s) {
            double rhs = 0.0;
            for (int a = 0; a < 4; ++a) rhs += pi.probs(s, a) * est.q(s, a);
            CHECK(std::abs(est.v[static_cast<std::size_t>(s)] - rhs) <= 1e-10);
        }
        // bounds for costs in [0,1]
        for (double v : est.v) {
            CHECK(v >= -1e-10);
            CHECK(v <= 1.0 / (1.0 - mdp.gamma) + 1e-10);
        }
    }
}

TEST_CASE("evaluate_regularized") {
    // tau -> 0 limit matches the unregularized evaluation
    const TabularMdp mdp = random_mdp(5, 3, 0.9, 7);
    const Policy pi = Policy::uniform(5, 3);
    const ValueEstimate plain = evaluate(mdp, pi);
    const ValueEstimate tiny = evaluate_regularized(mdp, pi, 1e-8);
    for (int s = 0; s < 5; ++s)
        CHECK(tiny.v[static_cast<std::size_t>(s)] ==
              doctest::Approx(plain.v[static_cast<std::size_t>(s)]).epsilon(1e-6));

    // 1-state 1-action, log 1 = 0
    const TabularMdp one = single_state(1, 1.0, 0.9);
    CHECK(evaluate_regularized(one, Policy::uniform(1, 1), 1.0).v[0] == doctest::Approx(10.0));

    // closed form: uniform 2-action, zero cost, gamma 0.5, tau 1 -> -2 log 2
    const TabularMdp two = single_state(2, 0.0, 0.5);
    const Policy unif = Policy::uniform(1, 2);
    const ValueEstimate reg = evaluate_regularized(two, unif, 1.0);
    CHECK(reg.v[0] == doctest::Approx(-2.0 * std::log(2.0)).epsilon(1e-12));
    // rollout oracle with the entropy-augmented cost
    CHECK(rollout_value(two, unif, 0, 1.0, 20000, 40, 21) ==
          doctest::Approx(-2.0 * std::log(2.0)).epsilon(2e-2));
    // V = <pi, Q> consistency
    double vq = 0.0;
    for (int a = 0; a < 2; ++a) vq += 0.5 * reg.q(0, a);
    CHECK(vq == doctest::Approx(reg.v[0]).epsilon(1e-12));

    Policy zero_entry = unif;
    zero_entry.probs(0, 0) = 0.0;
    zero_entry.probs(0, 1) = 1.0;
    CHECK_THROWS_AS(evaluate_regularized(two, zero_entry, 1.0), DomainError);
}

TEST_CASE("soft_q") {
    const TabularMdp mdp = random_mdp(4, 4, 0.85, 11);
    const Policy pi = Policy::uniform(4, 4);
    const double tau = 0.7;
    const Mat q = soft_q(mdp, pi, tau);
    const ValueEstimate reg = evaluate_regularized(mdp, pi, tau);
    // uniform policy: q = Q + tau log 4, a constant shift
    for (int s = 0; s < 4; ++s)
        for (int a = 0; a < 4; ++a)
            CHECK(q(s, a) == doctest::Approx(reg.q(s, a) + tau * std::log(4.0)).epsilon(1e-12));
    // q satisfies its own recursion: q = c + gamma E[V'], V = <pi, tau log pi + q>
    for (int s = 0; s < 4; ++s)
        for (int a = 0; a < 4; ++a) {
            double rhs = mdp.cost(s, a);
            for (int s2 = 0; s2 < 4; ++s2) {
                double v2 = 0.0;
                for (int a2 = 0; a2 < 4; ++a2)
                    v2 += pi.probs(s2, a2) * (tau * std::log(pi.probs(s2, a2)) + q(s2, a2));
                rhs += mdp.gamma * mdp.p(s, a, s2) * v2;
            }
            CHECK(q(s, a) == doctest::Approx(rhs).epsilon(1e-9));
        }
    // tau = 0 reduces to the plain Q
    const Mat q0 = soft_q(mdp, pi, 0.0);
    const ValueEstimate plain = evaluate(mdp, pi);
    for (int s = 0; s < 4; ++s)
        for (int a = 0; a < 4; ++a) CHECK(q0(s, a) == doctest::Approx(plain.q(s, a)).epsilon(1e-12));
}

TEST_CASE("visitation") {
    // single state
    const TabularMdp one = single_state(1, 0.3, 0.9);
    CHECK(visitation(one, Policy::uniform(1, 1), StateDistribution::uniform(1)).weights[0] ==
          doctest::Approx(1.0));

    // gamma -> 0 limit: d = rho
    TabularMdp low = random_mdp(4, 2, 0.5, 5);
    low.gamma = 1e-9;
    const StateDistribution rho{{0.4, 0.3, 0.2, 0.1}};
    const StateDistribution d0 = visitation(low, Policy::uniform(4, 2), rho);
    for (int s = 0; s < 4; ++s)
        CHECK(d0.weights[static_cast<std::size_t>(s)] ==
              doctest::Approx(rho.weights[static_cast<std::size_t>(s)]).epsilon(1e-6));

    // deterministic 2-cycle: geometric series of even/odd powers -> [2/3, 1/3]
    TabularMdp cyc;
    cyc.n_states = 2;
    cyc.n_actions = 1;
    cyc.gamma = 0.5;
    cyc.transition = {0.0, 1.0, 1.0, 0.0};
    cyc.cost = Mat(2, 1, 0.5);
    const StateDistribution d = visitation(cyc, Policy::uniform(2, 1), {{1.0, 0.0}});
    CHECK(d.weights[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
    CHECK(d.weights[1] == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    // truncated-sum oracle
    double even = 0.0, odd = 0.0, disc = 1.0;
    for (int t = 0; t < 200; ++t) {
        (t % 2 == 0 ? even : odd) += disc;
        disc *= 0.5;
    }
    CHECK(d.weights[0] == doctest::Approx(0.5 * even).epsilon(1e-12));
    CHECK(d.weights[1] == doctest::Approx(0.5 * odd).epsilon(1e-12));

    // lower bound d >= (1-gamma) rho, componentwise, on random instances
    for (std::uint64_t seed : {1ull, 9ull, 77ull}) {
        const TabularMdp mdp = random_mdp(6, 3, 0.9, seed);
        Rng rng(seed);
        Policy pi;
        pi.probs = Mat(6, 3);
        for (int s = 0; s < 6; ++s) pi.probs.set_row(s, rng.dirichlet(3));
        const StateDistribution u = StateDistribution::uniform(6);
        const StateDistribution dv = visitation(mdp, pi, u);
        for (int s = 0; s < 6; ++s)
            CHECK(dv.weights[static_cast<std::size_t>(s)] >=
                  (1.0 - mdp.gamma) * u.weights[static_cast<std::size_t>(s)] - 1e-12);
    }
}

TEST_CASE("policy_gradient") {
    // zero cost -> zero gradient
    TabularMdp zero = random_mdp(3, 2, 0.8, 2);
    zero.cost = Mat(3, 2, 0.0);
    const Mat g0 = policy_gradient(zero, Policy::uniform(3, 2), StateDistribution::uniform(3));
    for (double v : g0.data) CHECK(v == doctest::Approx(0.0));

    // 1-state: gradient = Q / (1-gamma)
    const TabularMdp one = single_state(2, 0.0, 0.5);
    TabularMdp one2 = one;
    one2.cost(0, 0) = 0.2;
    one2.cost(0, 1) = 0.9;
    const ValueEstimate est = evaluate(one2, Policy::uniform(1, 2));
    const Mat g1 = policy_gradient(one2, Policy::uniform(1, 2), StateDistribution::uniform(1));
    for (int a = 0; a < 2; ++a)
        CHECK(g1(0, a) == doctest::Approx(est.q(0, a) / 0.5).epsilon(1e-12));

    // finite-difference oracle along feasible simplex directions
    const TabularMdp mdp = random_mdp(3, 3, 0.9, 31);
    Rng rng(4);
    Policy pi;
    pi.probs = Mat(3, 3);
    for (int s = 0; s < 3; ++s) {
        Vec row = rng.dirichlet(3);
        for (auto& v : row) v = std::max(v, 0.05);
        double sum = 0.0;
        for (double v : row) sum += v;
        for (auto& v : row) v /= sum;
        pi.probs.set_row(s, row);
    }
    const StateDistribution rho = StateDistribution::uniform(3);
    const Mat grad = policy_gradient(mdp, pi, rho);
    const double eps = 1e-5;
    for (int trial = 0; trial < 10; ++trial) {
        Mat delta(3, 3, 0.0);
        for (int s = 0; s < 3; ++s) {
            // random direction with zero row sum
            Vec dir(3);
            double mean = 0.0;
            for (auto& v : dir) {
                v = rng.normal();
                mean += v;
            }
            mean /= 3.0;
            for (int a = 0; a < 3; ++a) delta(s, a) = dir[static_cast<std::size_t>(a)] - mean;
        }
        Policy shifted = pi;
        for (int s = 0; s < 3; ++s)
            for (int a = 0; a < 3; ++a) shifted.probs(s, a) += eps * delta(s, a);
        const double v0 = dot(rho.weights, evaluate(mdp, pi).v);
        const double v1 = dot(rho.weights, evaluate(mdp, shifted).v);
        double directional = 0.0;
        for (int s = 0; s < 3; ++s)
            for (int a = 0; a < 3; ++a) directional += grad(s, a) * delta(s, a);
        const double fd = (v1 - v0) / eps;
        CHECK(std::abs(fd - directional) <= 1e-3 * std::max(1.0, std::abs(directional)));
    }
}

TEST_CASE("solve_optimal") {
    // single action: the only policy is optimal
    const TabularMdp chain = two_state_chain();
    auto [pi_c, est_c] = solve_optimal(chain);
    CHECK(est_c.v[0] == doctest::Approx(1.0).epsilon(1e-10));
    CHECK(est_c.v[1] == doctest::Approx(2.0).epsilon(1e-10));

    // zero cost -> V* = 0
    TabularMdp zero = random_mdp(4, 3, 0.9, 3);
    zero.cost = Mat(4, 3, 0.0);
    auto [pi_z, est_z] = solve_optimal(zero);
    for (double v : est_z.v) CHECK(std::abs(v) <= 1e-10);

    // brute force over all 3^5 deterministic policies
    const TabularMdp mdp = random_mdp(5, 3, 0.9, 12345);
    auto [pi_star, est_star] = solve_optimal(mdp);
    Vec best(5, 1e100);
    for (int assign = 0; assign < 243; ++assign) {
        Policy pi;
        pi.probs = Mat(5, 3, 0.0);
        int code = assign;
        for (int s = 0; s < 5; ++s) {
            pi.probs(s, code % 3) = 1.0;
            code /= 3;
        }
        const ValueEstimate est = evaluate(mdp, pi);
        for (int s = 0; s < 5; ++s)
            best[static_cast<std::size_t>(s)] =
                std::min(best[static_cast<std::size_t>(s)], est.v[static_cast<std::size_t>(s)]);
    }
    for (int s = 0; s < 5; ++s)
        CHECK(est_star.v[static_cast<std::size_t>(s)] ==
              doctest::Approx(best[static_cast<std::size_t>(s)]).epsilon(1e-8));
}

TEST_CASE("solve_optimal_regularized: soft optimum") {
    // zero cost: the regularized optimum is the uniform policy
    TabularMdp zero = random_mdp(3, 4, 0.8, 8);
    zero.cost = Mat(3, 4, 0.0);
    auto [pi, est] = solve_optimal_regularized(zero, 0.5);
    for (int s = 0; s < 3; ++s)
        for (int a = 0; a < 4; ++a) CHECK(pi.probs(s, a) == doctest::Approx(0.25).epsilon(1e-9));
    // value of the uniform policy: -tau log|A| per step discounted
    CHECK(est.v[0] == doctest::Approx(-0.5 * std::log(4.0) / (1.0 - 0.8)).epsilon(1e-9));

    // the soft optimum beats random stochastic policies
    const TabularMdp mdp = random_mdp(4, 3, 0.9, 99);
    const double tau = 0.3;
    auto [pi_star, est_star] = solve_optimal_regularized(mdp, tau);
    Rng rng(1);
    for (int trial = 0; trial < 30; ++trial) {
        Policy other;
        other.probs = Mat(4, 3);
        for (int s = 0; s < 4; ++s) {
            Vec row = rng.dirichlet(3);
            for (auto& v : row) v = std::max(v, 1e-3);
            double sum = 0.0;
            for (double v : row) sum += v;
            for (auto& v : row) v /= sum;
            other.probs.set_row(s, row);
        }
        const ValueEstimate est_other = evaluate_regularized(mdp, other, tau);
        for (int s = 0; s < 4; ++s)
            CHECK(est_star.v[static_cast<std::size_t>(s)] <=
                  est_other.v[static_cast<std::size_t>(s)] + 1e-9);
    }
}

TEST_CASE("performance difference lemma, both forms") {
    Rng rng(23);
    for (int trial = 0; trial < 100; ++trial) {
        const TabularMdp mdp = random_mdp(4 + static_cast<int>(rng.below(3)),
                                          2 + static_cast<int>(rng.below(3)), 0.85, rng.next_u64());
        const int S = mdp.n_states, A = mdp.n_actions;
        auto random_policy = [&]() {
            Policy pi;
            pi.probs = Mat(S, A);
            for (int s = 0; s < S; ++s) {
                Vec row = rng.dirichlet(A);
                for (auto& v : row) v = std::max(v, 1e-4);
                double sum = 0.0;
                for (double v : row) sum += v;
                for (auto& v : row) v /= sum;
                pi.probs.set_row(s, row);
            }
            return pi;
        };
        const Policy pi = random_policy(), pit = random_policy();
        Vec rho_raw = rng.dirichlet(S);
        const StateDistribution rho{rho_raw};

        // identical policies
        CHECK(std::abs(performance_difference(mdp, pi, pi, rho)) <= 1e-10);

        // first form equals the direct value difference
        const double direct =
            dot(rho.weights, evaluate(mdp, pi).v) - dot(rho.weights, evaluate(mdp, pit).v);
        CHECK(performance_difference(mdp, pi, pit, rho) == doctest::Approx(direct).epsilon(1e-9));

        // second form: (1/(1-gamma)) E_{d^pit}[<Q^pi, pi - pit>]
        const ValueEstimate qpi = evaluate(mdp, pi);
        const StateDistribution dt = visitation(mdp, pit, rho);
        double second = 0.0;
        for (int s = 0; s < S; ++s) {
            double inner = 0.0;
            for (int a = 0; a < A; ++a) inner += qpi.q(s, a) * (pi.probs(s, a) - pit.probs(s, a));
            second += dt.weights[static_cast<std::size_t>(s)] * inner;
        }
        second /= (1.0 - mdp.gamma);
        CHECK(second == doctest::Approx(direct).epsilon(1e-9));

        // regularized forms
        const double tau = rng.uniform(0.1, 1.0);
        const double direct_reg = dot(rho.weights, evaluate_regularized(mdp, pi, tau).v) -
                                  dot(rho.weights, evaluate_regularized(mdp, pit, tau).v);
        CHECK(performance_difference_regularized(mdp, pi, pit, rho, tau) ==
              doctest::Approx(direct_reg).epsilon(1e-9));
        // second regularized form: E_{d^pit}[<Q_tau^pi, pi - pit> - tau KL(pit || pi)]
        const ValueEstimate qreg = evaluate_regularized(mdp, pi, tau);
        double second_reg = 0.0;
        for (int s = 0; s < S; ++s) {
            double inner = 0.0, kl = 0.0;
            for (int a = 0; a < A; ++a) {
                inner += qreg.q(s, a) * (pi.probs(s, a) - pit.probs(s, a));
                kl += pit.probs(s, a) * std::log(pit.probs(s, a) / pi.probs(s, a));
            }
            second_reg += dt.weights[static_cast<std::size_t>(s)] * (inner - tau * kl);
        }
        second_reg /= (1.0 - mdp.gamma);
        CHECK(second_reg == doctest::Approx(direct_reg).epsilon(1e-9));

        // tau = 0 reduction
        CHECK(performance_difference_regularized(mdp, pi, pit, rho, 0.0) ==
              doctest::Approx(performance_difference(mdp, pi, pit, rho)).epsilon(1e-10));
    }
}

TEST_CASE("distribution mismatch bound for uniform rho") {
    Rng rng(37);
    for (int trial = 0; trial < 20; ++trial) {
        const TabularMdp mdp = random_mdp(5, 3, 0.9, rng.next_u64());
        const StateDistribution rho = StateDistribution::uniform(5);
        auto random_policy = [&]() {
            Policy pi;
            pi.probs = Mat(5, 3);
            for (int s = 0; s < 5; ++s) pi.probs.set_row(s, rng.dirichlet(3));
            return pi;
        };
        const StateDistribution da = visitation(mdp, random_policy(), rho);
        const StateDistribution db = visitation(mdp, random_policy(), rho);
        double ratio = 0.0;
        for (int s = 0; s < 5; ++s)
            ratio = std::max(ratio, da.weights[static_cast<std::size_t>(s)] /
                                        db.weights[static_cast<std::size_t>(s)]);
        CHECK(ratio <= 5.0 / (1.0 - mdp.gamma) + 1e-9);
    }
}

TEST_CASE("mdp serialization round trip is lossless") {
    const TabularMdp mdp = random_mdp(6, 3, 0.917364859201112, 555);
    const std::string text = mdp_to_json(mdp);
    const TabularMdp back = mdp_from_json(text);
    CHECK(back.n_states == mdp.n_states);
    CHECK(back.n_actions == mdp.n_actions);
    CHECK(back.gamma == mdp.gamma);  // bit-exact
    for (std::size_t i = 0; i < mdp.transition.size(); ++i)
        CHECK(back.transition[i] == mdp.transition[i]);
    for (std::size_t i = 0; i < mdp.cost.data.size(); ++i)
        CHECK(back.cost.data[i] == mdp.cost.data[i]);
    CHECK(mdp_to_json(back) == text);

    CHECK_THROWS_AS(mdp_from_json("{not json"), ConfigError);
    CHECK_THROWS_AS(mdp_from_json("{\"n_states\": 2}"), ConfigError);
}

TEST_CASE("singular linear systems are guarded") {
    Mat a(2, 2, 0.0);
    a(0, 0) = 1.0;
    a(0, 1) = 2.0;
    a(1, 0) = 2.0;
    a(1, 1) = 4.0;  // rank deficient
    CHECK_THROWS_AS(lu_solve(a, {1.0, 1.0}), SingularSystemError);
}

TEST_CASE("generators validate and gridworld shape") {
    const TabularMdp gw = gridworld(4, 0.1, 0.9);
    CHECK(gw.n_states == 16);
    CHECK(gw.n_actions == 4);
    // goal is absorbing and free
    for (int a = 0; a < 4; ++a) {
        CHECK(gw.cost(15, a) == 0.0);
        CHECK(gw.p(15, a, 15) == doctest::Approx(1.0));
    }
    // all other states cost 1
    for (int s = 0; s < 15; ++s)
        for (int a = 0; a < 4; ++a) CHECK(gw.cost(s, a) == 1.0);
    CHECK_THROWS_AS(gridworld(1, 0.1, 0.9), ConfigError);
    CHECK_THROWS_AS(gridworld(3, 1.0, 0.9), ConfigError);

    TabularMdp bad = random_mdp(3, 2, 0.9, 1);
    bad.cost(0, 0) = 1.5;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
    bad = random_mdp(3, 2, 0.9, 1);
    bad.transition[0] += 0.1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
}
