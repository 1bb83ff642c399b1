#include "dapo/engine.hpp"

#include <cfloat>
#include <cmath>
#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "dapo/errors.hpp"
#include "dapo/prng.hpp"

namespace dapo {

namespace {

// Saturating probability ratio: keeps every logged constant a finite double
// even when iterates reach the numerical boundary of the simplex.
double sat_ratio(double num, double den) {
    if (den > 0.0) {
        const double r = num / den;
        return std::isfinite(r) ? r : DBL_MAX;
    }
    return num > 0.0 ? DBL_MAX : 0.0;
}

double sat_exp(double log_ratio) {
    if (log_ratio > 700.0) return DBL_MAX;
    return std::exp(log_ratio);
}

struct Comparator {
    Policy pi_star;
    Vec v_star;             // per-state optimal values (regularized in SAC mode)
    double v_star_rho = 0.0;
    StateDistribution d_star;
    Mat log_pi_star;        // only used on entropy paths; -inf entries stay unused
};

bool entropy_projection(Algorithm alg) { return alg != Algorithm::DapoL2; }

}  // namespace

Algorithm algorithm_from_key(const std::string& key) {
    if (key == "dapo_kl") return Algorithm::DapoKl;
    if (key == "dapo_klstar") return Algorithm::DapoKlStar;
    if (key == "dapo_l2") return Algorithm::DapoL2;
    if (key == "ampo") return Algorithm::Ampo;
    if (key == "ampo_v2") return Algorithm::AmpoV2;
    if (key == "mampo") return Algorithm::Mampo;
    if (key == "sac") return Algorithm::Sac;
    throw ConfigError("unknown algorithm: " + key);
}

const char* algorithm_key(Algorithm alg) {
    switch (alg) {
        case Algorithm::DapoKl: return "dapo_kl";
        case Algorithm::DapoKlStar: return "dapo_klstar";
        case Algorithm::DapoL2: return "dapo_l2";
        case Algorithm::Ampo: return "ampo";
        case Algorithm::AmpoV2: return "ampo_v2";
        case Algorithm::Mampo: return "mampo";
        case Algorithm::Sac: return "sac";
    }
    return "?";
}

MirrorVariant mirror_of(Algorithm alg) {
    switch (alg) {
        case Algorithm::DapoKl:
        case Algorithm::Sac: return MirrorVariant::NegEntropySimplex;
        case Algorithm::DapoKlStar:
        case Algorithm::Ampo:
        case Algorithm::AmpoV2:
        case Algorithm::Mampo: return MirrorVariant::NegEntropyOrthant;
        case Algorithm::DapoL2: return MirrorVariant::SquaredL2;
    }
    return MirrorVariant::NegEntropySimplex;
}

LossKind loss_of(Algorithm alg) {
    switch (alg) {
        case Algorithm::DapoKl: return LossKind::DapoKl;
        case Algorithm::DapoKlStar: return LossKind::DapoKlStar;
        case Algorithm::DapoL2: return LossKind::DapoL2;
        case Algorithm::Ampo: return LossKind::Ampo;
        case Algorithm::AmpoV2: return LossKind::AmpoV2;
        case Algorithm::Mampo: return LossKind::Mampo;
        case Algorithm::Sac: return LossKind::Sac;
    }
    return LossKind::DapoKl;
}

StepSchedule StepSchedule::geometric(double eta0, double vartheta, double ratio) {
    StepSchedule s;
    s.kind = Kind::Geometric;
    s.eta0 = eta0;
    s.vartheta = vartheta;
    s.ratio = ratio > 0.0 ? ratio : vartheta / (vartheta - 1.0);
    s.validate();
    return s;
}

StepSchedule StepSchedule::constant(double eta0) {
    StepSchedule s;
    s.kind = Kind::Constant;
    s.eta0 = eta0;
    s.ratio = 1.0;
    return s;
}

void StepSchedule::validate() const {
    if (eta0 <= 0.0) throw ConfigError("schedule: eta0 must be positive");
    if (kind == Kind::Geometric) {
        if (eta0 <= 1.0) throw ConfigError("schedule: geometric schedule needs eta0 > 1");
        if (vartheta <= 1.0) throw ConfigError("schedule: vartheta must exceed 1");
        if (ratio < vartheta / (vartheta - 1.0) - 1e-12)
            throw ConfigError("schedule: ratio below vartheta/(vartheta-1)");
    }
}

double StepSchedule::eta(int k) const {
    if (k < 0) throw ConfigError("schedule: negative iteration index");
    if (kind == Kind::Constant) return eta0;
    double e = eta0;
    for (int i = 0; i < k; ++i) {
        e *= ratio;
        if (e >= kEtaCap) return kEtaCap;
    }
    return std::min(e, kEtaCap);
}

double schedule_eta(const StepSchedule& schedule, int k) {
    StepSchedule s = schedule;
    s.validate();
    return s.eta(k);
}

void CriticConfig::validate() const {
    if (epsilon < 0.0) throw ConfigError("critic: epsilon must be nonnegative");
    if (mode == Mode::Exact && epsilon != 0.0)
        throw ConfigError("critic: exact mode requires epsilon = 0");
    if (mode == Mode::UniformNoise && epsilon <= 0.0)
        throw ConfigError("critic: noise mode requires epsilon > 0");
}

void DapoConfig::validate(const TabularMdp& mdp, bool sac_mode) const {
    schedule.validate();
    critic.validate();
    if (iterations < 0) throw ConfigError("config: iterations must be nonnegative");
    if (actor_mode == ActorMode::Sgd) {
        if (actor_steps < 1) throw ConfigError("config: actor_steps must be >= 1");
        if (actor_lr <= 0.0) throw ConfigError("config: actor_lr must be positive");
    }
    if (actor_mode == ActorMode::Exact && approx_kind != ApproxKind::Tabular)
        throw ConfigError("config: exact actor requires the tabular family");
    if (!rho.empty() && static_cast<int>(rho.size()) != mdp.n_states)
        throw ConfigError("config: rho length mismatch");
    if (initial_policy.rows != 0) {
        if (initial_policy.rows != mdp.n_states || initial_policy.cols != mdp.n_actions)
            throw ConfigError("config: initial policy shape mismatch");
        Policy pi0{initial_policy};
        pi0.validate();
        if (algorithm != Algorithm::DapoL2)
            for (double v : initial_policy.data)
                if (v <= 0.0)
                    throw ConfigError("config: entropy-projected runs need a strictly positive start");
    }
    if (sac_mode) {
        if (algorithm != Algorithm::Sac) throw ConfigError("config: SAC mode requires algorithm=sac");
        if (tau <= 0.0) throw ConfigError("config: SAC mode requires tau > 0");
        if (schedule.kind != StepSchedule::Kind::Constant)
            throw ConfigError("config: SAC mode uses a constant step size");
        if (schedule.eta0 > 1.0 / (tau * schedule.vartheta) + 1e-12)
            throw ConfigError("config: SAC mode needs eta <= 1/(tau*vartheta)");
    } else {
        if (algorithm == Algorithm::Sac) throw ConfigError("config: algorithm=sac runs in SAC mode");
        if (tau != 0.0) throw ConfigError("config: tau > 0 only valid in SAC mode");
    }
}

std::string fmt_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

std::string IterationLog::to_csv() const {
    std::ostringstream out;
    out << "k,eta,value_gap,actor_loss,critic_err,kl_prev,d_star,vartheta_hat,c_rho_hat\n";
    for (const auto& r : rows) {
        out << r.k << ',' << fmt_g17(r.eta) << ',' << fmt_g17(r.value_gap) << ','
            << fmt_g17(r.actor_loss) << ',' << fmt_g17(r.critic_err) << ','
            << fmt_g17(r.kl_prev) << ',' << fmt_g17(r.d_star) << ','
            << fmt_g17(r.vartheta_hat) << ',' << fmt_g17(r.c_rho_hat) << '\n';
    }
    return out.str();
}

std::string IterationLog::to_json(const std::string& config_echo, std::uint64_t seed) const {
    nlohmann::json j;
    if (!config_echo.empty()) {
        j["config"] = nlohmann::json::parse(config_echo, nullptr, false);
        if (j["config"].is_discarded()) j["config"] = config_echo;
    }
    j["seed"] = seed;
    j["vartheta_hat"] = vartheta_hat;
    j["c_rho_hat"] = c_rho_hat;
    j["c_rho_hat_full"] = c_rho_hat_full;
    j["gap0"] = gap0;
    j["d_star0"] = d_star0;
    j["sac_grad_identity_max_rel"] = sac_grad_identity_max_rel;
    nlohmann::json recs = nlohmann::json::array();
    for (const auto& r : rows) {
        recs.push_back({{"k", r.k},
                        {"eta", r.eta},
                        {"value_gap", r.value_gap},
                        {"actor_loss", r.actor_loss},
                        {"critic_err", r.critic_err},
                        {"kl_prev", r.kl_prev},
                        {"d_star", r.d_star},
                        {"vartheta_hat", r.vartheta_hat},
                        {"c_rho_hat", r.c_rho_hat}});
    }
    j["records"] = std::move(recs);
    return j.dump(2);
}

namespace {

ApproxFunction make_approx(const DapoConfig& cfg, int S, int A) {
    switch (cfg.approx_kind) {
        case ApproxKind::Tabular: return ApproxFunction::tabular(S, A);
        case ApproxKind::Linear: {
            if (cfg.linear_feature_dim <= 0) return ApproxFunction::linear_one_hot(S, A);
            return ApproxFunction::linear(S, A, cfg.linear_features, cfg.linear_feature_dim);
        }
        case ApproxKind::Mlp:
            return ApproxFunction::mlp(S, A, cfg.mlp_hidden, derive_seed(cfg.seed, 1));
    }
    return ApproxFunction::tabular(S, A);
}

// D_Phi(pi*_s, pi_s) under the projection map, aggregated with d* weights.
double d_star_of(const Comparator& cmp, bool entropy, const Policy& pi, const Mat& logits) {
    double acc = 0.0;
    const int S = pi.n_states(), A = pi.n_actions();
    for (int s = 0; s < S; ++s) {
        double term = 0.0;
        for (int a = 0; a < A; ++a) {
            const double ps = cmp.pi_star.probs(s, a);
            if (entropy) {
                if (ps > 0.0) term += ps * (std::log(ps) - logits(s, a));
            } else {
                const double d = ps - pi.probs(s, a);
                term += 0.5 * d * d;
            }
        }
        acc += cmp.d_star.weights[static_cast<std::size_t>(s)] * term;
    }
    return acc;
}

IterationLog run_impl(const TabularMdp& mdp, const DapoConfig& cfg, bool sac_mode) {
    mdp.validate();
    cfg.validate(mdp, sac_mode);
    const int S = mdp.n_states, A = mdp.n_actions;
    StateDistribution rho = cfg.rho.empty() ? StateDistribution::uniform(S)
                                            : StateDistribution{cfg.rho};
    rho.validate();

    Comparator cmp;
    if (sac_mode) {
        auto [p, est] = solve_optimal_regularized(mdp, cfg.tau);
        cmp.pi_star = std::move(p);
        cmp.v_star = est.v;
    } else {
        auto [p, est] = solve_optimal(mdp);
        cmp.pi_star = std::move(p);
        cmp.v_star = est.v;
    }
    cmp.v_star_rho = dot(rho.weights, cmp.v_star);
    cmp.d_star = visitation(mdp, cmp.pi_star, rho);

    const bool entropy = entropy_projection(cfg.algorithm);
    Policy pi = Policy::uniform(S, A);
    Mat logits(S, A, -std::log(static_cast<double>(A)));
    if (cfg.initial_policy.rows != 0) {
        pi.probs = cfg.initial_policy;
        if (entropy)
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) logits(s, a) = std::log(pi.probs(s, a));
    }
    ApproxFunction f = make_approx(cfg, S, A);
    Rng critic_rng(derive_seed(cfg.seed, 2));
    const std::uint64_t sgd_base = derive_seed(cfg.seed, 3);
    // half-width making E||noise row||_inf equal epsilon exactly
    const double noise_halfwidth =
        cfg.critic.epsilon * (static_cast<double>(A) + 1.0) / static_cast<double>(A);

    IterationLog log;
    double vartheta_run = 1.0, c_rho_run = 0.0, c_rho_full_run = 0.0;

    ValueEstimate cur = sac_mode ? evaluate_regularized(mdp, pi, cfg.tau) : evaluate(mdp, pi);
    StateDistribution d_cur = visitation(mdp, pi, rho);
    log.gap0 = dot(rho.weights, cur.v) - cmp.v_star_rho;
    log.d_star0 = d_star_of(cmp, entropy, pi, logits);
    log.rows.push_back({0, cfg.schedule.eta(0), log.gap0, 0.0, 0.0, 0.0, log.d_star0,
                        vartheta_run, c_rho_run});
    if (cfg.record_iterates) log.iterates.push_back(pi);

    for (int k = 0; k < cfg.iterations; ++k) {
        const double eta = cfg.schedule.eta(k);

        // critic update
        Mat qhat = cur.q;
        double critic_err = 0.0;
        if (cfg.critic.mode == CriticConfig::Mode::UniformNoise) {
            for (int s = 0; s < S; ++s) {
                double row_err = 0.0;
                for (int a = 0; a < A; ++a) {
                    const double noise = critic_rng.uniform(-noise_halfwidth, noise_halfwidth);
                    qhat(s, a) += noise;
                    row_err = std::max(row_err, std::abs(noise));
                }
                critic_err += d_cur.weights[static_cast<std::size_t>(s)] * row_err;
            }
        }

        // actor target in the dual space
        ActorTarget target;
        switch (cfg.algorithm) {
            case Algorithm::DapoKl:
                target = make_target_dapo_kl(logits, qhat, eta, d_cur.weights);
                break;
            case Algorithm::Sac:
                // regularized DAPO-KL update on Q_tau (SAC's rule at eta = 1/tau)
                target = make_target_dapo_kl(logits, qhat, eta, d_cur.weights);
                break;
            case Algorithm::DapoKlStar:
                target = make_target_dapo_klstar(logits, qhat, eta, d_cur.weights);
                break;
            case Algorithm::DapoL2:
                target = make_target_dapo_l2(pi.probs, qhat, eta, d_cur.weights);
                break;
            case Algorithm::Ampo:
                target = make_target_ampo(logits, qhat, eta, d_cur.weights);
                break;
            case Algorithm::AmpoV2:
                target = make_target_ampo_v2(f.eval_all(), qhat, eta, d_cur.weights);
                break;
            case Algorithm::Mampo:
                target = make_target_mampo(pi.probs, qhat, eta, d_cur.weights);
                break;
        }

        // actor update (warm start on theta^(k))
        if (cfg.actor_mode == ActorMode::Exact) {
            exact_fit(f, target);
        } else {
            SgdOptions opt;
            opt.steps = cfg.actor_steps;
            opt.lr = cfg.actor_lr;
            opt.batch = cfg.actor_batch;
            opt.seed = derive_seed(sgd_base, static_cast<std::uint64_t>(k));
            f = sgd_minimize(f, target, opt).f;
        }

        // policy projection
        const Mat fvals = f.eval_all();
        Policy pi_next;
        pi_next.probs = Mat(S, A);
        Mat logits_next(S, A);
        if (entropy) {
            for (int s = 0; s < S; ++s) {
                Vec row = fvals.row(s);
                // probabilities normalized in linear space (softmax); logits
                // keep the shifted dual representative. For very large |f|
                // the lse rounds, but that error is a per-state constant and
                // lives in the subgradient freedom of the simplex map.
                const Vec p = softmax(row);
                const double lse = log_sum_exp(row);
                for (int a = 0; a < A; ++a) {
                    logits_next(s, a) = row[static_cast<std::size_t>(a)] - lse;
                    pi_next.probs(s, a) = p[static_cast<std::size_t>(a)];
                }
            }
        } else {
            for (int s = 0; s < S; ++s) pi_next.probs.set_row(s, simplex_project_l2(fvals.row(s)));
        }

        // realized dual divergence of this step (the epsilon_actor surrogate)
        double actor_div = 0.0;
        if (cfg.algorithm == Algorithm::DapoKlStar) {
            actor_div = actor_loss(f, target);
        } else if (!entropy) {
            actor_div = 0.5 * actor_loss(f, target);  // D_Phi = half squared distance
        } else {
            // KL(pi^(k+1)_s || pi^(k)_s e^{-eta Qhat_s} / Z_s) in log space
            for (int s = 0; s < S; ++s) {
                Vec t(static_cast<std::size_t>(A));
                for (int a = 0; a < A; ++a) t[static_cast<std::size_t>(a)] = logits(s, a) - eta * qhat(s, a);
                const double lse = log_sum_exp(t);
                double term = 0.0;
                for (int a = 0; a < A; ++a)
                    term += pi_next.probs(s, a) *
                            (logits_next(s, a) - (t[static_cast<std::size_t>(a)] - lse));
                actor_div += d_cur.weights[static_cast<std::size_t>(s)] * term;
            }
        }

        if (sac_mode) {
            // gradient identity: grad of the soft-q loss form == tau * grad of
            // the KL form at eta = 1/tau
            Mat q_soft = qhat;
            for (int s = 0; s < S; ++s)
                for (int a = 0; a < A; ++a) q_soft(s, a) -= cfg.tau * logits(s, a);
            const ActorTarget sac_t = make_target_sac(q_soft, cfg.tau, d_cur.weights);
            const ActorTarget kl_t = make_target_dapo_kl(logits, qhat, 1.0 / cfg.tau, d_cur.weights);
            const Vec g_sac = loss_gradient(f, sac_t);
            const Vec g_kl = loss_gradient(f, kl_t);
            double num = 0.0, den = 0.0;
            for (std::size_t i = 0; i < g_sac.size(); ++i) {
                num = std::max(num, std::abs(g_sac[i] - cfg.tau * g_kl[i]));
                den = std::max(den, std::abs(g_sac[i]));
            }
            // floor the denominator: once the run converges both gradients
            // vanish and the quotient would measure pure roundoff of the
            // O(1) inputs, not the identity
            const double rel = num / std::max(den, 1e-6);
            log.sac_grad_identity_max_rel = std::max(log.sac_grad_identity_max_rel, rel);
        }

        // diagnostics on the new iterate
        ValueEstimate next_eval =
            sac_mode ? evaluate_regularized(mdp, pi_next, cfg.tau) : evaluate(mdp, pi_next);
        StateDistribution d_next = visitation(mdp, pi_next, rho);
        StateDistribution d_next_star = visitation(mdp, pi_next, cmp.d_star);

        for (int s = 0; s < S; ++s) {
            const auto si = static_cast<std::size_t>(s);
            vartheta_run = std::max(vartheta_run, sat_ratio(cmp.d_star.weights[si], d_next.weights[si]));
            vartheta_run = std::max(vartheta_run, sat_ratio(d_next.weights[si], d_cur.weights[si]));
            vartheta_run = std::max(vartheta_run, sat_ratio(d_next_star.weights[si], d_cur.weights[si]));
            vartheta_run = std::max(vartheta_run, sat_ratio(d_next_star.weights[si], cmp.d_star.weights[si]));
        }
        for (int s = 0; s < S; ++s) {
            double ratio_s = 0.0;
            for (int a = 0; a < A; ++a) {
                double r_star, r_prev;
                if (entropy) {
                    const double ps = cmp.pi_star.probs(s, a);
                    r_star = ps > 0.0 ? sat_exp(std::log(ps) - logits_next(s, a)) : 0.0;
                    r_prev = sat_exp(logits(s, a) - logits_next(s, a));
                } else {
                    r_star = sat_ratio(cmp.pi_star.probs(s, a), pi_next.probs(s, a));
                    r_prev = sat_ratio(pi.probs(s, a), pi_next.probs(s, a));
                }
                ratio_s = std::max(ratio_s, std::max(r_star, r_prev));
            }
            c_rho_full_run = std::max(c_rho_full_run, ratio_s);
            if (d_cur.weights[static_cast<std::size_t>(s)] > 1e-15)
                c_rho_run = std::max(c_rho_run, ratio_s);
        }

        double kl_prev = 0.0;
        for (int s = 0; s < S; ++s) {
            double term = 0.0;
            for (int a = 0; a < A; ++a) {
                if (entropy) {
                    term += pi_next.probs(s, a) * (logits_next(s, a) - logits(s, a));
                } else {
                    const double d = pi_next.probs(s, a) - pi.probs(s, a);
                    term += 0.5 * d * d;
                }
            }
            kl_prev += d_next.weights[static_cast<std::size_t>(s)] * term;
        }

        pi = std::move(pi_next);
        logits = std::move(logits_next);
        cur = std::move(next_eval);
        d_cur = std::move(d_next);

        IterationRow row;
        row.k = k + 1;
        row.eta = eta;
        row.value_gap = dot(rho.weights, cur.v) - cmp.v_star_rho;
        row.actor_loss = actor_div;
        row.critic_err = critic_err;
        row.kl_prev = kl_prev;
        row.d_star = d_star_of(cmp, entropy, pi, logits);
        row.vartheta_hat = vartheta_run;
        row.c_rho_hat = c_rho_run;
        log.rows.push_back(row);
        if (cfg.record_iterates) log.iterates.push_back(pi);
    }

    log.vartheta_hat = vartheta_run;
    log.c_rho_hat = c_rho_run;
    log.c_rho_hat_full = c_rho_full_run;
    return log;
}

}  // namespace

IterationLog run_dapo(const TabularMdp& mdp, const DapoConfig& cfg) {
    return run_impl(mdp, cfg, /*sac_mode=*/false);
}

IterationLog run_sac_mode(const TabularMdp& mdp, const DapoConfig& cfg) {
    return run_impl(mdp, cfg, /*sac_mode=*/true);
}

ConstantEstimates estimate_constants(const TabularMdp& mdp, const std::vector<Policy>& iterates,
                                     const Policy& pi_star, const StateDistribution& rho) {
    ConstantEstimates est;
    if (iterates.empty()) return est;
    const StateDistribution d_star = visitation(mdp, pi_star, rho);
    StateDistribution d_cur = visitation(mdp, iterates.front(), rho);
    for (std::size_t k = 0; k + 1 < iterates.size(); ++k) {
        const Policy& pi_prev = iterates[k];
        const Policy& pi_next = iterates[k + 1];
        const StateDistribution d_next = visitation(mdp, pi_next, rho);
        const StateDistribution d_next_star = visitation(mdp, pi_next, d_star);
        for (int s = 0; s < mdp.n_states; ++s) {
            const auto si = static_cast<std::size_t>(s);
            est.vartheta_hat = std::max(est.vartheta_hat, sat_ratio(d_star.weights[si], d_next.weights[si]));
            est.vartheta_hat = std::max(est.vartheta_hat, sat_ratio(d_next.weights[si], d_cur.weights[si]));
            est.vartheta_hat = std::max(est.vartheta_hat, sat_ratio(d_next_star.weights[si], d_cur.weights[si]));
            est.vartheta_hat = std::max(est.vartheta_hat, sat_ratio(d_next_star.weights[si], d_star.weights[si]));
            double ratio_s = 0.0;
            for (int a = 0; a < mdp.n_actions; ++a) {
                ratio_s = std::max(ratio_s, sat_ratio(pi_star.probs(s, a), pi_next.probs(s, a)));
                ratio_s = std::max(ratio_s, sat_ratio(pi_prev.probs(s, a), pi_next.probs(s, a)));
            }
            est.c_rho_hat_full = std::max(est.c_rho_hat_full, ratio_s);
            if (d_cur.weights[si] > 1e-15) est.c_rho_hat = std::max(est.c_rho_hat, ratio_s);
        }
        d_cur = d_next;
    }
    return est;
}

}  // namespace dapo
