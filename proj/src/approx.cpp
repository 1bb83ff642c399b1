#include "dapo/approx.hpp"

#include <cmath>

#include <json.hpp>

#include "dapo/errors.hpp"
#include "dapo/mirror_maps.hpp"
#include "dapo/prng.hpp"

namespace dapo {

namespace {

constexpr double kKlStarGuard = 300.0;  // exp overflows near 709; fail early

void check_weights(const Vec& w, int n_states) {
    if (static_cast<int>(w.size()) != n_states)
        throw ConfigError("actor target: weight vector has wrong length");
}

}  // namespace

ApproxFunction ApproxFunction::tabular(int n_states, int n_actions) {
    ApproxFunction f;
    f.kind = ApproxKind::Tabular;
    f.n_states = n_states;
    f.n_actions = n_actions;
    f.theta.assign(static_cast<std::size_t>(n_states) * n_actions, 0.0);
    return f;
}

ApproxFunction ApproxFunction::linear(int n_states, int n_actions, Vec features, int feature_dim) {
    if (static_cast<int>(features.size()) != n_states * n_actions * feature_dim)
        throw ConfigError("linear approx: feature tensor has wrong shape");
    ApproxFunction f;
    f.kind = ApproxKind::Linear;
    f.n_states = n_states;
    f.n_actions = n_actions;
    f.feature_dim = feature_dim;
    f.features = std::move(features);
    f.theta.assign(static_cast<std::size_t>(feature_dim), 0.0);
    return f;
}

ApproxFunction ApproxFunction::linear_one_hot(int n_states, int n_actions) {
    const int d = n_states * n_actions;
    Vec features(static_cast<std::size_t>(d) * d, 0.0);
    for (int i = 0; i < d; ++i) features[static_cast<std::size_t>(i) * d + i] = 1.0;
    return linear(n_states, n_actions, std::move(features), d);
}

ApproxFunction ApproxFunction::mlp(int n_states, int n_actions, int hidden, std::uint64_t init_seed) {
    if (hidden < 1) throw ConfigError("mlp: hidden width must be positive");
    ApproxFunction f;
    f.kind = ApproxKind::Mlp;
    f.n_states = n_states;
    f.n_actions = n_actions;
    f.hidden = hidden;
    const std::size_t h = static_cast<std::size_t>(hidden);
    const std::size_t n_params = h * n_states + h + h * h + h +
                                 static_cast<std::size_t>(n_actions) * h + n_actions;
    f.theta.assign(n_params, 0.0);
    Rng rng(init_seed);
    // uniform in [-1/sqrt(fan_in), 1/sqrt(fan_in)] per layer
    std::size_t at = 0;
    const double s1 = 1.0 / std::sqrt(static_cast<double>(n_states));
    for (std::size_t i = 0; i < h * n_states + h; ++i) f.theta[at++] = rng.uniform(-s1, s1);
    const double s2 = 1.0 / std::sqrt(static_cast<double>(hidden));
    for (std::size_t i = 0; i < h * h + h; ++i) f.theta[at++] = rng.uniform(-s2, s2);
    for (std::size_t i = 0; i < static_cast<std::size_t>(n_actions) * h + n_actions; ++i)
        f.theta[at++] = rng.uniform(-s2, s2);
    return f;
}

Vec ApproxFunction::eval_state(int s) const {
    if (s < 0 || s >= n_states) throw IndexError("approx eval: state index out of range");
    Vec out(static_cast<std::size_t>(n_actions));
    switch (kind) {
        case ApproxKind::Tabular:
            for (int a = 0; a < n_actions; ++a)
                out[static_cast<std::size_t>(a)] = theta[static_cast<std::size_t>(s) * n_actions + a];
            break;
        case ApproxKind::Linear:
            for (int a = 0; a < n_actions; ++a) {
                const std::size_t base =
                    (static_cast<std::size_t>(s) * n_actions + a) * feature_dim;
                double v = 0.0;
                for (int j = 0; j < feature_dim; ++j)
                    v += features[base + j] * theta[static_cast<std::size_t>(j)];
                out[static_cast<std::size_t>(a)] = v;
            }
            break;
        case ApproxKind::Mlp: {
            const std::size_t h = static_cast<std::size_t>(hidden);
            const double* w1 = theta.data();
            const double* b1 = w1 + h * n_states;
            const double* w2 = b1 + h;
            const double* b2 = w2 + h * h;
            const double* w3 = b2 + h;
            const double* b3 = w3 + static_cast<std::size_t>(n_actions) * h;
            Vec h1(h), h2(h);
            // one-hot input: first layer reduces to column s plus bias
            for (std::size_t i = 0; i < h; ++i)
                h1[i] = std::tanh(w1[i * n_states + static_cast<std::size_t>(s)] + b1[i]);
            for (std::size_t i = 0; i < h; ++i) {
                double z = b2[i];
                for (std::size_t j = 0; j < h; ++j) z += w2[i * h + j] * h1[j];
                h2[i] = std::tanh(z);
            }
            for (int a = 0; a < n_actions; ++a) {
                double z = b3[a];
                for (std::size_t j = 0; j < h; ++j) z += w3[static_cast<std::size_t>(a) * h + j] * h2[j];
                out[static_cast<std::size_t>(a)] = z;
            }
            break;
        }
    }
    return out;
}

double ApproxFunction::eval(int s, int a) const {
    if (a < 0 || a >= n_actions) throw IndexError("approx eval: action index out of range");
    return eval_state(s)[static_cast<std::size_t>(a)];
}

Mat ApproxFunction::eval_all() const {
    Mat out(n_states, n_actions);
    for (int s = 0; s < n_states; ++s) out.set_row(s, eval_state(s));
    return out;
}

Vec ApproxFunction::backprop(const Mat& dl_df) const {
    Vec grad(theta.size(), 0.0);
    switch (kind) {
        case ApproxKind::Tabular:
            for (int s = 0; s < n_states; ++s)
                for (int a = 0; a < n_actions; ++a)
                    grad[static_cast<std::size_t>(s) * n_actions + a] = dl_df(s, a);
            break;
        case ApproxKind::Linear:
            for (int s = 0; s < n_states; ++s)
                for (int a = 0; a < n_actions; ++a) {
                    const double g = dl_df(s, a);
                    if (g == 0.0) continue;
                    const std::size_t base =
                        (static_cast<std::size_t>(s) * n_actions + a) * feature_dim;
                    for (int j = 0; j < feature_dim; ++j)
                        grad[static_cast<std::size_t>(j)] += g * features[base + j];
                }
            break;
        case ApproxKind::Mlp: {
            const std::size_t h = static_cast<std::size_t>(hidden);
            const double* w1 = theta.data();
            const double* b1 = w1 + h * n_states;
            const double* w2 = b1 + h;
            const double* b2 = w2 + h * h;
            const double* w3 = b2 + h;
            double* g_w1 = grad.data();
            double* g_b1 = g_w1 + h * n_states;
            double* g_w2 = g_b1 + h;
            double* g_b2 = g_w2 + h * h;
            double* g_w3 = g_b2 + h;
            double* g_b3 = g_w3 + static_cast<std::size_t>(n_actions) * h;
            Vec h1(h), h2(h), gz2(h), gz1(h);
            for (int s = 0; s < n_states; ++s) {
                for (std::size_t i = 0; i < h; ++i)
                    h1[i] = std::tanh(w1[i * n_states + static_cast<std::size_t>(s)] + b1[i]);
                for (std::size_t i = 0; i < h; ++i) {
                    double z = b2[i];
                    for (std::size_t j = 0; j < h; ++j) z += w2[i * h + j] * h1[j];
                    h2[i] = std::tanh(z);
                }
                // output layer
                for (std::size_t i = 0; i < h; ++i) gz2[i] = 0.0;
                for (int a = 0; a < n_actions; ++a) {
                    const double go = dl_df(s, a);
                    if (go == 0.0) continue;
                    g_b3[a] += go;
                    for (std::size_t j = 0; j < h; ++j) {
                        g_w3[static_cast<std::size_t>(a) * h + j] += go * h2[j];
                        gz2[j] += go * w3[static_cast<std::size_t>(a) * h + j];
                    }
                }
                for (std::size_t i = 0; i < h; ++i) gz2[i] *= 1.0 - h2[i] * h2[i];
                for (std::size_t i = 0; i < h; ++i) gz1[i] = 0.0;
                for (std::size_t i = 0; i < h; ++i) {
                    const double g = gz2[i];
                    if (g == 0.0) continue;
                    g_b2[i] += g;
                    for (std::size_t j = 0; j < h; ++j) {
                        g_w2[i * h + j] += g * h1[j];
                        gz1[j] += g * w2[i * h + j];
                    }
                }
                for (std::size_t i = 0; i < h; ++i) gz1[i] *= 1.0 - h1[i] * h1[i];
                for (std::size_t i = 0; i < h; ++i) {
                    g_w1[i * n_states + static_cast<std::size_t>(s)] += gz1[i];
                    g_b1[i] += gz1[i];
                }
            }
            break;
        }
    }
    return grad;
}

std::string ApproxFunction::to_json() const {
    nlohmann::json j;
    switch (kind) {
        case ApproxKind::Tabular: j["kind"] = "tabular"; break;
        case ApproxKind::Linear: j["kind"] = "linear"; break;
        case ApproxKind::Mlp: j["kind"] = "mlp"; break;
    }
    j["n_states"] = n_states;
    j["n_actions"] = n_actions;
    j["feature_dim"] = feature_dim;
    j["hidden"] = hidden;
    j["theta"] = theta;
    if (kind == ApproxKind::Linear) j["features"] = features;
    return j.dump();
}

ApproxFunction ApproxFunction::from_json(const std::string& text) {
    nlohmann::json j = nlohmann::json::parse(text);
    ApproxFunction f;
    const std::string kind = j.at("kind").get<std::string>();
    f.n_states = j.at("n_states").get<int>();
    f.n_actions = j.at("n_actions").get<int>();
    f.feature_dim = j.at("feature_dim").get<int>();
    f.hidden = j.at("hidden").get<int>();
    f.theta = j.at("theta").get<Vec>();
    if (kind == "tabular") {
        f.kind = ApproxKind::Tabular;
    } else if (kind == "linear") {
        f.kind = ApproxKind::Linear;
        f.features = j.at("features").get<Vec>();
    } else if (kind == "mlp") {
        f.kind = ApproxKind::Mlp;
    } else {
        throw ConfigError("approx json: unknown kind " + kind);
    }
    return f;
}

const char* loss_kind_name(LossKind k) {
    switch (k) {
        case LossKind::DapoKl: return "dapo_kl";
        case LossKind::DapoKlStar: return "dapo_klstar";
        case LossKind::DapoL2: return "dapo_l2";
        case LossKind::Ampo: return "ampo";
        case LossKind::AmpoV2: return "ampo_v2";
        case LossKind::Mampo: return "mampo";
        case LossKind::Sac: return "sac";
    }
    return "?";
}

Mat log_probs_of(const Policy& pi) {
    Mat lp(pi.n_states(), pi.n_actions());
    for (int s = 0; s < pi.n_states(); ++s)
        for (int a = 0; a < pi.n_actions(); ++a) {
            if (pi.probs(s, a) <= 0.0)
                throw DomainError("log_probs_of: policy has zero entries");
            lp(s, a) = std::log(pi.probs(s, a));
        }
    return lp;
}

ActorTarget make_target_dapo_kl(const Mat& log_pi, const Mat& qhat, double eta, Vec weights) {
    check_weights(weights, log_pi.rows);
    ActorTarget t;
    t.kind = LossKind::DapoKl;
    t.weights = std::move(weights);
    t.log_target = Mat(log_pi.rows, log_pi.cols);
    for (int s = 0; s < log_pi.rows; ++s) {
        Vec z(static_cast<std::size_t>(log_pi.cols));
        for (int a = 0; a < log_pi.cols; ++a) z[static_cast<std::size_t>(a)] = log_pi(s, a) - eta * qhat(s, a);
        const double lse = log_sum_exp(z);
        for (int a = 0; a < log_pi.cols; ++a) t.log_target(s, a) = z[static_cast<std::size_t>(a)] - lse;
    }
    return t;
}

ActorTarget make_target_dapo_klstar(const Mat& log_pi, const Mat& qhat, double eta, Vec weights) {
    check_weights(weights, log_pi.rows);
    ActorTarget t;
    t.kind = LossKind::DapoKlStar;
    t.weights = std::move(weights);
    t.log_target = Mat(log_pi.rows, log_pi.cols);
    for (int s = 0; s < log_pi.rows; ++s)
        for (int a = 0; a < log_pi.cols; ++a) t.log_target(s, a) = log_pi(s, a) - eta * qhat(s, a);
    return t;
}

ActorTarget make_target_dapo_l2(const Mat& pi, const Mat& qhat, double eta, Vec weights) {
    check_weights(weights, pi.rows);
    ActorTarget t;
    t.kind = LossKind::DapoL2;
    t.weights = std::move(weights);
    t.dual_target = Mat(pi.rows, pi.cols);
    for (int s = 0; s < pi.rows; ++s)
        for (int a = 0; a < pi.cols; ++a) t.dual_target(s, a) = pi(s, a) - eta * qhat(s, a);
    return t;
}

ActorTarget make_target_ampo(const Mat& log_pi, const Mat& qhat, double eta, Vec weights) {
    check_weights(weights, log_pi.rows);
    ActorTarget t;
    t.kind = LossKind::Ampo;
    t.weights = std::move(weights);
    t.dual_target = Mat(log_pi.rows, log_pi.cols);
    for (int s = 0; s < log_pi.rows; ++s)
        for (int a = 0; a < log_pi.cols; ++a) t.dual_target(s, a) = log_pi(s, a) - eta * qhat(s, a);
    return t;
}

ActorTarget make_target_ampo_v2(const Mat& f_prev, const Mat& qhat, double eta, Vec weights) {
    check_weights(weights, f_prev.rows);
    ActorTarget t;
    t.kind = LossKind::AmpoV2;
    t.weights = std::move(weights);
    t.dual_target = Mat(f_prev.rows, f_prev.cols);
    for (int s = 0; s < f_prev.rows; ++s)
        for (int a = 0; a < f_prev.cols; ++a) t.dual_target(s, a) = f_prev(s, a) - eta * qhat(s, a);
    return t;
}

ActorTarget make_target_mampo(const Mat& pi, const Mat& qhat, double eta, Vec weights) {
    ActorTarget t = make_target_dapo_l2(pi, qhat, eta, std::move(weights));
    t.kind = LossKind::Mampo;
    return t;
}

ActorTarget make_target_sac(const Mat& q_soft, double tau, Vec weights) {
    check_weights(weights, q_soft.rows);
    if (tau <= 0.0) throw ConfigError("sac target: tau must be positive");
    ActorTarget t;
    t.kind = LossKind::Sac;
    t.weights = std::move(weights);
    t.q_soft = q_soft;
    t.tau = tau;
    return t;
}

double loss_with_df(const ApproxFunction& f, const ActorTarget& target, Mat& dl_df) {
    const int S = f.n_states;
    const int A = f.n_actions;
    dl_df = Mat(S, A, 0.0);
    double total = 0.0;
    for (int s = 0; s < S; ++s) {
        const double w = target.weights[static_cast<std::size_t>(s)];
        const Vec fs = f.eval_state(s);
        double ls = 0.0;
        Vec dfs(static_cast<std::size_t>(A), 0.0);
        switch (target.kind) {
            case LossKind::DapoKl: {
                const Vec p = softmax(fs);
                // KL(softmax(f) || p_target); grad_f = p (u - <p,u>), u = log p - log target
                Vec u(static_cast<std::size_t>(A));
                const double lse = log_sum_exp(fs);
                for (int a = 0; a < A; ++a) {
                    if (w > 0.0 && !std::isfinite(target.log_target(s, a)))
                        throw DomainError("dapo_kl loss: target distribution has nonpositive mass");
                    u[static_cast<std::size_t>(a)] =
                        (fs[static_cast<std::size_t>(a)] - lse) - target.log_target(s, a);
                    ls += p[static_cast<std::size_t>(a)] * u[static_cast<std::size_t>(a)];
                }
                for (int a = 0; a < A; ++a)
                    dfs[static_cast<std::size_t>(a)] =
                        p[static_cast<std::size_t>(a)] * (u[static_cast<std::size_t>(a)] - ls);
                break;
            }
            case LossKind::DapoKlStar: {
                // generalized KL between unnormalized measures e^f and m
                for (int a = 0; a < A; ++a) {
                    const double fa = fs[static_cast<std::size_t>(a)];
                    if (fa > kKlStarGuard)
                        throw DomainError("dapo_klstar loss: f entry above overflow guard");
                    const double logm = target.log_target(s, a);
                    const double ef = std::exp(fa);
                    ls += ef * (fa - logm) - ef + std::exp(logm);
                    dfs[static_cast<std::size_t>(a)] = ef * (fa - logm);
                }
                break;
            }
            case LossKind::DapoL2:
            case LossKind::Ampo:
            case LossKind::AmpoV2:
            case LossKind::Mampo: {
                for (int a = 0; a < A; ++a) {
                    const double r = fs[static_cast<std::size_t>(a)] - target.dual_target(s, a);
                    ls += r * r;
                    dfs[static_cast<std::size_t>(a)] = 2.0 * r;
                }
                break;
            }
            case LossKind::Sac: {
                // E_{a~softmax(f)}[tau log softmax(f) + q_soft], plus the
                // theta-independent normalizer tau lse(-q_soft/tau) that
                // makes the loss exactly tau KL(softmax(f) || exp(-q/tau)/Z)
                const Vec p = softmax(fs);
                const double lse = log_sum_exp(fs);
                Vec u(static_cast<std::size_t>(A));
                Vec neg_q(static_cast<std::size_t>(A));
                for (int a = 0; a < A; ++a) {
                    u[static_cast<std::size_t>(a)] =
                        target.tau * (fs[static_cast<std::size_t>(a)] - lse) + target.q_soft(s, a);
                    neg_q[static_cast<std::size_t>(a)] = -target.q_soft(s, a) / target.tau;
                    ls += p[static_cast<std::size_t>(a)] * u[static_cast<std::size_t>(a)];
                }
                const double inner = ls;
                ls += target.tau * log_sum_exp(neg_q);
                for (int a = 0; a < A; ++a)
                    dfs[static_cast<std::size_t>(a)] =
                        p[static_cast<std::size_t>(a)] * (u[static_cast<std::size_t>(a)] - inner);
                break;
            }
        }
        total += w * ls;
        for (int a = 0; a < A; ++a) dl_df(s, a) = w * dfs[static_cast<std::size_t>(a)];
    }
    return total;
}

double actor_loss(const ApproxFunction& f, const ActorTarget& target) {
    Mat unused;
    return loss_with_df(f, target, unused);
}

Vec loss_gradient(const ApproxFunction& f, const ActorTarget& target) {
    Mat dl_df;
    loss_with_df(f, target, dl_df);
    return f.backprop(dl_df);
}

double loss_dapo_kl(const ApproxFunction& f, const ActorTarget& target) {
    if (target.kind != LossKind::DapoKl) throw ConfigError("loss_dapo_kl: wrong target kind");
    return actor_loss(f, target);
}

double loss_dapo_klstar(const ApproxFunction& f, const ActorTarget& target) {
    if (target.kind != LossKind::DapoKlStar) throw ConfigError("loss_dapo_klstar: wrong target kind");
    return actor_loss(f, target);
}

double loss_dapo_l2(const ApproxFunction& f, const ActorTarget& target) {
    if (target.kind != LossKind::DapoL2) throw ConfigError("loss_dapo_l2: wrong target kind");
    return actor_loss(f, target);
}

double loss_ampo(const ApproxFunction& f, const Policy& pi_k, const Mat& qhat, double eta,
                 const Vec& weights) {
    return actor_loss(f, make_target_ampo(log_probs_of(pi_k), qhat, eta, weights));
}

double loss_ampo_v2(const ApproxFunction& f, const ApproxFunction& f_k, const Mat& qhat,
                    double eta, const Vec& weights) {
    return actor_loss(f, make_target_ampo_v2(f_k.eval_all(), qhat, eta, weights));
}

double loss_mampo(const ApproxFunction& f, const Policy& pi_k, const Mat& qhat, double eta,
                  const Vec& weights) {
    return actor_loss(f, make_target_mampo(pi_k.probs, qhat, eta, weights));
}

double loss_sac(const ApproxFunction& f, const Policy& pi_k, const Mat& q_soft, double tau,
                const Vec& weights) {
    (void)pi_k;  // SAC's update does not reference the previous policy
    return actor_loss(f, make_target_sac(q_soft, tau, weights));
}

SgdResult sgd_minimize(const ApproxFunction& f0, const ActorTarget& target, const SgdOptions& opt) {
    if (opt.steps < 1) throw ConfigError("sgd_minimize: steps must be >= 1");
    if (opt.lr <= 0.0) throw ConfigError("sgd_minimize: learning rate must be positive");
    ApproxFunction f = f0;
    Rng rng(opt.seed);
    Mat dl_df;
    for (int step = 0; step < opt.steps; ++step) {
        double loss;
        if (opt.batch <= 0 || opt.batch >= f.n_states) {
            loss = loss_with_df(f, target, dl_df);
        } else {
            // uniform state minibatch; rescale for an unbiased estimate
            ActorTarget sub = target;
            sub.weights.assign(target.weights.size(), 0.0);
            const double scale =
                static_cast<double>(f.n_states) / static_cast<double>(opt.batch);
            for (int b = 0; b < opt.batch; ++b) {
                const auto s = static_cast<std::size_t>(rng.below(f.n_states));
                sub.weights[s] += scale * target.weights[s];
            }
            loss = loss_with_df(f, sub, dl_df);
        }
        if (!std::isfinite(loss)) throw DivergenceError("sgd_minimize: loss is not finite");
        const Vec grad = f.backprop(dl_df);
        for (std::size_t i = 0; i < f.theta.size(); ++i) f.theta[i] -= opt.lr * grad[i];
    }
    const double final_loss = actor_loss(f, target);
    if (!std::isfinite(final_loss)) throw DivergenceError("sgd_minimize: final loss is not finite");
    return {std::move(f), final_loss};
}

void exact_fit(ApproxFunction& f, const ActorTarget& target) {
    if (f.kind != ApproxKind::Tabular)
        throw ConfigError("exact_fit: only the tabular family fits targets exactly");
    for (int s = 0; s < f.n_states; ++s)
        for (int a = 0; a < f.n_actions; ++a) {
            double v = 0.0;
            switch (target.kind) {
                case LossKind::DapoKl:
                case LossKind::DapoKlStar: v = target.log_target(s, a); break;
                case LossKind::DapoL2:
                case LossKind::Ampo:
                case LossKind::AmpoV2:
                case LossKind::Mampo: v = target.dual_target(s, a); break;
                case LossKind::Sac: v = -target.q_soft(s, a) / target.tau; break;
            }
            f.theta[static_cast<std::size_t>(s) * f.n_actions + a] = v;
        }
}

}  // namespace dapo
