#include "dapo/theory.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dapo/errors.hpp"
#include "dapo/prng.hpp"

namespace dapo {

double TheoryConstants::psi(double x) const {
    if (x < 0.0) x = 0.0;  // divergences can round to tiny negatives
    if (kind == PsiKind::L2) return std::sqrt(2.0 * x);
    return (1.0 + c) * (x + std::sqrt(2.0 * x));
}

InequalityCheck check_pythagorean_general(const MirrorMap& map, const Vec& u, const Vec& v,
                                          const Vec& c, double tolerance) {
    const Vec u_star = map.project(v);
    InequalityCheck out;
    out.lhs = map.bregman(u, u_star) + map.bregman(u_star, c) - map.bregman(u, c);
    const Vec gv = map.grad(v);
    const Vec gc = map.grad(c);
    double rhs = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) rhs += (gv[i] - gc[i]) * (u_star[i] - u[i]);
    out.rhs = rhs;
    out.holds = out.lhs <= out.rhs + tolerance;
    return out;
}

InequalityCheck check_pythagorean_l2(const Vec& u, const Vec& v, const Vec& c, double tolerance) {
    const MirrorMap map{MirrorVariant::SquaredL2, static_cast<int>(u.size())};
    const Vec u_star = map.project(v);
    InequalityCheck out;
    out.lhs = map.bregman(u, u_star) + map.bregman(u_star, c) - map.bregman(u, c);
    out.rhs = std::sqrt(2.0 * map.bregman(v, c));
    out.holds = out.lhs <= out.rhs + tolerance;
    return out;
}

InequalityCheck check_pythagorean_kl(const Vec& u, const Vec& v, const Vec& c, double tolerance) {
    const MirrorMap map{MirrorVariant::NegEntropySimplex, static_cast<int>(u.size())};
    // On the simplex the projection is the identity, so u_star = v.
    InequalityCheck out;
    out.lhs = map.bregman(u, v) + map.bregman(v, c) - map.bregman(u, c);
    double ratio = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i)
        if (u[i] > 0.0) ratio = std::max(ratio, u[i] / v[i]);
    const double d = map.bregman(v, c);
    out.rhs = (1.0 + ratio) * (d + std::sqrt(2.0 * d));
    out.holds = out.lhs <= out.rhs + tolerance;
    return out;
}

InequalityCheck check_abs_kl_bound(const Vec& p, const Vec& q, double tolerance) {
    InequalityCheck out;
    double kl = 0.0, abs_sum = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        if (q[i] <= 0.0) throw DomainError("abs_kl_bound: p not absolutely continuous wrt q");
        const double lr = std::log(p[i] / q[i]);
        kl += p[i] * lr;
        abs_sum += p[i] * std::abs(lr);
    }
    out.lhs = abs_sum;
    out.rhs = kl + std::sqrt(2.0 * std::max(kl, 0.0));
    out.holds = out.lhs <= out.rhs + tolerance;
    return out;
}

InequalityCheck check_base_relation(const MirrorMap& map, const Vec& pi_k, const Vec& f,
                                    const Vec& qhat, double eta, const Vec& pi_ref,
                                    double tolerance) {
    if (map.variant == MirrorVariant::NegEntropyOrthant)
        throw ConfigError("base relation: covered for the L2 and simplex-entropy maps only");
    Vec dual = map.grad(pi_k);
    for (std::size_t i = 0; i < dual.size(); ++i) dual[i] -= eta * qhat[i];
    const Vec v = map.conj_grad(f);
    const Vec c = map.conj_grad(dual);
    const Vec pi_next = map.project(v);

    InequalityCheck out;
    double inner = 0.0;
    for (std::size_t i = 0; i < pi_k.size(); ++i) inner += qhat[i] * (pi_next[i] - pi_ref[i]);
    out.lhs = eta * inner + map.bregman(pi_ref, pi_next) + map.bregman(pi_next, pi_k) -
              map.bregman(pi_ref, pi_k);

    TheoryConstants psi;
    if (map.variant == MirrorVariant::SquaredL2) {
        psi.kind = TheoryConstants::PsiKind::L2;
    } else {
        psi.kind = TheoryConstants::PsiKind::Kl;
        double ratio = 0.0;
        for (std::size_t i = 0; i < pi_ref.size(); ++i)
            if (pi_ref[i] > 0.0) ratio = std::max(ratio, pi_ref[i] / pi_next[i]);
        psi.c = ratio;
    }
    out.rhs = psi.psi(map.bregman(v, c));
    out.holds = out.lhs <= out.rhs + tolerance;
    return out;
}

namespace {

Vec dirichlet_clamped(Rng& rng, int n, double floor) {
    Vec x = rng.dirichlet(n);
    double sum = 0.0;
    for (auto& v : x) {
        v = std::max(v, floor);
        sum += v;
    }
    for (auto& v : x) v /= sum;
    return x;
}

Vec normal_vec(Rng& rng, int n, double scale) {
    Vec x(static_cast<std::size_t>(n));
    for (auto& v : x) v = scale * rng.normal();
    return x;
}

Vec interior_point(const MirrorMap& map, Rng& rng, int n, double floor) {
    switch (map.variant) {
        case MirrorVariant::SquaredL2: return normal_vec(rng, n, 2.0);
        case MirrorVariant::NegEntropyOrthant: {
            Vec x(static_cast<std::size_t>(n));
            for (auto& v : x) v = rng.uniform(floor, 10.0);
            return x;
        }
        case MirrorVariant::NegEntropySimplex: return dirichlet_clamped(rng, n, floor);
    }
    return {};
}

// One fuzz sample: draws its own inputs from sample_seed, optionally dumps
// them as a replayable witness. sharp is -1 when the stated/sharp-constant
// distinction does not apply, else 1 (holds) / 0 (violated).
struct SampleOutcome {
    bool ok = true;
    int sharp = -1;
};
using SampleFn = std::function<SampleOutcome(std::uint64_t sample_seed, nlohmann::json* witness)>;

struct Campaign {
    std::string name;
    long samples = 0;
    SampleFn run;
};

// log-log least-squares slope
double regression_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    const double n = static_cast<double>(xs.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sx += xs[i];
        sy += ys[i];
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

std::vector<Campaign> build_campaigns(const VerifyOptions& opt) {
    std::vector<Campaign> out;
    const bool fault = opt.inject_fault;
    auto scaled = [&](long n) {
        return std::max<long>(1, static_cast<long>(static_cast<double>(n) * opt.scale));
    };

    out.push_back({"conjugate", scaled(10000), [](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(15));  // 2..16
        bool ok = true;
        for (auto variant : {MirrorVariant::SquaredL2, MirrorVariant::NegEntropyOrthant,
                             MirrorVariant::NegEntropySimplex}) {
            const MirrorMap map{variant, n};
            const Vec x = interior_point(map, rng, n, 1e-6);
            const double inv_err = linf_dist(map.conj_grad(map.grad(x)), x);
            const Vec xstar = normal_vec(rng, n, 2.0);
            const Vec a = rng.dirichlet(n);
            const Vec b = rng.dirichlet(n);
            const Vec g = map.grad(map.conj_grad(xstar));
            double lhs = 0.0, rhs = 0.0;
            for (int i = 0; i < n; ++i) {
                lhs += g[static_cast<std::size_t>(i)] * (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]);
                rhs += xstar[static_cast<std::size_t>(i)] * (a[static_cast<std::size_t>(i)] - b[static_cast<std::size_t>(i)]);
            }
            const bool sample_ok = inv_err <= 1e-10 && std::abs(lhs - rhs) <= 1e-9;
            if (!sample_ok && w) {
                (*w)["map"] = map.key();
                (*w)["x"] = x;
                (*w)["xstar"] = xstar;
                (*w)["inverse_err"] = inv_err;
                (*w)["pairing_lhs"] = lhs;
                (*w)["pairing_rhs"] = rhs;
            }
            ok = ok && sample_ok;
        }
        return {ok, -1};
    }});

    out.push_back({"dual_bregman", scaled(10000), [fault](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(15));
        bool ok = true;
        for (auto variant : {MirrorVariant::SquaredL2, MirrorVariant::NegEntropyOrthant,
                             MirrorVariant::NegEntropySimplex}) {
            const MirrorMap map{variant, n};
            const Vec xstar = normal_vec(rng, n, 2.0);
            const Vec ystar = normal_vec(rng, n, 2.0);
            const double dual = map.dual_bregman(xstar, ystar);
            double primal = map.bregman(map.conj_grad(ystar), map.conj_grad(xstar));
            if (fault) primal += 1e-3;  // test hook: corrupted Bregman value
            const bool sample_ok = std::abs(dual - primal) <= 1e-9;
            if (!sample_ok && w) {
                (*w)["map"] = map.key();
                (*w)["xstar"] = xstar;
                (*w)["ystar"] = ystar;
                (*w)["dual_side"] = dual;
                (*w)["primal_side"] = primal;
            }
            ok = ok && sample_ok;
        }
        return {ok, -1};
    }});

    out.push_back({"pythagorean_general", scaled(10000), [](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(7));  // 2..8
        bool ok = true;
        for (auto variant : {MirrorVariant::SquaredL2, MirrorVariant::NegEntropyOrthant,
                             MirrorVariant::NegEntropySimplex}) {
            const MirrorMap map{variant, n};
            const Vec u = dirichlet_clamped(rng, n, 1e-8);
            const Vec v = interior_point(map, rng, n, 1e-8);
            const Vec c = interior_point(map, rng, n, 1e-8);
            const auto chk = check_pythagorean_general(map, u, v, c);
            if (!chk.holds && w) {
                (*w)["map"] = map.key();
                (*w)["u"] = u;
                (*w)["v"] = v;
                (*w)["c"] = c;
                (*w)["lhs"] = chk.lhs;
                (*w)["rhs"] = chk.rhs;
            }
            ok = ok && chk.holds;
        }
        return {ok, -1};
    }});

    out.push_back({"pythagorean_l2", scaled(10000), [](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(7));
        const Vec u = rng.dirichlet(n);
        const Vec v = normal_vec(rng, n, 1.0);
        const Vec c = normal_vec(rng, n, 1.0);
        const auto chk = check_pythagorean_l2(u, v, c);
        // sharp form: the inner product is at most ||v-c|| times the simplex
        // diameter sqrt(2), so 2 sqrt(D(v,c)) is the tight right-hand side
        const bool sharp = chk.lhs <= std::sqrt(2.0) * chk.rhs + 1e-9;
        if (!chk.holds && w) {
            (*w)["u"] = u;
            (*w)["v"] = v;
            (*w)["c"] = c;
            (*w)["lhs"] = chk.lhs;
            (*w)["rhs"] = chk.rhs;
            (*w)["sharp_rhs"] = std::sqrt(2.0) * chk.rhs;
        }
        return {chk.holds, sharp ? 1 : 0};
    }});

    out.push_back({"pythagorean_kl", scaled(10000), [](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(7));
        // C = D = simplex here, so v is sampled on the simplex directly
        const Vec u = dirichlet_clamped(rng, n, 1e-8);
        const Vec v = dirichlet_clamped(rng, n, 1e-8);
        const Vec c = dirichlet_clamped(rng, n, 1e-8);
        const auto chk = check_pythagorean_kl(u, v, c);
        if (!chk.holds && w) {
            (*w)["u"] = u;
            (*w)["v"] = v;
            (*w)["c"] = c;
            (*w)["lhs"] = chk.lhs;
            (*w)["rhs"] = chk.rhs;
        }
        return {chk.holds, -1};
    }});

    out.push_back({"abs_kl_bound", scaled(10000), [](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(15));
        const Vec p = rng.dirichlet(n);
        const Vec q = dirichlet_clamped(rng, n, 1e-12);
        const auto chk = check_abs_kl_bound(p, q);
        if (!chk.holds && w) {
            (*w)["p"] = p;
            (*w)["q"] = q;
            (*w)["lhs"] = chk.lhs;
            (*w)["rhs"] = chk.rhs;
        }
        return {chk.holds, -1};
    }});

    out.push_back({"base_relation", scaled(2000), [](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(7));
        const MirrorMap map{(seed & 1) ? MirrorVariant::SquaredL2 : MirrorVariant::NegEntropySimplex, n};
        const Vec pi_k = dirichlet_clamped(rng, n, 1e-8);
        Vec qhat(static_cast<std::size_t>(n));
        for (auto& q : qhat) q = rng.uniform();
        // eta log-uniform over [1e-4, 10]: covers the limit sweep and the bulk
        const double eta = std::exp(rng.uniform(std::log(1e-4), std::log(10.0)));
        Vec f = map.grad(pi_k);
        const double sigma = (seed % 3 == 0) ? 0.0 : ((seed % 3 == 1) ? 0.1 : 1.0);
        for (std::size_t i = 0; i < f.size(); ++i)
            f[i] += -eta * qhat[i] + sigma * rng.normal();
        const Vec pi_ref = (seed & 2) ? pi_k : dirichlet_clamped(rng, n, 1e-8);
        const auto chk = check_base_relation(map, pi_k, f, qhat, eta, pi_ref);
        // on the L2 branch the stated psi misses the simplex diameter; the
        // sharp form multiplies the right-hand side by sqrt(2)
        int sharp = -1;
        if (map.variant == MirrorVariant::SquaredL2)
            sharp = (chk.lhs <= std::sqrt(2.0) * chk.rhs + 1e-8) ? 1 : 0;
        if (!chk.holds && w) {
            (*w)["map"] = map.key();
            (*w)["pi_k"] = pi_k;
            (*w)["f"] = f;
            (*w)["qhat"] = qhat;
            (*w)["eta"] = eta;
            (*w)["pi_ref"] = pi_ref;
            (*w)["lhs"] = chk.lhs;
            (*w)["rhs"] = chk.rhs;
        }
        return {chk.holds, sharp};
    }});

    out.push_back({"omega_scaling", scaled(20), [](std::uint64_t seed, nlohmann::json* w) -> SampleOutcome {
        Rng rng(seed);
        const int n = 2 + static_cast<int>(rng.below(5));
        const std::vector<double> etas = {0.25, 0.5, 1.0, 2.0, 4.0};

        // L2: with f anchored at pi the loss is exactly quadratic in eta.
        const Vec pi = rng.dirichlet(n);
        Vec qvec(static_cast<std::size_t>(n));
        for (auto& q : qvec) q = rng.uniform();
        std::vector<double> lx, ly;
        for (double eta : etas) {
            double loss = 0.0;
            for (int i = 0; i < n; ++i) {
                const double r = eta * qvec[static_cast<std::size_t>(i)];
                loss += r * r;
            }
            lx.push_back(std::log(eta));
            ly.push_back(std::log(loss));
        }
        const double slope_l2 = regression_slope(lx, ly);

        // KL: small Q spread isolates the first-order term; the eta-free part
        // KL(p || pi) is subtracted before the regression.
        Vec p = rng.dirichlet(n);
        while (linf_dist(p, pi) < 0.05) p = rng.dirichlet(n);
        double lo = p[0] - pi[0], hi = p[0] - pi[0];
        for (int i = 0; i < n; ++i) {
            lo = std::min(lo, p[static_cast<std::size_t>(i)] - pi[static_cast<std::size_t>(i)]);
            hi = std::max(hi, p[static_cast<std::size_t>(i)] - pi[static_cast<std::size_t>(i)]);
        }
        Vec qkl(static_cast<std::size_t>(n));  // in [0, 0.01], positively aligned with p - pi
        for (int i = 0; i < n; ++i)
            qkl[static_cast<std::size_t>(i)] =
                0.01 * (p[static_cast<std::size_t>(i)] - pi[static_cast<std::size_t>(i)] - lo) / (hi - lo);
        auto kl_loss = [&](double eta) {
            // KL(p || softmax(log pi - eta q))
            Vec t(static_cast<std::size_t>(n));
            for (int i = 0; i < n; ++i)
                t[static_cast<std::size_t>(i)] =
                    std::log(pi[static_cast<std::size_t>(i)]) - eta * qkl[static_cast<std::size_t>(i)];
            const double lse = log_sum_exp(t);
            double kl = 0.0;
            for (int i = 0; i < n; ++i)
                kl += p[static_cast<std::size_t>(i)] *
                      (std::log(p[static_cast<std::size_t>(i)]) - (t[static_cast<std::size_t>(i)] - lse));
            return kl;
        };
        const double base = kl_loss(0.0);
        std::vector<double> kx, ky;
        for (double eta : etas) {
            kx.push_back(std::log(eta));
            ky.push_back(std::log(kl_loss(eta) - base));
        }
        const double slope_kl = regression_slope(kx, ky);

        const bool ok = std::abs(slope_l2 - 2.0) <= 0.05 && std::abs(slope_kl - 1.0) <= 0.05;
        if (!ok && w) {
            (*w)["slope_l2"] = slope_l2;
            (*w)["slope_kl"] = slope_kl;
            (*w)["pi"] = pi;
            (*w)["p"] = p;
        }
        return {ok, -1};
    }});

    return out;
}

bool selected(const VerifyOptions& opt, const std::string& name) {
    if (opt.selectors.empty()) return true;
    for (const auto& s : opt.selectors)
        if (s == "all" || s == name) return true;
    return false;
}

}  // namespace

ConjugateReport check_conjugate_identities(const MirrorMap& map, long samples, std::uint64_t seed,
                                           double tol_inverse, double tol_pairing) {
    ConjugateReport report;
    report.samples = samples;
    Rng rng(seed);
    for (long i = 0; i < samples; ++i) {
        const int n = 2 + static_cast<int>(rng.below(15));
        const MirrorMap m{map.variant, n};
        const Vec x = interior_point(m, rng, n, 1e-6);
        report.max_inverse_err =
            std::max(report.max_inverse_err, linf_dist(m.conj_grad(m.grad(x)), x));
        const Vec xstar = normal_vec(rng, n, 2.0);
        const Vec a = rng.dirichlet(n);
        const Vec b = rng.dirichlet(n);
        const Vec g = m.grad(m.conj_grad(xstar));
        double lhs = 0.0, rhs = 0.0;
        for (int j = 0; j < n; ++j) {
            lhs += g[static_cast<std::size_t>(j)] * (a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]);
            rhs += xstar[static_cast<std::size_t>(j)] * (a[static_cast<std::size_t>(j)] - b[static_cast<std::size_t>(j)]);
        }
        report.max_pairing_err = std::max(report.max_pairing_err, std::abs(lhs - rhs));
    }
    report.holds = report.max_inverse_err <= tol_inverse && report.max_pairing_err <= tol_pairing;
    return report;
}

std::vector<LemmaReport> run_verification(const VerifyOptions& options) {
    std::vector<LemmaReport> reports;
    const auto campaigns = build_campaigns(options);
    bool any_selected = false;
    for (const auto& c : campaigns)
        if (selected(options, c.name)) any_selected = true;
    if (!any_selected) throw ConfigError("verify: unknown lemma selector");

    unsigned n_threads = options.threads > 0 ? static_cast<unsigned>(options.threads)
                                             : std::thread::hardware_concurrency();
    if (n_threads == 0) n_threads = 1;
    n_threads = std::min(n_threads, 8u);

    std::size_t campaign_index = 0;
    for (const auto& campaign : campaigns) {
        const std::uint64_t campaign_seed = derive_seed(options.seed, 1000 + campaign_index);
        ++campaign_index;
        if (!selected(options, campaign.name)) continue;

        LemmaReport report;
        report.name = campaign.name;
        report.samples = campaign.samples;

        std::vector<std::vector<long>> failures(n_threads);
        std::vector<long> sharp_failures(n_threads, 0);
        std::vector<char> sharp_applies(n_threads, 0);
        std::vector<std::thread> pool;
        const long per = (campaign.samples + static_cast<long>(n_threads) - 1) / n_threads;
        for (unsigned t = 0; t < n_threads; ++t) {
            pool.emplace_back([&, t] {
                const long lo = static_cast<long>(t) * per;
                const long hi = std::min(campaign.samples, lo + per);
                for (long i = lo; i < hi; ++i) {
                    const std::uint64_t s = derive_seed(campaign_seed, static_cast<std::uint64_t>(i));
                    const auto outcome = campaign.run(s, nullptr);
                    if (!outcome.ok) failures[t].push_back(i);
                    if (outcome.sharp >= 0) {
                        sharp_applies[t] = 1;
                        if (outcome.sharp == 0) ++sharp_failures[t];
                    }
                }
            });
        }
        for (auto& th : pool) th.join();

        long first_failure = -1;
        bool any_sharp = false;
        long sharp_total = 0;
        for (unsigned t = 0; t < n_threads; ++t) {
            report.violations += static_cast<long>(failures[t].size());
            for (long i : failures[t])
                if (first_failure < 0 || i < first_failure) first_failure = i;
            if (sharp_applies[t]) any_sharp = true;
            sharp_total += sharp_failures[t];
        }
        report.violations_sharp = any_sharp ? sharp_total : -1;
        if (first_failure >= 0) {
            std::filesystem::create_directories(options.out_dir);
            nlohmann::json witness;
            witness["lemma"] = campaign.name;
            witness["sample_index"] = first_failure;
            witness["sample_seed"] = derive_seed(campaign_seed, static_cast<std::uint64_t>(first_failure));
            campaign.run(derive_seed(campaign_seed, static_cast<std::uint64_t>(first_failure)), &witness);
            report.witness_path = options.out_dir + "/witness_" + campaign.name + ".json";
            std::ofstream out(report.witness_path);
            out << witness.dump(2) << "\n";
        }
        reports.push_back(std::move(report));
    }
    return reports;
}

bool all_hold(const std::vector<LemmaReport>& reports) {
    for (const auto& r : reports)
        if (r.violations > 0) return false;
    return true;
}

bool replay_witness(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("replay: cannot open witness file " + path);
    nlohmann::json j;
    in >> j;
    const std::string lemma = j.at("lemma").get<std::string>();
    const auto seed = j.at("sample_seed").get<std::uint64_t>();
    VerifyOptions opt;  // default (un-faulted) campaign definitions
    for (const auto& c : build_campaigns(opt))
        if (c.name == lemma) return !c.run(seed, nullptr).ok;
    throw ConfigError("replay: unknown lemma " + lemma);
}

}  // namespace dapo
