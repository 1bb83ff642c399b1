#include "dapo/experiments.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include <json.hpp>

#include "dapo/errors.hpp"
#include "dapo/prng.hpp"
#include "dapo/theory.hpp"

namespace dapo {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ConfigError("cannot write file: " + path);
    out << text;
}

// Regularized incomplete beta via Lentz's continued fraction; standard
// machinery for the t quantile, accurate to ~1e-12 here.
double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-14;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::abs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::abs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::abs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::abs(del - 1.0) < kEps) break;
    }
    return h;
}

double ibeta(double a, double b, double x) {
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double ln = std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                      a * std::log(x) + b * std::log(1.0 - x);
    const double front = std::exp(ln);
    if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
    return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

double student_t_cdf(double t, double nu) {
    const double x = nu / (nu + t * t);
    const double tail = 0.5 * ibeta(0.5 * nu, 0.5, x);
    return t >= 0.0 ? 1.0 - tail : tail;
}

struct RunOutput {
    IterationLog log;
    std::uint64_t seed = 0;
};

RunOutput run_once(const TabularMdp& mdp, const ExperimentConfig& cfg, std::uint64_t run_seed) {
    DapoConfig ec = cfg.engine_config(mdp);
    ec.seed = run_seed;
    RunOutput out;
    out.seed = run_seed;
    out.log = cfg.sac_mode() ? run_sac_mode(mdp, ec) : run_dapo(mdp, ec);
    return out;
}

// Small worker pool; items write only their own slot / files.
void parallel_for(std::size_t n_items, unsigned n_threads,
                  const std::function<void(std::size_t)>& fn) {
    if (n_items == 0) return;
    n_threads = std::max(1u, std::min({n_threads, 8u, static_cast<unsigned>(n_items)}));
    if (n_threads == 1) {
        for (std::size_t i = 0; i < n_items; ++i) fn(i);
        return;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (unsigned t = 0; t < n_threads; ++t)
        pool.emplace_back([&] {
            while (true) {
                const std::size_t i = next.fetch_add(1);
                if (i >= n_items) break;
                fn(i);
            }
        });
    for (auto& th : pool) th.join();
}

std::string run_name(int rep) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "run_%03d.csv", rep);
    return buf;
}

std::string fmt_compact(double v) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%g", v);
    return buf;
}

}  // namespace

double student_t_975(int df) {
    if (df < 1) return 0.0;
    double lo = 0.0, hi = 1e3;
    for (int it = 0; it < 200; ++it) {
        const double mid = 0.5 * (lo + hi);
        if (student_t_cdf(mid, df) < 0.975)
            lo = mid;
        else
            hi = mid;
    }
    return 0.5 * (lo + hi);
}

TabularMdp MdpSource::build() const {
    if (kind == "random") return random_mdp(n_states, n_actions, gamma, seed);
    if (kind == "gridworld") return gridworld(size, slip, gamma);
    if (kind == "file") return read_mdp_file(path);
    throw ConfigError("mdp source: unknown kind '" + kind + "'");
}

ExperimentConfig ExperimentConfig::from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return from_json(buf.str());
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config parse: ") + e.what());
    }
    ExperimentConfig cfg;
    try {
        if (j.contains("mdp")) {
            const auto& m = j["mdp"];
            cfg.mdp.kind = m.value("kind", cfg.mdp.kind);
            cfg.mdp.n_states = m.value("n_states", cfg.mdp.n_states);
            cfg.mdp.n_actions = m.value("n_actions", cfg.mdp.n_actions);
            cfg.mdp.seed = m.value("seed", cfg.mdp.seed);
            cfg.mdp.gamma = m.value("gamma", cfg.mdp.gamma);
            cfg.mdp.size = m.value("size", cfg.mdp.size);
            cfg.mdp.slip = m.value("slip", cfg.mdp.slip);
            cfg.mdp.path = m.value("path", cfg.mdp.path);
        }
        cfg.algorithm = j.value("algorithm", cfg.algorithm);
        cfg.mirror = j.value("mirror", cfg.mirror);
        if (j.contains("approx")) {
            const auto& a = j["approx"];
            cfg.approx_kind = a.value("kind", cfg.approx_kind);
            cfg.mlp_hidden = a.value("hidden", cfg.mlp_hidden);
            cfg.linear_feature_dim = a.value("feature_dim", cfg.linear_feature_dim);
        }
        if (j.contains("schedule")) {
            const auto& s = j["schedule"];
            cfg.schedule_kind = s.value("kind", cfg.schedule_kind);
            cfg.eta0 = s.value("eta0", cfg.eta0);
            cfg.ratio = s.value("ratio", cfg.ratio);
            cfg.vartheta = s.value("vartheta", cfg.vartheta);
        }
        if (j.contains("critic")) {
            const auto& c = j["critic"];
            cfg.critic_mode = c.value("mode", cfg.critic_mode);
            cfg.critic_epsilon = c.value("epsilon", cfg.critic_epsilon);
        }
        if (j.contains("actor")) {
            const auto& a = j["actor"];
            cfg.actor_mode = a.value("mode", cfg.actor_mode);
            cfg.actor_steps = a.value("steps", cfg.actor_steps);
            cfg.actor_lr = a.value("lr", cfg.actor_lr);
            cfg.actor_batch = a.value("batch", cfg.actor_batch);
        }
        cfg.iterations = j.value("iterations", cfg.iterations);
        cfg.tau = j.value("tau", cfg.tau);
        if (j.contains("rho")) {
            if (j["rho"].is_string()) {
                cfg.rho = j["rho"].get<std::string>();
            } else {
                cfg.rho = "custom";
                cfg.rho_weights = j["rho"].get<Vec>();
            }
        }
        cfg.repetitions = j.value("repetitions", cfg.repetitions);
        cfg.seed = j.value("seed", cfg.seed);
        if (j.contains("sweep")) {
            cfg.has_sweep = true;
            const auto& s = j["sweep"];
            if (s.contains("algorithm")) cfg.sweep_algorithms = s["algorithm"].get<std::vector<std::string>>();
            if (s.contains("eta0")) cfg.sweep_eta0 = s["eta0"].get<std::vector<double>>();
            if (s.contains("lr")) cfg.sweep_lr = s["lr"].get<std::vector<double>>();
            if (s.contains("m")) cfg.sweep_m = s["m"].get<std::vector<int>>();
            if ((s.contains("algorithm") && cfg.sweep_algorithms.empty()) ||
                (s.contains("eta0") && cfg.sweep_eta0.empty()) ||
                (s.contains("lr") && cfg.sweep_lr.empty()) ||
                (s.contains("m") && cfg.sweep_m.empty()))
                throw ConfigError("config field: empty sweep list");
        }
        if (j.contains("compare")) {
            cfg.has_compare = true;
            const auto& c = j["compare"];
            if (c.contains("algorithms"))
                cfg.compare_algorithms = c["algorithms"].get<std::vector<std::string>>();
            if (c.contains("m")) cfg.compare_m = c["m"].get<std::vector<int>>();
            if (c.contains("seeds")) cfg.compare_seeds = c["seeds"].get<std::vector<std::uint64_t>>();
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config field: ") + e.what());
    }
    if (cfg.repetitions < 1) throw ConfigError("config field: repetitions must be >= 1");
    return cfg;
}

std::string ExperimentConfig::to_json() const {
    json j;
    j["mdp"] = {{"kind", mdp.kind},     {"n_states", mdp.n_states}, {"n_actions", mdp.n_actions},
                {"seed", mdp.seed},     {"gamma", mdp.gamma},       {"size", mdp.size},
                {"slip", mdp.slip},     {"path", mdp.path}};
    j["algorithm"] = algorithm;
    if (!mirror.empty()) j["mirror"] = mirror;
    j["approx"] = {{"kind", approx_kind}, {"hidden", mlp_hidden}, {"feature_dim", linear_feature_dim}};
    j["schedule"] = {{"kind", schedule_kind}, {"eta0", eta0}, {"ratio", ratio}, {"vartheta", vartheta}};
    j["critic"] = {{"mode", critic_mode}, {"epsilon", critic_epsilon}};
    j["actor"] = {{"mode", actor_mode}, {"steps", actor_steps}, {"lr", actor_lr}, {"batch", actor_batch}};
    j["iterations"] = iterations;
    j["tau"] = tau;
    if (rho == "custom")
        j["rho"] = rho_weights;
    else
        j["rho"] = rho;
    j["repetitions"] = repetitions;
    j["seed"] = seed;
    if (has_sweep) {
        json s;
        if (!sweep_algorithms.empty()) s["algorithm"] = sweep_algorithms;
        if (!sweep_eta0.empty()) s["eta0"] = sweep_eta0;
        if (!sweep_lr.empty()) s["lr"] = sweep_lr;
        if (!sweep_m.empty()) s["m"] = sweep_m;
        j["sweep"] = std::move(s);
    }
    if (has_compare) {
        json c;
        c["algorithms"] = compare_algorithms;
        c["m"] = compare_m;
        if (!compare_seeds.empty()) c["seeds"] = compare_seeds;
        j["compare"] = std::move(c);
    }
    return j.dump(2);
}

DapoConfig ExperimentConfig::engine_config(const TabularMdp& mdp_built) const {
    DapoConfig ec;
    ec.algorithm = algorithm_from_key(algorithm);
    if (!mirror.empty()) {
        const MirrorMap expected{mirror_of(ec.algorithm), mdp_built.n_actions};
        if (mirror != expected.key())
            throw ConfigError("config: mirror '" + mirror + "' incompatible with algorithm '" +
                              algorithm + "' (projection uses '" + expected.key() + "')");
    }
    if (approx_kind == "tabular")
        ec.approx_kind = ApproxKind::Tabular;
    else if (approx_kind == "linear")
        ec.approx_kind = ApproxKind::Linear;
    else if (approx_kind == "mlp")
        ec.approx_kind = ApproxKind::Mlp;
    else
        throw ConfigError("config: unknown approx kind '" + approx_kind + "'");
    ec.mlp_hidden = mlp_hidden;
    ec.linear_feature_dim = linear_feature_dim;
    if (schedule_kind == "constant")
        ec.schedule = StepSchedule::constant(eta0);
    else if (schedule_kind == "geometric")
        ec.schedule = StepSchedule::geometric(eta0, vartheta, ratio);
    else
        throw ConfigError("config: unknown schedule kind '" + schedule_kind + "'");
    ec.schedule.vartheta = vartheta;
    if (critic_mode == "exact")
        ec.critic.mode = CriticConfig::Mode::Exact;
    else if (critic_mode == "uniform_noise")
        ec.critic.mode = CriticConfig::Mode::UniformNoise;
    else
        throw ConfigError("config: unknown critic mode '" + critic_mode + "'");
    ec.critic.epsilon = critic_epsilon;
    if (actor_mode == "exact")
        ec.actor_mode = ActorMode::Exact;
    else if (actor_mode == "sgd")
        ec.actor_mode = ActorMode::Sgd;
    else
        throw ConfigError("config: unknown actor mode '" + actor_mode + "'");
    ec.actor_steps = actor_steps;
    ec.actor_lr = actor_lr;
    ec.actor_batch = actor_batch;
    ec.iterations = iterations;
    ec.tau = tau;
    if (rho == "custom") {
        ec.rho = rho_weights;
    } else if (rho != "uniform") {
        throw ConfigError("config: rho must be \"uniform\" or an array");
    }
    (void)mdp_built;
    return ec;
}

int cmd_run(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
    const TabularMdp mdp = cfg.mdp.build();
    fs::create_directories(out_dir);
    std::vector<RunOutput> runs(static_cast<std::size_t>(cfg.repetitions));
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
        auto& run = runs[static_cast<std::size_t>(rep)];
        run = run_once(mdp, cfg, derive_seed(cfg.seed, rep));
        write_text(out_dir + "/" + run_name(rep), run.log.to_csv());
        // JSON mirror of the same records plus config and seed
        std::string json_name = run_name(rep);
        json_name.replace(json_name.size() - 3, 3, "json");
        write_text(out_dir + "/" + json_name, run.log.to_json(cfg.to_json(), run.seed) + "\n");
    }

    // aggregate: per-iteration mean and 95% t-interval across repetitions
    const std::size_t n_rows = runs.front().log.rows.size();
    json agg;
    agg["config"] = json::parse(cfg.to_json());
    json seeds = json::array();
    for (const auto& r : runs) seeds.push_back(r.seed);
    agg["run_seeds"] = std::move(seeds);
    const double tq = student_t_975(cfg.repetitions - 1);
    json mean_arr = json::array(), ci_arr = json::array();
    for (std::size_t k = 0; k < n_rows; ++k) {
        double mean = 0.0;
        for (const auto& r : runs) mean += r.log.rows[k].value_gap;
        mean /= cfg.repetitions;
        double ci = 0.0;
        if (cfg.repetitions > 1) {
            double ss = 0.0;
            for (const auto& r : runs) {
                const double d = r.log.rows[k].value_gap - mean;
                ss += d * d;
            }
            const double sd = std::sqrt(ss / (cfg.repetitions - 1));
            ci = tq * sd / std::sqrt(static_cast<double>(cfg.repetitions));
        }
        mean_arr.push_back(mean);
        ci_arr.push_back(ci);
    }
    agg["value_gap_mean"] = std::move(mean_arr);
    agg["value_gap_ci95"] = std::move(ci_arr);
    agg["vartheta_hat"] = runs.front().log.vartheta_hat;
    agg["c_rho_hat"] = runs.front().log.c_rho_hat;
    agg["c_rho_hat_full"] = runs.front().log.c_rho_hat_full;
    write_text(out_dir + "/aggregate.json", agg.dump(2) + "\n");
    if (!quiet)
        std::cout << "run: " << cfg.repetitions << " repetition(s), final mean gap "
                  << fmt_g17(agg["value_gap_mean"].back().get<double>()) << "\n";
    return kExitOk;
}

int cmd_sweep(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
    if (!cfg.has_sweep) throw ConfigError("sweep: config has no sweep section");
    auto algorithms = cfg.sweep_algorithms.empty() ? std::vector<std::string>{cfg.algorithm}
                                                   : cfg.sweep_algorithms;
    auto eta0s = cfg.sweep_eta0.empty() ? std::vector<double>{cfg.eta0} : cfg.sweep_eta0;
    auto lrs = cfg.sweep_lr.empty() ? std::vector<double>{cfg.actor_lr} : cfg.sweep_lr;
    auto ms = cfg.sweep_m.empty() ? std::vector<int>{cfg.actor_steps} : cfg.sweep_m;
    if (cfg.sweep_algorithms.empty() && cfg.sweep_eta0.empty() && cfg.sweep_lr.empty() &&
        cfg.sweep_m.empty())
        throw ConfigError("sweep: empty sweep specification");

    struct Point {
        std::string algorithm;
        double eta0;
        double lr;
        int m;
        std::string dir;
        double final_gap_mean = 0.0;
        double final_gap_ci = 0.0;
        bool failed = false;
        std::string error;
    };
    std::vector<Point> grid;
    for (const auto& alg : algorithms)
        for (double e : eta0s)
            for (double lr : lrs)
                for (int m : ms) {
                    Point p;
                    p.algorithm = alg;
                    p.eta0 = e;
                    p.lr = lr;
                    p.m = m;
                    p.dir = alg + "_eta" + fmt_compact(e) + "_lr" + fmt_compact(lr) + "_m" +
                            std::to_string(m);
                    grid.push_back(std::move(p));
                }

    const TabularMdp mdp = cfg.mdp.build();
    fs::create_directories(out_dir);
    parallel_for(grid.size(), std::thread::hardware_concurrency(), [&](std::size_t i) {
        Point& p = grid[i];
        try {
            ExperimentConfig point_cfg = cfg;
            point_cfg.has_sweep = false;
            point_cfg.algorithm = p.algorithm;
            point_cfg.eta0 = p.eta0;
            point_cfg.actor_lr = p.lr;
            point_cfg.actor_steps = p.m;
            const std::string dir = out_dir + "/" + p.dir;
            fs::create_directories(dir);
            std::vector<double> finals;
            for (int rep = 0; rep < point_cfg.repetitions; ++rep) {
                const RunOutput run = run_once(mdp, point_cfg, derive_seed(point_cfg.seed, rep));
                write_text(dir + "/" + run_name(rep), run.log.to_csv());
                finals.push_back(run.log.rows.back().value_gap);
            }
            double mean = 0.0;
            for (double v : finals) mean += v;
            mean /= static_cast<double>(finals.size());
            double ci = 0.0;
            if (finals.size() > 1) {
                double ss = 0.0;
                for (double v : finals) ss += (v - mean) * (v - mean);
                const double sd = std::sqrt(ss / static_cast<double>(finals.size() - 1));
                ci = student_t_975(static_cast<int>(finals.size()) - 1) * sd /
                     std::sqrt(static_cast<double>(finals.size()));
            }
            p.final_gap_mean = mean;
            p.final_gap_ci = ci;
        } catch (const std::exception& e) {
            p.failed = true;
            p.error = e.what();
        }
    });

    std::ostringstream summary;
    summary << "algorithm,eta0,lr,m,final_gap_mean,final_gap_ci95,status\n";
    for (const auto& p : grid) {
        summary << p.algorithm << ',' << fmt_g17(p.eta0) << ',' << fmt_g17(p.lr) << ',' << p.m
                << ',' << fmt_g17(p.final_gap_mean) << ',' << fmt_g17(p.final_gap_ci) << ','
                << (p.failed ? "failed" : "ok") << '\n';
        if (p.failed && !quiet) std::cerr << "sweep point " << p.dir << " failed: " << p.error << "\n";
    }
    write_text(out_dir + "/summary.csv", summary.str());
    if (!quiet) std::cout << "sweep: " << grid.size() << " grid point(s)\n";
    return kExitOk;
}

int cmd_compare(const ExperimentConfig& cfg, const std::string& out_dir, bool quiet) {
    if (!cfg.has_compare || cfg.compare_algorithms.size() < 2)
        throw ConfigError("compare: need at least two algorithms");
    std::vector<std::uint64_t> seeds = cfg.compare_seeds;
    if (seeds.empty())
        for (int i = 0; i < cfg.repetitions; ++i) seeds.push_back(derive_seed(cfg.seed, i));

    struct Job {
        std::string algorithm;
        int m;
        std::uint64_t seed;
        IterationLog log;
        bool failed = false;
        std::string error;
    };
    std::vector<Job> jobs;
    for (const auto& alg : cfg.compare_algorithms)
        for (int m : cfg.compare_m)
            for (std::uint64_t s : seeds) jobs.push_back({alg, m, s, {}, false, {}});

    const TabularMdp mdp = cfg.mdp.build();
    fs::create_directories(out_dir);
    parallel_for(jobs.size(), std::thread::hardware_concurrency(), [&](std::size_t i) {
        Job& job = jobs[i];
        try {
            ExperimentConfig job_cfg = cfg;
            job_cfg.has_compare = false;
            job_cfg.algorithm = job.algorithm;
            job_cfg.actor_steps = job.m;
            const RunOutput run = run_once(mdp, job_cfg, job.seed);
            job.log = run.log;
            std::ostringstream name;
            name << job.algorithm << "_m" << job.m << "_s" << job.seed << ".csv";
            write_text(out_dir + "/" + name.str(), job.log.to_csv());
        } catch (const std::exception& e) {
            job.failed = true;
            job.error = e.what();
        }
    });

    for (const auto& job : jobs)
        if (job.failed)
            throw DivergenceError("compare: " + job.algorithm + " failed: " + job.error);

    std::ostringstream longcsv;
    longcsv << "algorithm,m,seed,k,value_gap\n";
    for (const auto& job : jobs)
        for (const auto& row : job.log.rows)
            longcsv << job.algorithm << ',' << job.m << ',' << job.seed << ',' << row.k << ','
                    << fmt_g17(row.value_gap) << '\n';
    write_text(out_dir + "/compare.csv", longcsv.str());
    if (!quiet) std::cout << "compare: " << jobs.size() << " run(s)\n";
    return kExitOk;
}

int cmd_verify(const std::string& selector, const std::string& out_dir, std::uint64_t seed,
               double scale, bool inject_fault, bool quiet) {
    VerifyOptions opt;
    opt.seed = seed;
    opt.out_dir = out_dir;
    opt.scale = scale;
    opt.inject_fault = inject_fault;
    if (!selector.empty() && selector != "all") opt.selectors = {selector};
    fs::create_directories(out_dir);
    const auto reports = run_verification(opt);
    for (const auto& r : reports) {
        if (!quiet) {
            std::cout << r.name << ": " << (r.samples - r.violations) << "/" << r.samples
                      << " pass" << (r.violations > 0 ? "  [VIOLATIONS]" : "") << "\n";
            if (r.violations_sharp >= 0)
                std::cout << "  diameter-corrected bound (rhs x sqrt2): "
                          << (r.violations_sharp == 0 ? "no violations" : "VIOLATED") << "\n";
            if (r.violations > 0) std::cout << "  witness: " << r.witness_path << "\n";
        }
    }
    return all_hold(reports) ? kExitOk : kExitVerifyFailure;
}

int cmd_gen_mdp(const ExperimentConfig& cfg, const std::string& out_path, bool quiet) {
    const TabularMdp mdp = cfg.mdp.build();
    write_mdp_file(mdp, out_path);
    if (!quiet)
        std::cout << "gen-mdp: " << mdp.n_states << " states, " << mdp.n_actions
                  << " actions -> " << out_path << "\n";
    return kExitOk;
}

}  // namespace dapo
