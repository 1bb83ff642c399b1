#include "dapo/mirror_maps.hpp"

#include <algorithm>
#include <cmath>

#include "dapo/errors.hpp"

namespace dapo {

double log_sum_exp(const Vec& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    double s = 0.0;
    for (double v : z) s += std::exp(v - m);
    return m + std::log(s);
}

Vec softmax(const Vec& z) {
    double m = z[0];
    for (double v : z) m = std::max(m, v);
    Vec out(z.size());
    double s = 0.0;
    for (std::size_t i = 0; i < z.size(); ++i) {
        out[i] = std::exp(z[i] - m);
        s += out[i];
    }
    for (auto& v : out) v /= s;
    return out;
}

Vec simplex_project_l2(const Vec& y) {
    Vec u = y;
    std::sort(u.begin(), u.end(), std::greater<double>());
    double running = 0.0;
    double theta = 0.0;
    int k = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        running += u[i];
        const double cand = (running - 1.0) / static_cast<double>(i + 1);
        if (u[i] - cand > 0.0) {
            theta = cand;
            k = static_cast<int>(i + 1);
        }
    }
    (void)k;
    Vec x(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) x[i] = std::max(y[i] - theta, 0.0);
    return x;
}

MirrorMap MirrorMap::from_key(std::string_view key, int dim) {
    if (key == "l2") return {MirrorVariant::SquaredL2, dim};
    if (key == "negent_orthant") return {MirrorVariant::NegEntropyOrthant, dim};
    if (key == "negent_simplex") return {MirrorVariant::NegEntropySimplex, dim};
    throw ConfigError("unknown mirror map key: " + std::string(key));
}

std::string MirrorMap::key() const {
    switch (variant) {
        case MirrorVariant::SquaredL2: return "l2";
        case MirrorVariant::NegEntropyOrthant: return "negent_orthant";
        case MirrorVariant::NegEntropySimplex: return "negent_simplex";
    }
    return "?";
}

void MirrorMap::check_primal_domain(const Vec& x, const char* who) const {
    if (!entropy_like()) return;
    for (double v : x)
        if (v < -tol::kDomainSlack)
            throw DomainError(std::string(who) + ": negative entry outside entropy domain");
    if (variant == MirrorVariant::NegEntropySimplex) {
        double s = 0.0;
        for (double v : x) s += v;
        if (std::abs(s - 1.0) > tol::kSimplexSum)
            throw DomainError(std::string(who) + ": simplex input does not sum to 1");
    }
}

double MirrorMap::phi(const Vec& x) const {
    if (variant == MirrorVariant::SquaredL2) return 0.5 * sq_norm(x);
    check_primal_domain(x, "phi");
    // sum x log x - x, with 0 log 0 = 0
    double s = 0.0;
    for (double v : x) {
        const double xi = std::max(v, 0.0);
        if (xi > 0.0) s += xi * std::log(xi) - xi;
    }
    return s;
}

Vec MirrorMap::grad(const Vec& x) const {
    if (variant == MirrorVariant::SquaredL2) return x;
    Vec g(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] <= 0.0) throw DomainError("grad: entropy gradient needs strictly positive entries");
        g[i] = std::log(std::max(x[i], tol::kLogFloor));
    }
    return g;
}

double MirrorMap::conj(const Vec& xstar) const {
    switch (variant) {
        case MirrorVariant::SquaredL2: return 0.5 * sq_norm(xstar);
        case MirrorVariant::NegEntropyOrthant: {
            double s = 0.0;
            for (double v : xstar) s += std::exp(v);
            return s;
        }
        case MirrorVariant::NegEntropySimplex: return log_sum_exp(xstar);
    }
    return 0.0;
}

Vec MirrorMap::conj_grad(const Vec& xstar) const {
    switch (variant) {
        case MirrorVariant::SquaredL2: return xstar;
        case MirrorVariant::NegEntropyOrthant: {
            Vec out(xstar.size());
            for (std::size_t i = 0; i < xstar.size(); ++i) out[i] = std::exp(xstar[i]);
            return out;
        }
        case MirrorVariant::NegEntropySimplex: return softmax(xstar);
    }
    return {};
}

double MirrorMap::bregman(const Vec& x, const Vec& y) const {
    if (variant == MirrorVariant::SquaredL2) {
        double s = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double d = x[i] - y[i];
            s += d * d;
        }
        return 0.5 * s;
    }
    check_primal_domain(x, "bregman");
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double xi = std::max(x[i], 0.0);
        if (y[i] <= 0.0) {
            if (xi > 1e-15)
                throw DomainError("bregman: absolute continuity violated (x_i > 0, y_i = 0)");
            if (variant == MirrorVariant::NegEntropyOrthant) s += std::max(y[i], 0.0);
            continue;
        }
        const double yi = std::max(y[i], tol::kLogFloor);
        if (xi > 0.0) s += xi * std::log(xi / yi);
        if (variant == MirrorVariant::NegEntropyOrthant) s += yi - xi;
    }
    return s;
}

double MirrorMap::dual_bregman(const Vec& xstar, const Vec& ystar) const {
    // Phi*(x*) - Phi*(y*) - <grad Phi*(y*), x* - y*>
    const Vec gy = conj_grad(ystar);
    double s = conj(xstar) - conj(ystar);
    for (std::size_t i = 0; i < xstar.size(); ++i) s -= gy[i] * (xstar[i] - ystar[i]);
    return s;
}

Vec MirrorMap::project(const Vec& y) const {
    switch (variant) {
        case MirrorVariant::SquaredL2: return simplex_project_l2(y);
        case MirrorVariant::NegEntropyOrthant: {
            double s = 0.0;
            for (double v : y) {
                if (v <= 0.0) throw DomainError("project: l1 normalization needs positive entries");
                s += v;
            }
            Vec out(y.size());
            for (std::size_t i = 0; i < y.size(); ++i) out[i] = y[i] / s;
            return out;
        }
        case MirrorVariant::NegEntropySimplex:
            check_primal_domain(y, "project");
            return y;  // already on the simplex
    }
    return {};
}

Vec MirrorMap::md_step(const Vec& x, const Vec& g, double eta) const {
    if (eta <= 0.0) throw ConfigError("md_step: step size must be positive");
    Vec z = grad(x);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] -= eta * g[i];
    return project(conj_grad(z));
}

}  // namespace dapo
