#pragma once

#include <string>
#include <string_view>

#include "dapo/linalg.hpp"

namespace dapo {

// Numerical tolerances shared by the mirror-map machinery. The defaults sit
// near double-precision limits; tests pin them explicitly where they matter.
namespace tol {
inline constexpr double kDomainSlack = 1e-9;    // entries below -this are rejected
inline constexpr double kDomainClamp = 1e-12;   // entries above -this are clamped to 0
inline constexpr double kSimplexSum = 1e-6;     // |sum - 1| allowed on simplex inputs
inline constexpr double kLogFloor = 1e-12;      // floor applied before any log
}  // namespace tol

enum class MirrorVariant {
    SquaredL2,          // Phi(x) = 1/2 ||x||^2 on R^n
    NegEntropyOrthant,  // Phi(x) = sum x_i log x_i - x_i on R^n_+
    NegEntropySimplex,  // same Phi restricted to the probability simplex
};

double log_sum_exp(const Vec& z);
Vec softmax(const Vec& z);  // max-subtracted, strictly positive output

// Euclidean projection onto the probability simplex, O(n log n)
// sort-and-threshold: keep the largest k coordinates with
// y_(k) - (sum_{i<=k} y_(i) - 1)/k > 0 and shift them by that threshold.
Vec simplex_project_l2(const Vec& y);

// One of the three mirror maps together with its gradient, conjugate,
// Bregman divergences and the Bregman projection onto the simplex.
// For the simplex-restricted entropy the gradient is the representative
// subgradient log(x) (additive constant fixed to 0); all quantities that
// matter are invariant to that choice.
struct MirrorMap {
    MirrorVariant variant = MirrorVariant::NegEntropySimplex;
    int dim = 0;

    static MirrorMap from_key(std::string_view key, int dim);
    std::string key() const;

    double phi(const Vec& x) const;
    Vec grad(const Vec& x) const;
    double conj(const Vec& xstar) const;
    Vec conj_grad(const Vec& xstar) const;

    // D_Phi(x, y) = Phi(x) - Phi(y) - <grad Phi(y), x - y>
    double bregman(const Vec& x, const Vec& y) const;
    // D_{Phi*}(xstar, ystar), evaluated on the dual side.
    double dual_bregman(const Vec& xstar, const Vec& ystar) const;

    // Bregman projection onto the simplex: Euclidean projection /
    // l1-normalization / identity, depending on the variant.
    Vec project(const Vec& y) const;

    // proj(conj_grad(grad(x) - eta g)); the exponentiated-gradient update
    // for the entropy variants.
    Vec md_step(const Vec& x, const Vec& g, double eta) const;

  private:
    bool entropy_like() const { return variant != MirrorVariant::SquaredL2; }
    void check_primal_domain(const Vec& x, const char* who) const;
};

}  // namespace dapo
