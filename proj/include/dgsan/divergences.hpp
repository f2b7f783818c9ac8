#pragma once

// f-divergence kernels and numerical checks of the identities that relate
// the adversarial objective, Bregman divergences and f-divergences on
// explicit finite distributions.
//
// Everything here is templated on the scalar type so the same code runs in
// double and in long double (used as an extended-precision oracle in tests).

#include <Eigen/Dense>

#include <cmath>
#include <algorithm>
#include <functional>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "dgsan/errors.hpp"
#include "dgsan/rng.hpp"

namespace dgsan {

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Generator of an f-divergence, with derivative and Fenchel conjugate.
template <typename Scalar>
struct FGenerator {
  std::string name;
  std::function<Scalar(Scalar)> f;
  std::function<Scalar(Scalar)> fprime;
  std::function<Scalar(Scalar)> fstar;
  /// True when t lies in the domain where `fstar` is finite.
  std::function<bool(Scalar)> fstar_domain;
  bool strictly_convex = true;
  /// Set when f(u) = u f(1/u) + alpha (u - 1) holds for all u > 0.
  std::optional<Scalar> alpha;
};

using FGeneratord = FGenerator<double>;

/// f(u) = u ln u - (u+1) ln(u+1); f*(t) = -ln(1 - e^t) on t < 0; alpha = 0.
template <typename Scalar>
FGenerator<Scalar> f_js() {
  using std::expm1, std::log, std::log1p;
  FGenerator<Scalar> g;
  g.name = "js";
  // Rearranged as -u log1p(1/u) - log1p(u) to avoid cancellation for large u.
  g.f = [](Scalar u) { return -u * log1p(Scalar(1) / u) - log1p(u); };
  g.fprime = [](Scalar u) { return -log1p(Scalar(1) / u); };
  g.fstar = [](Scalar t) { return -log(-expm1(t)); };
  g.fstar_domain = [](Scalar t) { return t < Scalar(0); };
  g.alpha = Scalar(0);
  return g;
}

/// f(u) = u ln u (Kullback-Leibler); f*(t) = e^(t-1).
template <typename Scalar>
FGenerator<Scalar> f_kl() {
  using std::exp, std::log;
  FGenerator<Scalar> g;
  g.name = "kl";
  g.f = [](Scalar u) { return u * log(u); };
  g.fprime = [](Scalar u) { return log(u) + Scalar(1); };
  g.fstar = [](Scalar t) { return exp(t - Scalar(1)); };
  g.fstar_domain = [](Scalar t) { return std::isfinite(static_cast<double>(t)); };
  return g;
}

/// f(u) = -ln u (reverse KL); f*(t) = -1 - ln(-t) on t < 0.
template <typename Scalar>
FGenerator<Scalar> f_revkl() {
  using std::log;
  FGenerator<Scalar> g;
  g.name = "revkl";
  g.f = [](Scalar u) { return -log(u); };
  g.fprime = [](Scalar u) { return -Scalar(1) / u; };
  g.fstar = [](Scalar t) { return -Scalar(1) - log(-t); };
  g.fstar_domain = [](Scalar t) { return t < Scalar(0); };
  return g;
}

/// f(u) = (u-1)^2 (Pearson chi-square) on u > 0.
/// f*(t) = t + t^2/4 for t >= -2, and -1 below (supremum at u -> 0).
template <typename Scalar>
FGenerator<Scalar> f_chi2() {
  FGenerator<Scalar> g;
  g.name = "chi2";
  g.f = [](Scalar u) { return (u - Scalar(1)) * (u - Scalar(1)); };
  g.fprime = [](Scalar u) { return Scalar(2) * (u - Scalar(1)); };
  g.fstar = [](Scalar t) { return t >= Scalar(-2) ? t + t * t / Scalar(4) : Scalar(-1); };
  g.fstar_domain = [](Scalar t) { return std::isfinite(static_cast<double>(t)); };
  return g;
}

template <typename Scalar>
std::vector<FGenerator<Scalar>> builtin_generators() {
  return {f_js<Scalar>(), f_kl<Scalar>(), f_revkl<Scalar>(), f_chi2<Scalar>()};
}

/// Looks up a built-in generator by name ("js", "kl", "revkl", "chi2").
FGeneratord generator_by_name(const std::string& name);

/// g(u) = f'(1) - f'(1) u + f(u): same divergence on probability vectors, g'(1) = 0.
template <typename Scalar>
FGenerator<Scalar> normalize_f(const FGenerator<Scalar>& f) {
  const Scalar d1 = f.fprime(Scalar(1));
  FGenerator<Scalar> g;
  g.name = "normalized_" + f.name;
  g.f = [f = f.f, d1](Scalar u) { return d1 - d1 * u + f(u); };
  g.fprime = [fp = f.fprime, d1](Scalar u) { return fp(u) - d1; };
  g.fstar = [fs = f.fstar, d1](Scalar t) { return fs(t + d1) - d1; };
  g.fstar_domain = [dom = f.fstar_domain, d1](Scalar t) { return dom(t + d1); };
  g.strictly_convex = f.strictly_convex;
  if (f.alpha) g.alpha = *f.alpha - Scalar(2) * d1;
  return g;
}

// ---------------------------------------------------------------------------
// Reference quantities

namespace detail {

template <typename Derived>
void require_positive(const Eigen::MatrixBase<Derived>& v, const char* what) {
  for (Eigen::Index i = 0; i < v.size(); ++i)
    if (!(v(i) > typename Derived::Scalar(0)))
      throw DomainError(std::string(what) + ": entries must be positive", static_cast<long>(i));
}

template <typename A, typename B>
void require_same_size(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.size() != b.size()) throw std::invalid_argument(std::string(what) + ": dimension mismatch");
}

}  // namespace detail

/// sum p ln d + sum q ln(1 - d).
template <typename P, typename Q, typename D>
typename P::Scalar gan_value(const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<Q>& q,
                             const Eigen::MatrixBase<D>& d) {
  using Scalar = typename P::Scalar;
  detail::require_same_size(p, q, "gan_value");
  detail::require_same_size(p, d, "gan_value");
  Scalar v(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (!(d(i) > Scalar(0) && d(i) < Scalar(1)))
      throw DomainError("gan_value: discriminator output must lie in (0, 1)", static_cast<long>(i));
    using std::log, std::log1p;
    v += p(i) * log(d(i)) + q(i) * log1p(-d(i));
  }
  return v;
}

/// p / (p + q) elementwise.
template <typename P, typename Q>
VectorX<typename P::Scalar> optimal_discriminator(const Eigen::MatrixBase<P>& p,
                                                  const Eigen::MatrixBase<Q>& q) {
  detail::require_same_size(p, q, "optimal_discriminator");
  return p.array() / (p.array() + q.array());
}

/// sum_x q(x) f(p(x) / q(x)).
template <typename P, typename Q>
typename P::Scalar f_divergence(const FGenerator<typename P::Scalar>& f,
                                const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<Q>& q) {
  using Scalar = typename P::Scalar;
  detail::require_same_size(p, q, "f_divergence");
  detail::require_positive(p, "f_divergence(p)");
  detail::require_positive(q, "f_divergence(q)");
  Scalar d(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) d += q(i) * f.f(p(i) / q(i));
  return d;
}

/// B_f(x || y) = f(x) - f(y) - f'(y)(x - y).
template <typename Scalar>
Scalar bregman(const FGenerator<Scalar>& f, Scalar x, Scalar y) {
  if (!(x > Scalar(0)) || !(y > Scalar(0))) throw DomainError("bregman: arguments must be positive");
  return f.f(x) - f.f(y) - f.fprime(y) * (x - y);
}

/// |f*(f'(x)) - (f'(x) x - f(x))|.
template <typename Scalar>
Scalar fenchel_identity_residual(const FGenerator<Scalar>& f, Scalar x) {
  using std::abs;
  if (!(x > Scalar(0))) throw DomainError("fenchel_identity_residual: x must be positive");
  const Scalar t = f.fprime(x);
  if (!f.fstar_domain(t)) throw DomainError("fenchel_identity_residual: f'(x) outside dom f*");
  return abs(f.fstar(t) - (t * x - f.f(x)));
}

/// |(1/x) B_f(x||y) - B_f(1/x || 1/y)|; requires f to declare alpha.
template <typename Scalar>
Scalar bregman_inverse_symmetry_residual(const FGenerator<Scalar>& f, Scalar x, Scalar y) {
  using std::abs;
  if (!f.alpha)
    throw std::invalid_argument("generator '" + f.name + "' does not declare the inverse-symmetry constant");
  return abs(bregman(f, x, y) / x - bregman(f, Scalar(1) / x, Scalar(1) / y));
}

/// |E_Q[B_f(p/q || r)] - E_P[B_f(q/p || 1/r)]| for a positive vector r.
template <typename P, typename Q, typename R>
typename P::Scalar bregman_expectation_symmetry_residual(const FGenerator<typename P::Scalar>& f,
                                                         const Eigen::MatrixBase<P>& p,
                                                         const Eigen::MatrixBase<Q>& q,
                                                         const Eigen::MatrixBase<R>& r) {
  using Scalar = typename P::Scalar;
  using std::abs;
  if (!f.alpha)
    throw std::invalid_argument("generator '" + f.name + "' does not declare the inverse-symmetry constant");
  detail::require_same_size(p, q, "bregman_expectation_symmetry_residual");
  detail::require_same_size(p, r, "bregman_expectation_symmetry_residual");
  Scalar lhs(0), rhs(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    lhs += q(i) * bregman(f, p(i) / q(i), r(i));
    rhs += p(i) * bregman(f, q(i) / p(i), Scalar(1) / r(i));
  }
  return abs(lhs - rhs);
}

/// KL(P || Q) with 0 ln 0 = 0; infinite if P puts mass where Q has none.
template <typename P, typename Q>
typename P::Scalar kl_divergence(const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<Q>& q) {
  using Scalar = typename P::Scalar;
  using std::log;
  detail::require_same_size(p, q, "kl_divergence");
  Scalar d(0);
  for (Eigen::Index i = 0; i < p.size(); ++i) {
    if (p(i) <= Scalar(0)) continue;
    if (q(i) <= Scalar(0)) return std::numeric_limits<Scalar>::infinity();
    d += p(i) * log(p(i) / q(i));
  }
  return d;
}

/// Standard Jensen-Shannon divergence in nats, in [0, ln 2].
template <typename P, typename Q>
typename P::Scalar js_divergence(const Eigen::MatrixBase<P>& p, const Eigen::MatrixBase<Q>& q) {
  using Scalar = typename P::Scalar;
  detail::require_same_size(p, q, "js_divergence");
  const VectorX<Scalar> m = (p + q) / Scalar(2);
  return (kl_divergence(p, m) + kl_divergence(q, m)) / Scalar(2);
}

/// max(p, eps) followed by renormalization.
template <typename Derived>
VectorX<typename Derived::Scalar> clamp_normalize(const Eigen::MatrixBase<Derived>& p,
                                                  typename Derived::Scalar eps = 1e-9) {
  VectorX<typename Derived::Scalar> out = p.cwiseMax(eps);
  return out / out.sum();
}

// ---------------------------------------------------------------------------
// Triples (P, Q_old, Q_theta)

template <typename Scalar>
struct FiniteTriple {
  VectorX<Scalar> p, q_old, q_theta;

  /// Validates positivity, equal dimension and normalization (1e-12).
  FiniteTriple(VectorX<Scalar> p_, VectorX<Scalar> q_old_, VectorX<Scalar> q_theta_)
      : p(std::move(p_)), q_old(std::move(q_old_)), q_theta(std::move(q_theta_)) {
    using std::abs;
    if (p.size() == 0 || p.size() != q_old.size() || p.size() != q_theta.size())
      throw std::invalid_argument("FiniteTriple: dimension mismatch");
    for (const auto* v : {&p, &q_old, &q_theta}) {
      detail::require_positive(*v, "FiniteTriple");
      if (abs(v->sum() - Scalar(1)) > Scalar(1e-12))
        throw std::invalid_argument("FiniteTriple: vector does not sum to 1");
    }
  }
  Eigen::Index dim() const { return p.size(); }

  /// Clamps each vector away from zero (eps) and renormalizes before validating.
  static FiniteTriple clamped(const VectorX<Scalar>& p, const VectorX<Scalar>& q_old,
                              const VectorX<Scalar>& q_theta, Scalar eps = 1e-9) {
    return FiniteTriple(clamp_normalize(p, eps), clamp_normalize(q_old, eps),
                        clamp_normalize(q_theta, eps));
  }
};

using FiniteTripled = FiniteTriple<double>;

/// L = E_P[ln(q_theta/(q_theta+q_old))] + E_{Q_old}[ln(q_old/(q_theta+q_old))].
template <typename Scalar>
Scalar adversarial_objective(const FiniteTriple<Scalar>& t) {
  using std::log;
  Scalar l(0);
  for (Eigen::Index i = 0; i < t.dim(); ++i) {
    const Scalar s = t.q_theta(i) + t.q_old(i);
    l += t.p(i) * log(t.q_theta(i) / s) + t.q_old(i) * log(t.q_old(i) / s);
  }
  return l;
}

template <typename Scalar>
struct Theorem1Terms {
  Scalar divergence;      // D_{f_js}(P || Q_old) = 2 JS - 2 ln 2
  Scalar objective;       // L(P, Q_old, Q_theta)
  Scalar bregman_q_old;   // E_{Q_old}[B_f(p/q_old || q_theta/q_old)]
  Scalar bregman_p;       // E_P[B_f(q_old/p || q_old/q_theta)]
  Scalar residual_q_old_form;
  Scalar residual_p_form;
  Scalar residual() const { return std::max(residual_q_old_form, residual_p_form); }
};

/// Evaluates both Bregman forms of the decomposition
///   D_{f_js}(P||Q_old) = L + E_{Q_old}[B_f(p/q_old || q_theta/q_old)]
///                      = L + E_P[B_f(q_old/p || q_old/q_theta)].
template <typename Scalar>
Theorem1Terms<Scalar> verify_theorem1(const FiniteTriple<Scalar>& t) {
  using std::abs;
  const auto f = f_js<Scalar>();
  Theorem1Terms<Scalar> r{};
  r.divergence = f_divergence(f, t.p, t.q_old);
  r.objective = adversarial_objective(t);
  r.bregman_q_old = Scalar(0);
  r.bregman_p = Scalar(0);
  for (Eigen::Index i = 0; i < t.dim(); ++i) {
    r.bregman_q_old += t.q_old(i) * bregman(f, t.p(i) / t.q_old(i), t.q_theta(i) / t.q_old(i));
    r.bregman_p += t.p(i) * bregman(f, t.q_old(i) / t.p(i), t.q_old(i) / t.q_theta(i));
  }
  r.residual_q_old_form = abs(r.divergence - r.objective - r.bregman_q_old);
  r.residual_p_form = abs(r.divergence - r.objective - r.bregman_p);
  return r;
}

/// Residual of D_f(P||Q_old) = L_f + E_{Q_old}[B_f(p/q_old || q_theta/q_old)] with
/// tau = f'(q_theta/q_old) and L_f = E_P[tau] - E_{Q_old}[f*(tau)].
/// Throws DomainError naming the coordinate where tau leaves dom f*.
template <typename Scalar>
Scalar verify_theorem3(const FGenerator<Scalar>& f, const FiniteTriple<Scalar>& t) {
  using std::abs;
  if (!f.strictly_convex) throw std::invalid_argument("verify_theorem3: f must be strictly convex");
  Scalar lf(0), breg(0);
  for (Eigen::Index i = 0; i < t.dim(); ++i) {
    const Scalar ratio = t.q_theta(i) / t.q_old(i);
    const Scalar tau = f.fprime(ratio);
    if (!f.fstar_domain(tau))
      throw DomainError("verify_theorem3: tau outside dom f* for generator '" + f.name + "'",
                        static_cast<long>(i));
    lf += t.p(i) * tau - t.q_old(i) * f.fstar(tau);
    breg += t.q_old(i) * bregman(f, t.p(i) / t.q_old(i), ratio);
  }
  return abs(f_divergence(f, t.p, t.q_old) - lf - breg);
}

struct Betweenness {
  bool holds = false;
  double fraction = 0.0;
};

/// Pointwise min(q_old, p) < q_theta < max(q_old, p), with strict inequalities
/// tested at margin 1e-9. Where p == q_old (within 1e-12) q_theta must equal it.
template <typename Scalar>
Betweenness check_betweenness(const FiniteTriple<Scalar>& t) {
  using std::abs, std::min, std::max;
  constexpr double kMargin = 1e-9;
  constexpr double kTie = 1e-12;
  Eigen::Index ok = 0;
  for (Eigen::Index i = 0; i < t.dim(); ++i) {
    const double p = static_cast<double>(t.p(i)), qo = static_cast<double>(t.q_old(i)),
                 qt = static_cast<double>(t.q_theta(i));
    const bool sat = abs(p - qo) <= kTie ? abs(qt - p) <= kTie
                                         : (min(p, qo) + kMargin < qt && qt < max(p, qo) - kMargin);
    ok += sat ? 1 : 0;
  }
  return {ok == t.dim(), static_cast<double>(ok) / static_cast<double>(t.dim())};
}

template <typename Scalar>
struct MonotoneResult {
  Scalar delta;  // D_f(P||Q_old) - D_f(P||Q_theta)
  bool hypothesis_held;
  /// The claimed implication: betweenness => strict decrease.
  bool consistent() const { return !hypothesis_held || delta > Scalar(0); }
};

template <typename Scalar>
MonotoneResult<Scalar> verify_monotone_decrease(const FGenerator<Scalar>& f,
                                                const FiniteTriple<Scalar>& t) {
  return {f_divergence(f, t.p, t.q_old) - f_divergence(f, t.p, t.q_theta),
          check_betweenness(t).holds};
}

// ---------------------------------------------------------------------------
// Random instances (double precision)

/// Dirichlet(1) draw, clamped to entries >= min_entry and renormalized.
Eigen::VectorXd random_distribution(int dim, Rng& rng, double min_entry = 1e-6);
FiniteTripled random_triple(int dim, Rng& rng);
/// Triple whose q_theta lies strictly between q_old and p at every coordinate.
FiniteTripled random_sandwich_triple(int dim, Rng& rng);
/// Searches random triples for one where D_f(P||Q_theta) > D_f(P||Q_old).
std::optional<FiniteTripled> find_increase_counterexample(const FGeneratord& f, int dim, Rng& rng,
                                                          int max_tries = 100000);

}  // namespace dgsan
