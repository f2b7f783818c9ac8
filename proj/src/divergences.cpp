#include "dgsan/divergences.hpp"

#include <cmath>
#include <stdexcept>

namespace dgsan {

FGeneratord generator_by_name(const std::string& name) {
  for (auto& g : builtin_generators<double>())
    if (g.name == name) return g;
  throw std::invalid_argument("unknown f generator '" + name + "'");
}

Eigen::VectorXd random_distribution(int dim, Rng& rng, double min_entry) {
  if (dim < 1) throw std::invalid_argument("random_distribution: dim must be >= 1");
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v(i) = -std::log1p(-uniform01(rng));  // Exp(1)
  v /= v.sum();
  return clamp_normalize(v, min_entry);
}

FiniteTripled random_triple(int dim, Rng& rng) {
  Eigen::VectorXd p = random_distribution(dim, rng);
  Eigen::VectorXd q_old = random_distribution(dim, rng);
  Eigen::VectorXd q_theta = random_distribution(dim, rng);
  return FiniteTripled(std::move(p), std::move(q_old), std::move(q_theta));
}

FiniteTripled random_sandwich_triple(int dim, Rng& rng) {
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const Eigen::VectorXd p = random_distribution(dim, rng);
    const Eigen::VectorXd q_old = random_distribution(dim, rng);
    const Eigen::VectorXd d = p - q_old;

    // q_theta = q_old + lambda .* d with lambda in (0, 1); rescale lambda on
    // one side so the increments cancel and q_theta stays normalized.
    Eigen::VectorXd lambda(dim);
    for (int i = 0; i < dim; ++i) lambda(i) = 0.05 + 0.9 * uniform01(rng);
    double up = 0.0, down = 0.0;
    for (int i = 0; i < dim; ++i) (d(i) > 0 ? up : down) += lambda(i) * std::abs(d(i));
    if (up <= 0.0 || down <= 0.0) continue;
    for (int i = 0; i < dim; ++i) {
      if (up > down && d(i) > 0) lambda(i) *= down / up;
      if (down > up && d(i) < 0) lambda(i) *= up / down;
    }
    Eigen::VectorXd q_theta = q_old + lambda.cwiseProduct(d);
    q_theta /= q_theta.sum();
    if ((q_theta.array() <= 0.0).any()) continue;
    FiniteTripled t(p, q_old, q_theta);
    if (check_betweenness(t).holds) return t;
  }
  throw std::runtime_error("random_sandwich_triple: failed to draw a sandwich triple");
}

std::optional<FiniteTripled> find_increase_counterexample(const FGeneratord& f, int dim, Rng& rng,
                                                          int max_tries) {
  for (int i = 0; i < max_tries; ++i) {
    FiniteTripled t = random_triple(dim, rng);
    const auto r = verify_monotone_decrease(f, t);
    if (!r.hypothesis_held && r.delta < 0.0) return t;
  }
  return std::nullopt;
}

}  // namespace dgsan
