#pragma once

// Reverse-mode automatic differentiation over dense float64 matrices.
//
// A Var is a shared handle to a graph node. Ops record their parents and a
// backward closure only when some input requires a gradient, so evaluating a
// frozen model builds no graph. The graph is rebuilt on every forward pass.

#include <Eigen/Dense>

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace dgsan::ad {

using Matrix = Eigen::MatrixXd;
using Index = Eigen::Index;

struct Node {
  Matrix value;
  Matrix grad;
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward;
};

class Var {
 public:
  Var() = default;
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Matrix& value() const { return node_->value; }
  /// Gradient from the most recent backward(); empty for constants.
  const Matrix& grad() const { return node_->grad; }
  Index rows() const { return node_->value.rows(); }
  Index cols() const { return node_->value.cols(); }
  Index size() const { return node_->value.size(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool is_leaf() const { return node_->parents.empty() && !node_->backward; }
  const char* op() const { return node_->op; }
  /// Value of a 1x1 Var.
  double item() const;

  /// In-place access for leaves (optimizer updates, finite differences).
  Matrix& mutable_value();
  Matrix& mutable_grad() { return node_->grad; }

  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

/// Leaf without gradient. Throws std::domain_error on NaN/Inf.
Var constant(Matrix value);
/// Leaf that accumulates a gradient. Throws std::domain_error on NaN/Inf.
Var parameter(Matrix value);
Var scalar(double v);
/// n x 1 constant column.
Var column(const Eigen::VectorXd& v);

// Linear algebra and elementwise arithmetic. `add`/`sub` also accept a 1 x C
// right operand, broadcast over the rows of the left one.
Var matmul(const Var& a, const Var& b);
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var neg(const Var& a);

// Shape manipulation. axis 0 = rows, axis 1 = columns.
Var concat(std::span<const Var> parts, int axis);
Var slice(const Var& a, int axis, Index start, Index length);
/// Row i of the result is row ids[i] of `a`.
Var take_rows(const Var& a, std::span<const int> ids);
/// Same as take_rows, with the message of an embedding lookup.
Var embedding_lookup(const Var& table, std::span<const int> ids);

// Nonlinearities.
Var tanh(const Var& a);
Var sigmoid(const Var& a);
/// log1p(exp(-|x|)) + max(x, 0).
Var softplus(const Var& a);
/// Max-subtracted log-softmax along `axis`.
Var log_softmax(const Var& a, int axis);

// Reductions to 1x1.
Var sum(const Var& a);
Var mean(const Var& a);

/// n x 1 column with entry i = logp(i, ids[i]); a 1 x C `logp` is broadcast
/// so that entry i = logp(0, ids[i]).
Var gather(const Var& logp, std::span<const int> ids);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator*(const Var& a, double c) { return scale(a, c); }
inline Var operator*(double c, const Var& a) { return scale(a, c); }
inline Var operator-(const Var& a) { return neg(a); }

/// Reverse-mode sweep from a 1x1 root. All gradients reachable from `root`
/// are zeroed first, so repeated calls give identical results.
void backward(const Var& root);

/// Maximum relative error between analytic gradients (via backward) and
/// central differences (f(p+eps) - f(p-eps)) / 2eps over every coordinate of
/// `params`. The denominator is max(|a|, |b|, 1e-8). `build` must rebuild the
/// scalar graph from the current parameter values; a build whose two
/// evaluations at the same point differ is rejected.
double grad_check(const std::function<Var()>& build, std::span<const Var> params,
                  double eps = 1e-5);

}  // namespace dgsan::ad
