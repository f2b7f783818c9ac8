#include "dgsan/tensor.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <unordered_set>

#include "dgsan/errors.hpp"

namespace dgsan::ad {

namespace {

std::string shape_str(const Matrix& m) {
  return "(" + std::to_string(m.rows()) + "x" + std::to_string(m.cols()) + ")";
}

[[noreturn]] void shape_error(const char* op, const Matrix& a, const Matrix& b) {
  throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(a) + " vs " +
                              shape_str(b));
}

using Parents = std::vector<std::shared_ptr<Node>>;

Var make(Matrix value, const char* op, Parents parents, std::function<void(Node&)> fn) {
  if (!value.allFinite()) throw NumericDivergence(std::string(op) + " produced a non-finite value");
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->op = op;
  for (const auto& p : parents) node->requires_grad = node->requires_grad || p->requires_grad;
  if (node->requires_grad) {
    node->parents = std::move(parents);
    node->backward = std::move(fn);
  }
  return Var(std::move(node));
}

inline void accumulate(Node& parent, const Matrix& g) {
  if (parent.requires_grad) parent.grad += g;
}

template <typename Expr>
inline void accumulate(Node& parent, const Expr& g) {
  if (parent.requires_grad) parent.grad += g;
}

Var leaf(Matrix value, bool requires_grad) {
  if (!value.allFinite()) throw std::domain_error("non-finite value in array construction");
  auto node = std::make_shared<Node>();
  node->requires_grad = requires_grad;
  if (requires_grad) node->grad = Matrix::Zero(value.rows(), value.cols());
  node->value = std::move(value);
  return Var(std::move(node));
}

void check_ids(const char* op, std::span<const int> ids, Index limit) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] < 0 || ids[i] >= limit)
      throw std::out_of_range(std::string(op) + ": id " + std::to_string(ids[i]) +
                              " out of range [0, " + std::to_string(limit) + ")");
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

double Var::item() const {
  if (node_->value.size() != 1) throw std::invalid_argument("item() on a non-scalar Var");
  return node_->value(0, 0);
}

Matrix& Var::mutable_value() {
  if (!is_leaf()) throw std::logic_error("mutable_value() on a non-leaf Var");
  return node_->value;
}

Var constant(Matrix value) { return leaf(std::move(value), false); }
Var parameter(Matrix value) { return leaf(std::move(value), true); }
Var scalar(double v) { return constant(Matrix::Constant(1, 1, v)); }
Var column(const Eigen::VectorXd& v) { return constant(Matrix(v)); }

// ---------------------------------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  if (a.cols() != b.rows()) shape_error("matmul", a.value(), b.value());
  return make(a.value() * b.value(), "matmul", {a.node(), b.node()}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    if (pa.requires_grad) pa.grad.noalias() += n.grad * pb.value.transpose();
    if (pb.requires_grad) pb.grad.noalias() += pa.value.transpose() * n.grad;
  });
}

namespace {
bool row_broadcast(const Var& a, const Var& b) {
  return b.rows() == 1 && a.rows() != 1 && a.cols() == b.cols();
}
}  // namespace

Var add(const Var& a, const Var& b) {
  if (row_broadcast(a, b)) {
    Matrix out = a.value().rowwise() + b.value().row(0);
    return make(std::move(out), "add", {a.node(), b.node()}, [](Node& n) {
      accumulate(*n.parents[0], n.grad);
      accumulate(*n.parents[1], n.grad.colwise().sum());
    });
  }
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("add", a.value(), b.value());
  return make(a.value() + b.value(), "add", {a.node(), b.node()}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], n.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  if (row_broadcast(a, b)) {
    Matrix out = a.value().rowwise() - b.value().row(0);
    return make(std::move(out), "sub", {a.node(), b.node()}, [](Node& n) {
      accumulate(*n.parents[0], n.grad);
      accumulate(*n.parents[1], -n.grad.colwise().sum());
    });
  }
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("sub", a.value(), b.value());
  return make(a.value() - b.value(), "sub", {a.node(), b.node()}, [](Node& n) {
    accumulate(*n.parents[0], n.grad);
    accumulate(*n.parents[1], -n.grad);
  });
}

Var mul(const Var& a, const Var& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_error("mul", a.value(), b.value());
  return make(a.value().cwiseProduct(b.value()), "mul", {a.node(), b.node()}, [](Node& n) {
    Node& pa = *n.parents[0];
    Node& pb = *n.parents[1];
    accumulate(pa, n.grad.cwiseProduct(pb.value));
    accumulate(pb, n.grad.cwiseProduct(pa.value));
  });
}

Var scale(const Var& a, double c) {
  return make(a.value() * c, "scale", {a.node()},
              [c](Node& n) { accumulate(*n.parents[0], n.grad * c); });
}

Var neg(const Var& a) { return scale(a, -1.0); }

// ---------------------------------------------------------------------------

Var concat(std::span<const Var> parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  if (axis != 0 && axis != 1) throw std::invalid_argument("concat: axis must be 0 or 1");
  Index rows = 0, cols = 0;
  for (const auto& p : parts) {
    if (axis == 0) {
      if (rows > 0 && p.cols() != cols) shape_error("concat", parts[0].value(), p.value());
      rows += p.rows();
      cols = p.cols();
    } else {
      if (cols > 0 && p.rows() != rows) shape_error("concat", parts[0].value(), p.value());
      cols += p.cols();
      rows = p.rows();
    }
  }
  Matrix out(rows, cols);
  Parents parents;
  Index offset = 0;
  for (const auto& p : parts) {
    if (axis == 0)
      out.middleRows(offset, p.rows()) = p.value();
    else
      out.middleCols(offset, p.cols()) = p.value();
    offset += axis == 0 ? p.rows() : p.cols();
    parents.push_back(p.node());
  }
  return make(std::move(out), "concat", std::move(parents), [axis](Node& n) {
    Index off = 0;
    for (auto& p : n.parents) {
      if (axis == 0) {
        accumulate(*p, n.grad.middleRows(off, p->value.rows()));
        off += p->value.rows();
      } else {
        accumulate(*p, n.grad.middleCols(off, p->value.cols()));
        off += p->value.cols();
      }
    }
  });
}

Var slice(const Var& a, int axis, Index start, Index length) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("slice: axis must be 0 or 1");
  const Index extent = axis == 0 ? a.rows() : a.cols();
  if (start < 0 || length < 0 || start + length > extent)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + ", " +
                                std::to_string(start + length) + ") outside extent " +
                                std::to_string(extent));
  Matrix out = axis == 0 ? Matrix(a.value().middleRows(start, length))
                         : Matrix(a.value().middleCols(start, length));
  return make(std::move(out), "slice", {a.node()}, [axis, start, length](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    if (axis == 0)
      p.grad.middleRows(start, length) += n.grad;
    else
      p.grad.middleCols(start, length) += n.grad;
  });
}

namespace {
Var take_rows_impl(const char* op, const Var& a, std::span<const int> ids) {
  check_ids(op, ids, a.rows());
  Matrix out(static_cast<Index>(ids.size()), a.cols());
  for (std::size_t i = 0; i < ids.size(); ++i) out.row(static_cast<Index>(i)) = a.value().row(ids[i]);
  std::vector<int> idx(ids.begin(), ids.end());
  return make(std::move(out), op, {a.node()}, [idx = std::move(idx)](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i) p.grad.row(idx[i]) += n.grad.row(static_cast<Index>(i));
  });
}
}  // namespace

Var take_rows(const Var& a, std::span<const int> ids) { return take_rows_impl("take_rows", a, ids); }

Var embedding_lookup(const Var& table, std::span<const int> ids) {
  return take_rows_impl("embedding_lookup", table, ids);
}

// ---------------------------------------------------------------------------

Var tanh(const Var& a) {
  Matrix y = a.value().array().tanh().matrix();
  return make(y, "tanh", {a.node()}, [y](Node& n) {
    accumulate(*n.parents[0], n.grad.cwiseProduct((1.0 - y.array().square()).matrix()));
  });
}

Var sigmoid(const Var& a) {
  Matrix y = a.value().unaryExpr([](double x) { return stable_sigmoid(x); });
  return make(y, "sigmoid", {a.node()}, [y](Node& n) {
    accumulate(*n.parents[0], n.grad.cwiseProduct((y.array() * (1.0 - y.array())).matrix()));
  });
}

Var softplus(const Var& a) {
  Matrix y = a.value().unaryExpr(
      [](double x) { return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0); });
  return make(std::move(y), "softplus", {a.node()}, [](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    p.grad += n.grad.cwiseProduct(p.value.unaryExpr([](double x) { return stable_sigmoid(x); }));
  });
}

Var log_softmax(const Var& a, int axis) {
  if (axis != 0 && axis != 1) throw std::invalid_argument("log_softmax: axis must be 0 or 1");
  // Work row-wise; axis 0 is handled on the transpose.
  const Matrix x = axis == 1 ? a.value() : Matrix(a.value().transpose());
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  Matrix out = axis == 1 ? y : Matrix(y.transpose());
  return make(std::move(out), "log_softmax", {a.node()}, [y, axis](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    const Matrix g = axis == 1 ? n.grad : Matrix(n.grad.transpose());
    const Matrix soft = y.array().exp().matrix();
    Matrix dx = g - (soft.array().colwise() * g.rowwise().sum().array()).matrix();
    if (axis == 1)
      p.grad += dx;
    else
      p.grad += dx.transpose();
  });
}

Var sum(const Var& a) {
  return make(Matrix::Constant(1, 1, a.value().sum()), "sum", {a.node()}, [](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) p.grad.array() += n.grad(0, 0);
  });
}

Var mean(const Var& a) {
  if (a.size() == 0) throw std::invalid_argument("mean: empty input");
  const double inv = 1.0 / static_cast<double>(a.size());
  return make(Matrix::Constant(1, 1, a.value().mean()), "mean", {a.node()}, [inv](Node& n) {
    Node& p = *n.parents[0];
    if (p.requires_grad) p.grad.array() += n.grad(0, 0) * inv;
  });
}

Var gather(const Var& logp, std::span<const int> ids) {
  const bool broadcast = logp.rows() == 1;
  if (!broadcast && logp.rows() != static_cast<Index>(ids.size()))
    throw std::invalid_argument("gather: " + std::to_string(ids.size()) + " ids for " +
                                std::to_string(logp.rows()) + " rows");
  check_ids("gather", ids, logp.cols());
  Matrix out(static_cast<Index>(ids.size()), 1);
  for (std::size_t i = 0; i < ids.size(); ++i)
    out(static_cast<Index>(i), 0) = logp.value()(broadcast ? 0 : static_cast<Index>(i), ids[i]);
  std::vector<int> idx(ids.begin(), ids.end());
  return make(std::move(out), "gather", {logp.node()}, [idx = std::move(idx), broadcast](Node& n) {
    Node& p = *n.parents[0];
    if (!p.requires_grad) return;
    for (std::size_t i = 0; i < idx.size(); ++i)
      p.grad(broadcast ? 0 : static_cast<Index>(i), idx[i]) += n.grad(static_cast<Index>(i), 0);
  });
}

// ---------------------------------------------------------------------------

void backward(const Var& root) {
  if (!root) throw std::invalid_argument("backward: empty root");
  if (root.size() != 1) throw std::invalid_argument("backward: root must be a 1x1 scalar");
  if (!root.requires_grad()) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack;
  stack.emplace_back(root.node().get(), 0);
  visited.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* parent = node->parents[next++].get();
      if (parent->requires_grad && visited.insert(parent).second) stack.emplace_back(parent, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  for (Node* n : order) n->grad = Matrix::Zero(n->value.rows(), n->value.cols());
  root.node()->grad(0, 0) = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward) (*it)->backward(**it);
}

double grad_check(const std::function<Var()>& build, std::span<const Var> params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3)) throw std::invalid_argument("grad_check: eps must be in [1e-7, 1e-3]");
  const Var first = build();
  const Var second = build();
  if (first.size() != 1) throw std::invalid_argument("grad_check: build must return a scalar");
  if (first.item() != second.item())
    throw std::runtime_error("grad_check: graph constructor is not deterministic");
  for (const auto& p : params)
    if (p.requires_grad()) Var(p).mutable_grad() = Matrix::Zero(p.rows(), p.cols());
  backward(first);

  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    if (!p.requires_grad()) throw std::invalid_argument("grad_check: parameter without gradient");
    analytic.push_back(p.grad());
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Var p = params[k];
    Matrix& value = p.mutable_value();
    for (Index i = 0; i < value.size(); ++i) {
      const double saved = value.data()[i];
      value.data()[i] = saved + eps;
      const double up = build().item();
      value.data()[i] = saved - eps;
      const double down = build().item();
      value.data()[i] = saved;
      const double numeric = (up - down) / (2.0 * eps);
      const double a = analytic[k].data()[i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace dgsan::ad
