#include "dgsan/optim.hpp"

#include <cmath>
#include <stdexcept>

#include "dgsan/errors.hpp"

namespace dgsan {

Adam::Adam(std::vector<ad::Var> params, AdamOptions options)
    : params_(std::move(params)), opts_(options) {
  if (!(opts_.learning_rate > 0.0)) throw std::invalid_argument("Adam: learning rate must be > 0");
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw std::invalid_argument("Adam: parameter does not require grad");
    m_.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(ad::Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& p = params_[i];
    ad::Matrix& g = p.mutable_grad();
    if (!g.allFinite()) throw NumericDivergence("Adam: non-finite gradient");
    m_[i] = opts_.beta1 * m_[i] + (1.0 - opts_.beta1) * g;
    v_[i] = opts_.beta2 * v_[i] + (1.0 - opts_.beta2) * g.cwiseAbs2();
    p.mutable_value().array() -=
        opts_.learning_rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + opts_.epsilon);
    g.setZero();
  }
}

}  // namespace dgsan
