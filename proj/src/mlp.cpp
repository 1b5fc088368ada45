#include "afa/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace afa {

void MlpShape::validate() const {
  if (input < 1 || hidden1 < 1 || hidden2 < 1)
    throw std::invalid_argument("mlp layer sizes must be >= 1");
  if (group_out < 1 || member_out < 1)
    throw std::invalid_argument("mlp head sizes must be >= 1");
}

int MlpShape::num_params() const {
  return hidden1 * input + hidden1 + hidden2 * hidden1 + hidden2 +
         group_out * hidden2 + group_out + member_out * hidden2 + member_out +
         hidden2 + 1;
}

namespace {

using MatMap = Eigen::Map<Eigen::MatrixXd>;
using CMatMap = Eigen::Map<const Eigen::MatrixXd>;
using VecMap = Eigen::Map<Eigen::VectorXd>;
using CVecMap = Eigen::Map<const Eigen::VectorXd>;

}  // namespace

Mlp::Mlp(MlpShape shape, SplitRng& init_rng) : shape_(shape) {
  shape_.validate();
  int at = 0;
  offsets_.w1 = at; at += shape_.hidden1 * shape_.input;
  offsets_.b1 = at; at += shape_.hidden1;
  offsets_.w2 = at; at += shape_.hidden2 * shape_.hidden1;
  offsets_.b2 = at; at += shape_.hidden2;
  offsets_.wg = at; at += shape_.group_out * shape_.hidden2;
  offsets_.bg = at; at += shape_.group_out;
  offsets_.wm = at; at += shape_.member_out * shape_.hidden2;
  offsets_.bm = at; at += shape_.member_out;
  offsets_.wv = at; at += shape_.hidden2;
  offsets_.bv = at; at += 1;
  theta_ = Eigen::VectorXd::Zero(at);

  auto glorot = [&](int offset, int rows, int cols) {
    double bound = std::sqrt(6.0 / (rows + cols));
    for (int k = 0; k < rows * cols; ++k)
      theta_[offset + k] = (2.0 * init_rng.uniform() - 1.0) * bound;
  };
  glorot(offsets_.w1, shape_.hidden1, shape_.input);
  glorot(offsets_.w2, shape_.hidden2, shape_.hidden1);
  // small head weights keep the initial policy near uniform
  auto small = [&](int offset, int count) {
    for (int k = 0; k < count; ++k)
      theta_[offset + k] = 0.01 * init_rng.gaussian();
  };
  small(offsets_.wg, shape_.group_out * shape_.hidden2);
  small(offsets_.wm, shape_.member_out * shape_.hidden2);
  small(offsets_.wv, shape_.hidden2);
}

Mlp::Forward Mlp::forward(const Eigen::VectorXd& x) const {
  if (x.size() != shape_.input)
    throw std::invalid_argument("mlp input size mismatch");
  const double* p = theta_.data();
  CMatMap w1(p + offsets_.w1, shape_.hidden1, shape_.input);
  CVecMap b1(p + offsets_.b1, shape_.hidden1);
  CMatMap w2(p + offsets_.w2, shape_.hidden2, shape_.hidden1);
  CVecMap b2(p + offsets_.b2, shape_.hidden2);
  CMatMap wg(p + offsets_.wg, shape_.group_out, shape_.hidden2);
  CVecMap bg(p + offsets_.bg, shape_.group_out);
  CMatMap wm(p + offsets_.wm, shape_.member_out, shape_.hidden2);
  CVecMap bm(p + offsets_.bm, shape_.member_out);
  CVecMap wv(p + offsets_.wv, shape_.hidden2);

  Forward fw;
  fw.input = x;
  fw.a1 = (w1 * x + b1).array().tanh();
  fw.a2 = (w2 * fw.a1 + b2).array().tanh();
  fw.group_logits = wg * fw.a2 + bg;
  fw.member_logits = wm * fw.a2 + bm;
  fw.value = wv.dot(fw.a2) + theta_[offsets_.bv];
  return fw;
}

void Mlp::backward(const Forward& fw, const Eigen::VectorXd& d_group,
                   const Eigen::VectorXd& d_member, double d_value,
                   Eigen::VectorXd& grad) const {
  if (grad.size() != theta_.size())
    throw std::invalid_argument("gradient buffer size mismatch");
  const double* p = theta_.data();
  CMatMap w1(p + offsets_.w1, shape_.hidden1, shape_.input);
  CMatMap w2(p + offsets_.w2, shape_.hidden2, shape_.hidden1);
  CMatMap wg(p + offsets_.wg, shape_.group_out, shape_.hidden2);
  CMatMap wm(p + offsets_.wm, shape_.member_out, shape_.hidden2);
  CVecMap wv(p + offsets_.wv, shape_.hidden2);

  double* g = grad.data();
  MatMap gw1(g + offsets_.w1, shape_.hidden1, shape_.input);
  VecMap gb1(g + offsets_.b1, shape_.hidden1);
  MatMap gw2(g + offsets_.w2, shape_.hidden2, shape_.hidden1);
  VecMap gb2(g + offsets_.b2, shape_.hidden2);
  MatMap gwg(g + offsets_.wg, shape_.group_out, shape_.hidden2);
  VecMap gbg(g + offsets_.bg, shape_.group_out);
  MatMap gwm(g + offsets_.wm, shape_.member_out, shape_.hidden2);
  VecMap gbm(g + offsets_.bm, shape_.member_out);
  VecMap gwv(g + offsets_.wv, shape_.hidden2);

  gwg += d_group * fw.a2.transpose();
  gbg += d_group;
  gwm += d_member * fw.a2.transpose();
  gbm += d_member;
  gwv += d_value * fw.a2;
  grad[offsets_.bv] += d_value;

  Eigen::VectorXd d_a2 =
      wg.transpose() * d_group + wm.transpose() * d_member + d_value * wv;
  Eigen::VectorXd d_z2 =
      d_a2.array() * (1.0 - fw.a2.array().square());
  gw2 += d_z2 * fw.a1.transpose();
  gb2 += d_z2;

  Eigen::VectorXd d_a1 = w2.transpose() * d_z2;
  Eigen::VectorXd d_z1 = d_a1.array() * (1.0 - fw.a1.array().square());
  gw1 += d_z1 * fw.input.transpose();
  gb1 += d_z1;
}

AdamOptimizer::AdamOptimizer(int num_params, double learning_rate, double beta1,
                             double beta2, double epsilon)
    : lr_(learning_rate),
      beta1_(beta1),
      beta2_(beta2),
      eps_(epsilon),
      m_(Eigen::VectorXd::Zero(num_params)),
      v_(Eigen::VectorXd::Zero(num_params)) {}

void AdamOptimizer::step(Eigen::VectorXd& params, const Eigen::VectorXd& grad) {
  if (params.size() != m_.size() || grad.size() != m_.size())
    throw std::invalid_argument("optimizer size mismatch");
  ++t_;
  m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
  v_ = beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square();
  double c1 = 1.0 - std::pow(beta1_, t_);
  double c2 = 1.0 - std::pow(beta2_, t_);
  params.array() -=
      lr_ * (m_.array() / c1) / ((v_.array() / c2).sqrt() + eps_);
}

}  // namespace afa
