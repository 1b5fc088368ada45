#pragma once

#include <Eigen/Dense>

#include "afa/rng.hpp"

namespace afa {

struct MlpShape {
  int input = 0;
  int hidden1 = 128;
  int hidden2 = 128;
  int group_out = 0;   // K + 1, terminate slot last
  int member_out = 0;  // K * N
  void validate() const;
  int num_params() const;
};

// Two tanh hidden layers with three linear heads (group, member, value) off a
// shared embedding. Parameters live in one flat vector so the optimizer and
// finite-difference checks can treat the network as a plain function of theta.
class Mlp {
 public:
  Mlp(MlpShape shape, SplitRng& init_rng);

  struct Forward {
    Eigen::VectorXd input;
    Eigen::VectorXd a1, a2;  // tanh activations
    Eigen::VectorXd group_logits;
    Eigen::VectorXd member_logits;
    double value = 0.0;
  };

  Forward forward(const Eigen::VectorXd& x) const;

  // Accumulates dL/dtheta into grad given head gradients for one sample.
  void backward(const Forward& fw, const Eigen::VectorXd& d_group,
                const Eigen::VectorXd& d_member, double d_value,
                Eigen::VectorXd& grad) const;

  const MlpShape& shape() const { return shape_; }
  Eigen::VectorXd& params() { return theta_; }
  const Eigen::VectorXd& params() const { return theta_; }

 private:
  MlpShape shape_;
  Eigen::VectorXd theta_;

  struct Offsets {
    int w1, b1, w2, b2, wg, bg, wm, bm, wv, bv;
  };
  Offsets offsets_;
};

// Adam with bias correction.
class AdamOptimizer {
 public:
  explicit AdamOptimizer(int num_params, double learning_rate,
                         double beta1 = 0.9, double beta2 = 0.999,
                         double epsilon = 1e-8);
  void step(Eigen::VectorXd& params, const Eigen::VectorXd& grad);

 private:
  double lr_, beta1_, beta2_, eps_;
  Eigen::VectorXd m_, v_;
  int t_ = 0;
};

}  // namespace afa
