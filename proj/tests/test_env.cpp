#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "afa/env.hpp"
#include "synthetic.hpp"

using namespace afa;

namespace {

std::shared_ptr<const MixtureSurrogate> shared_two_class(
    int d, const std::vector<int>& signal, double separation) {
  return std::make_shared<const MixtureSurrogate>(
      afa::testing::two_class_gaussian_surrogate(d, signal, separation));
}

}  // namespace

TEST_CASE("terminate at t=0 on a uniform prior yields -ln 2") {
  auto s = shared_two_class(3, {0}, 2.0);
  EnvConfig config;
  config.shaping = false;
  AcquisitionEnv env(s, CostModel::uniform(3), config);
  env.reset(Eigen::Vector3d(0.1, 0.2, 0.3), Target::label(1));
  StepOutcome out = env.step(Action::terminate());
  CHECK(out.reward.prediction == doctest::Approx(-std::log(2.0)).epsilon(1e-12));
  CHECK(out.done);
}

TEST_CASE("acquisition cost is -alpha * feature cost") {
  auto s = shared_two_class(3, {0}, 2.0);
  EnvConfig config;
  config.alpha = 0.01;
  config.shaping = false;
  AcquisitionEnv env(s, CostModel::uniform(3), config);
  env.reset(Eigen::Vector3d(1.0, 0.0, 0.0), Target::label(1));
  StepOutcome out = env.step(Action::acquire(0));
  CHECK(out.reward.cost == doctest::Approx(-0.01).epsilon(1e-15));
  CHECK(out.reward.prediction == 0.0);
}

TEST_CASE("full acquisition on separable data drives the loss to zero") {
  auto s = shared_two_class(2, {0, 1}, 12.0);
  EnvConfig config;
  config.shaping = false;
  AcquisitionEnv env(s, CostModel::uniform(2), config);
  env.reset(Eigen::Vector2d(6.0, 6.0), Target::label(1));
  env.step(Action::acquire(0));
  env.step(Action::acquire(1));
  StepOutcome out = env.step(Action::terminate());
  CHECK(out.reward.prediction > -1e-6);
}

TEST_CASE("shaping is zero when the posterior cannot move") {
  auto s = shared_two_class(3, {}, 0.0);  // y independent of x
  Eigen::VectorXd values(3);
  values << 0.5, -0.2, 1.0;
  PartialInstance state = PartialInstance::empty(3);
  double r = shaping_reward(*s, values, state, 1, 1.0);
  CHECK(r == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("shaping equals the entropy drop for a collapsing posterior") {
  // four classes split far apart along dim 0: one observation collapses the
  // uniform posterior to (nearly) one-hot
  const int d = 2;
  std::vector<Mixture> per_class;
  for (int c = 0; c < 4; ++c) {
    GaussianComponent comp;
    comp.mean = Eigen::VectorXd::Zero(d);
    comp.mean[0] = 60.0 * c;
    comp.covariance = Eigen::MatrixXd::Identity(d, d);
    comp.log_weight = 0.0;
    per_class.push_back(Mixture({comp}));
  }
  TaskSpec task{TaskKind::kClassification, 4, d, OrderingConstraint::kNone};
  Eigen::VectorXd priors = Eigen::VectorXd::Constant(4, std::log(0.25));
  MixtureSurrogate s = MixtureSurrogate::classification_model(
      task, std::move(per_class), priors);

  Eigen::VectorXd values(d);
  values << 120.0, 0.0;  // exactly at class 2's mean
  double r = shaping_reward(s, values, PartialInstance::empty(d), 0, 1.0);
  CHECK(r == doctest::Approx(std::log(4.0)).epsilon(1e-6));
}

TEST_CASE("discounted shaping telescopes to the potential difference") {
  auto s = shared_two_class(5, {0, 2}, 2.0);
  EnvConfig config;
  config.gamma = 0.97;
  config.alpha = 0.01;
  config.shaping = true;
  AcquisitionEnv env(s, CostModel::uniform(5), config);

  SplitRng rng(7);
  for (int episode = 0; episode < 100; ++episode) {
    Eigen::VectorXd values(5);
    for (int i = 0; i < 5; ++i) values[i] = rng.gaussian();
    int label = rng.uniform_int(0, 1);
    env.reset(values, Target::label(label));

    double phi_start = shaping_potential(*s, values, env.state());
    int steps = rng.uniform_int(1, 5);
    double discounted = 0.0;
    double discount = 1.0;
    std::vector<int> order{0, 1, 2, 3, 4};
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (int t = 0; t < steps; ++t) {
      StepOutcome out = env.step(Action::acquire(order[t]));
      discounted += discount * out.reward.shaping;
      discount *= config.gamma;

      // supervised potential is bounded: 0 <= H(y|s) <= ln|Y|
      double h = s->conditional_entropy_y(env.state());
      CHECK(h >= -1e-15);
      CHECK(h <= std::log(2.0) + 1e-12);
    }
    double phi_end = shaping_potential(*s, values, env.state());
    double rhs = discount * phi_end - phi_start;
    CHECK(discounted ==
          doctest::Approx(rhs).epsilon(1e-9));
  }
}

TEST_CASE("unsupervised shaping uses per-dimension log likelihood potentials") {
  SplitRng rng(11);
  Mixture joint = afa::testing::random_mixture(4, 2, rng);
  TaskSpec task{TaskKind::kUnsupervised, 0, 4, OrderingConstraint::kNone};
  auto s = std::make_shared<const MixtureSurrogate>(
      MixtureSurrogate::unsupervised_model(task, joint));

  EnvConfig config;
  config.gamma = 0.9;
  AcquisitionEnv env(s, CostModel::uniform(4), config);
  for (int episode = 0; episode < 20; ++episode) {
    Eigen::VectorXd values = joint.sample(rng);
    env.reset(values, Target::none());
    double phi_start = shaping_potential(*s, values, env.state());
    double discounted = 0.0, discount = 1.0;
    for (int i = 0; i < 3; ++i) {
      StepOutcome out = env.step(Action::acquire(i));
      discounted += discount * out.reward.shaping;
      discount *= config.gamma;
    }
    double rhs = discount * shaping_potential(*s, values, env.state()) - phi_start;
    CHECK(discounted == doctest::Approx(rhs).epsilon(1e-9));
  }
}

TEST_CASE("side info marks observed entries and ignores irrelevant features") {
  auto s = shared_two_class(3, {0}, 3.0);  // feature 2 carries no signal
  SplitRng rng(13);
  PartialInstance state = PartialInstance::empty(3).with_observed(1, 0.4);
  SideInfo si = side_info(*s, state, 64, rng);
  CHECK(si.imputed_mean[1] == 0.4);
  CHECK(si.imputed_variance[1] == 0.0);
  CHECK(si.expected_info_gain[1] == 0.0);
  CHECK(std::abs(si.expected_info_gain[2]) < 1e-9);  // independent of y
  CHECK(si.expected_info_gain[0] > 0.1);
  CHECK(si.prediction_summary.size() == 2);
  CHECK(si.prediction_summary.sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("gaussian-approximation info gain matches the closed form exactly for gaussians") {
  SplitRng rng(17);
  auto joint = afa::testing::joint_gaussian_regression(4, rng);
  auto s = std::make_shared<const MixtureSurrogate>(joint.surrogate);
  PartialInstance state = PartialInstance::empty(4).with_observed(1, 0.3);
  SplitRng si_rng(19);
  SideInfo si = side_info(*s, state, 64, si_rng);
  for (int i : {0, 2, 3}) {
    double truth = afa::testing::gaussian_cmi(joint.covariance, i, 4, {1});
    CHECK(std::abs(si.expected_info_gain[i] - truth) <=
          0.10 * std::max(truth, 1e-6));
  }
}

TEST_CASE("action masks track observation, budget and termination rules") {
  auto s = shared_two_class(3, {0}, 2.0);
  EnvConfig config;
  config.hard_budget = 2;
  AcquisitionEnv env(s, CostModel::uniform(3), config);
  env.reset(Eigen::Vector3d(1.0, 2.0, 3.0), Target::label(0));

  std::vector<bool> mask = env.valid_action_mask();
  CHECK(mask == std::vector<bool>{true, true, true, true});

  env.step(Action::acquire(1));
  mask = env.valid_action_mask();
  CHECK(mask == std::vector<bool>{true, false, true, true});

  env.step(Action::acquire(0));
  mask = env.valid_action_mask();  // budget reached: terminate only
  CHECK(mask == std::vector<bool>{false, false, false, true});

  CHECK_THROWS_AS(env.step(Action::acquire(2)), std::invalid_argument);
}

TEST_CASE("chronological masking removes features behind the acquired index") {
  MixtureSurrogate plain =
      afa::testing::two_class_gaussian_surrogate(8, {0}, 2.0);
  TaskSpec task = plain.task();
  task.ordering = OrderingConstraint::kChronological;
  std::vector<Mixture> mixtures{plain.class_mixture(0), plain.class_mixture(1)};
  auto s = std::make_shared<const MixtureSurrogate>(
      MixtureSurrogate::classification_model(task, std::move(mixtures),
                                             plain.class_log_priors()));
  AcquisitionEnv env(s, CostModel::uniform(8), EnvConfig{});
  env.reset(Eigen::VectorXd::Zero(8), Target::label(0));
  env.step(Action::acquire(5));
  std::vector<bool> mask = env.valid_action_mask();
  for (int i = 0; i <= 5; ++i) CHECK_FALSE(mask[i]);
  CHECK(mask[6]);
  CHECK(mask[7]);
}

TEST_CASE("terminate is forced once every feature is observed") {
  auto s = shared_two_class(2, {0}, 2.0);
  EnvConfig config;
  config.allow_terminate = false;
  config.hard_budget = 5;
  AcquisitionEnv env(s, CostModel::uniform(2), config);
  env.reset(Eigen::Vector2d(0.0, 1.0), Target::label(0));
  CHECK_FALSE(env.valid_action_mask()[2]);  // features remain
  env.step(Action::acquire(0));
  env.step(Action::acquire(1));
  std::vector<bool> mask = env.valid_action_mask();
  CHECK(mask == std::vector<bool>{false, false, true});
}

TEST_CASE("transitions and rewards are deterministic given the instance") {
  auto s = shared_two_class(3, {0, 1}, 2.5);
  EnvConfig config;
  for (int repeat = 0; repeat < 2; ++repeat) {
    AcquisitionEnv env(s, CostModel::uniform(3), config);
    env.reset(Eigen::Vector3d(0.7, -0.3, 0.1), Target::label(1));
    StepOutcome a = env.step(Action::acquire(2));
    StepOutcome b = env.step(Action::acquire(0));
    StepOutcome c = env.step(Action::terminate());
    static double first_run[3];
    if (repeat == 0) {
      first_run[0] = a.reward.total();
      first_run[1] = b.reward.total();
      first_run[2] = c.reward.total();
    } else {
      CHECK(a.reward.total() == first_run[0]);
      CHECK(b.reward.total() == first_run[1]);
      CHECK(c.reward.total() == first_run[2]);
    }
  }
}

TEST_CASE("unsupervised terminal reward is negative mean imputation error") {
  GaussianComponent c;
  c.mean = Eigen::VectorXd::Zero(2);
  c.covariance = Eigen::MatrixXd::Identity(2, 2);
  c.log_weight = 0.0;
  TaskSpec task{TaskKind::kUnsupervised, 0, 2, OrderingConstraint::kNone};
  auto s = std::make_shared<const MixtureSurrogate>(
      MixtureSurrogate::unsupervised_model(task, Mixture({c})));
  EnvConfig config;
  config.shaping = false;
  AcquisitionEnv env(s, CostModel::uniform(2), config);
  env.reset(Eigen::Vector2d(3.0, -1.0), Target::none());
  // independent dims, conditional mean 0 for both -> mse = (9 + 1) / 2
  StepOutcome out = env.step(Action::terminate());
  CHECK(out.reward.prediction == doctest::Approx(-5.0).epsilon(1e-12));

  env.reset(Eigen::Vector2d(3.0, -1.0), Target::none());
  env.step(Action::acquire(0));
  env.step(Action::acquire(1));
  out = env.step(Action::terminate());
  CHECK(out.reward.prediction == 0.0);  // empty complement
}

TEST_CASE("class weights rescale the terminal cross entropy") {
  auto s = shared_two_class(2, {0}, 2.0);
  EnvConfig config;
  config.shaping = false;
  config.class_weighted_loss = true;
  AcquisitionEnv env(s, CostModel::uniform(2), config);
  Eigen::VectorXd weights(2);
  weights << 0.5, 1.5;
  env.set_class_weights(weights);
  env.reset(Eigen::Vector2d(0.0, 0.0), Target::label(1));
  StepOutcome out = env.step(Action::terminate());
  CHECK(out.reward.prediction ==
        doctest::Approx(1.5 * std::log(0.5)).epsilon(1e-12));
}

TEST_CASE("inverse frequency weights normalize to mean one") {
  SplitRng rng(23);
  Dataset data = afa::testing::two_class_gaussian(100, 2, {0}, 2.0, rng);
  Eigen::VectorXd w = inverse_frequency_weights(data);
  CHECK(w.mean() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK((w.array() > 0).all());
}

TEST_CASE("config validation") {
  EnvConfig config;
  config.allow_terminate = false;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
  config.hard_budget = 3;
  CHECK_NOTHROW(config.validate());
  config.gamma = 1.5;
  CHECK_THROWS_AS(config.validate(), std::invalid_argument);
}
