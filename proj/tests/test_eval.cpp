#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "afa/eval.hpp"
#include "synthetic.hpp"

using namespace afa;

namespace {

struct CurveSetup {
  std::shared_ptr<const MixtureSurrogate> surrogate;
  Dataset test;
  EnvConfig config;
  CostModel cost;
};

CurveSetup separable_setup(int n = 80) {
  CurveSetup setup;
  SplitRng rng(3);
  setup.surrogate = std::make_shared<const MixtureSurrogate>(
      afa::testing::two_class_gaussian_surrogate(4, {0, 1}, 4.0));
  setup.test = afa::testing::two_class_gaussian(n, 4, {0, 1}, 4.0, rng);
  setup.config.shaping = false;
  setup.cost = CostModel::uniform(4);
  return setup;
}

}  // namespace

TEST_CASE("accuracy curve: prior argmax at budget zero, Bayes at full budget") {
  CurveSetup setup = separable_setup();
  GreedyCmiPolicy policy(64);
  std::vector<int> budgets{0, 1, 2, 3, 4};
  auto curve = accuracy_curve(setup.surrogate, policy, setup.test, budgets,
                              setup.config, setup.cost, SplitRng(5));
  REQUIRE(curve.size() == budgets.size());

  // budget 0: no information, prior is uniform, argmax picks class 0
  int class0 = 0;
  for (const Target& t : setup.test.targets)
    if (t.label() == 0) ++class0;
  CHECK(curve[0].metric ==
        doctest::Approx(class0 / double(setup.test.n())).epsilon(1e-12));

  // budget d: the full-feature Bayes predictor under the surrogate
  int bayes_correct = 0;
  for (int r = 0; r < setup.test.n(); ++r) {
    PartialInstance x = PartialInstance::from(
        setup.test.features.row(r).transpose(), FeatureIndexSet::full(4));
    Eigen::VectorXd post = setup.surrogate->class_posterior(x).array().exp();
    int arg = 0;
    post.maxCoeff(&arg);
    if (arg == setup.test.targets[r].label()) ++bayes_correct;
  }
  CHECK(curve.back().metric ==
        doctest::Approx(bayes_correct / double(setup.test.n())).epsilon(1e-12));

  // soft monotonicity on separable data
  for (std::size_t b = 1; b < curve.size(); ++b) {
    CHECK(curve[b].metric >=
          curve[b - 1].metric - 2.0 * curve[b - 1].stderr_boot - 1e-12);
  }
}

TEST_CASE("curves are reproducible and worker-count invariant") {
  CurveSetup setup = separable_setup(40);
  RandomPolicy policy;
  std::vector<int> budgets{1, 2};
  auto a = accuracy_curve(setup.surrogate, policy, setup.test, budgets,
                          setup.config, setup.cost, SplitRng(7));
  auto b = accuracy_curve(setup.surrogate, policy, setup.test, budgets,
                          setup.config, setup.cost, SplitRng(7));
  CurveConfig parallel;
  parallel.workers = 3;
  auto c = accuracy_curve(setup.surrogate, policy, setup.test, budgets,
                          setup.config, setup.cost, SplitRng(7), parallel);
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i].metric == b[i].metric);
    CHECK(a[i].stderr_boot == b[i].stderr_boot);
    CHECK(a[i].metric == c[i].metric);
  }
}

TEST_CASE("budgets above d are capped") {
  CurveSetup setup = separable_setup(20);
  GreedyCmiPolicy policy(32);
  auto curve = accuracy_curve(setup.surrogate, policy, setup.test, {9},
                              setup.config, setup.cost, SplitRng(11));
  CHECK(curve[0].budget == 9);
  CHECK(curve[0].metric > 0.8);  // ran with the full feature set
}

TEST_CASE("rmse curve hits the noise floor once the signal is acquired") {
  // y is feature 0 plus small noise
  Eigen::MatrixXd cov(3, 3);
  cov << 1.0, 0.0, 0.995, 0.0, 1.0, 0.0, 0.995, 0.0, 1.0;
  GaussianComponent c{Eigen::VectorXd::Zero(3), cov, 0.0};
  TaskSpec task{TaskKind::kRegression, 0, 2, OrderingConstraint::kNone};
  auto surrogate = std::make_shared<const MixtureSurrogate>(
      MixtureSurrogate::regression_model(task, Mixture({c})));

  SplitRng rng(13);
  Dataset test;
  test.task = task;
  test.features.resize(60, 2);
  test.targets.reserve(60);
  Mixture joint = Mixture({c});
  for (int r = 0; r < 60; ++r) {
    Eigen::VectorXd draw = joint.sample(rng);
    test.features.row(r) << draw[0], draw[1];
    test.targets.push_back(Target::scalar(draw[2]));
  }

  EnvConfig config;
  config.shaping = false;
  GreedyCmiPolicy policy(64);
  auto curve = rmse_curve(surrogate, policy, test, {0, 1, 2}, config,
                          CostModel::uniform(2), SplitRng(17));
  CHECK(curve[0].metric > 0.8);   // prior predicts the mean
  CHECK(curve[1].metric < 0.25);  // acquired the informative feature
  for (const auto& p : curve) CHECK(p.metric >= 0.0);
}

TEST_CASE("unsupervised rmse is zero at full budget") {
  SplitRng rng(19);
  Mixture joint = afa::testing::random_mixture(3, 2, rng);
  TaskSpec task{TaskKind::kUnsupervised, 0, 3, OrderingConstraint::kNone};
  auto surrogate = std::make_shared<const MixtureSurrogate>(
      MixtureSurrogate::unsupervised_model(task, joint));
  Dataset test = afa::testing::sample_unsupervised(joint, 30, rng);

  EnvConfig config;
  config.shaping = false;
  RandomPolicy policy;
  auto curve = rmse_curve(surrogate, policy, test, {0, 3}, config,
                          CostModel::uniform(3), SplitRng(23));
  CHECK(curve[0].metric > 0.0);
  CHECK(curve[1].metric == 0.0);
}

TEST_CASE("f1 score matches a direct confusion-matrix recount") {
  CHECK(f1_score({1, 0, 1}, {1, 0, 1}, 1) == 1.0);
  CHECK(f1_score({0, 0, 0}, {1, 0, 1}, 1) == 0.0);

  SplitRng rng(29);
  for (int trial = 0; trial < 30; ++trial) {
    std::vector<int> pred(50), label(50);
    for (int i = 0; i < 50; ++i) {
      pred[i] = rng.uniform_int(0, 1);
      label[i] = rng.uniform_int(0, 1);
    }
    int tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < 50; ++i) {
      if (pred[i] == 1 && label[i] == 1) ++tp;
      if (pred[i] == 1 && label[i] == 0) ++fp;
      if (pred[i] == 0 && label[i] == 1) ++fn;
    }
    double precision = tp + fp ? tp / double(tp + fp) : 0.0;
    double recall = tp + fn ? tp / double(tp + fn) : 0.0;
    double expected = (precision + recall > 0)
                          ? 2 * precision * recall / (precision + recall)
                          : 0.0;
    CHECK(f1_score(pred, label, 1) == doctest::Approx(expected).epsilon(1e-12));
  }
}

TEST_CASE("static policy follows its order and the random policy terminates") {
  CurveSetup setup = separable_setup(10);
  AcquisitionEnv env(setup.surrogate, setup.cost, setup.config);

  StaticOrderPolicy static_policy({2, 0, 3, 1});
  EnvConfig budget2 = setup.config;
  budget2.hard_budget = 2;
  budget2.allow_terminate = false;
  AcquisitionEnv env2(setup.surrogate, setup.cost, budget2);
  AcquisitionTrace trace =
      run_episode(env2, setup.test.features.row(0).transpose(),
                  setup.test.targets[0], static_policy, SplitRng(31));
  CHECK(trace.acquired_indices() == std::vector<int>{2, 0});
  trace.validate(setup.surrogate->task());
}
