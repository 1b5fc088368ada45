#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <memory>

#include "afa/explain.hpp"
#include "synthetic.hpp"

using namespace afa;

TEST_CASE("sub-goal selection takes the top categories with index tie-breaks") {
  Eigen::VectorXd p(3);
  p << 0.5, 0.3, 0.2;
  SubGoal goal = select_subgoal(p, SubGoalKind::kClassPair, 2);
  CHECK(goal.members == std::vector<int>{0, 1});

  Eigen::VectorXd uniform = Eigen::VectorXd::Constant(4, 0.25);
  goal = select_subgoal(uniform, SubGoalKind::kClassPair, 2);
  CHECK(goal.members == std::vector<int>{0, 1});

  Eigen::VectorXd z = Eigen::VectorXd::Constant(5, 0.2);
  goal = select_subgoal(z, SubGoalKind::kClusterSet, 5);
  CHECK(goal.members == std::vector<int>{0, 1, 2, 3, 4});

  CHECK_THROWS_AS(select_subgoal(p, SubGoalKind::kClusterSet, 4),
                  std::invalid_argument);
}

TEST_CASE("sub-goal selection is scale free") {
  SplitRng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    Eigen::VectorXd p(6);
    for (int i = 0; i < 6; ++i) p[i] = rng.uniform() + 0.01;
    p /= p.sum();
    SubGoal a = select_subgoal(p, SubGoalKind::kClusterSet, 3);
    Eigen::VectorXd scaled = 7.3 * p;  // positive constant, no renormalization
    SubGoal b = select_subgoal(scaled, SubGoalKind::kClusterSet, 3);
    CHECK(a.members == b.members);
  }
}

TEST_CASE("cluster posterior is exact when everything is observed") {
  SplitRng rng(5);
  Mixture truth = afa::testing::random_mixture(2, 3, rng);
  ClusteringModel clustering(truth);
  TaskSpec task{TaskKind::kUnsupervised, 0, 2, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::unsupervised_model(task, truth);

  Eigen::VectorXd x = truth.sample(rng);
  PartialInstance full = PartialInstance::from(x, FeatureIndexSet::full(2));
  for (int count : {1, 7}) {
    SplitRng r(11);
    Eigen::VectorXd post = cluster_posterior(s, clustering, full, count, r);
    Eigen::VectorXd direct = clustering.posterior(x);
    CHECK((post - direct).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("cluster posterior recovers the prior with nothing observed") {
  SplitRng rng(7);
  Mixture truth = afa::testing::random_mixture(3, 3, rng, 4.0);
  ClusteringModel clustering(truth);
  TaskSpec task{TaskKind::kUnsupervised, 0, 3, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::unsupervised_model(task, truth);

  SplitRng mc(13);
  Eigen::VectorXd post =
      cluster_posterior(s, clustering, PartialInstance::empty(3), 4000, mc);
  Eigen::VectorXd weights = truth.weights();
  CHECK((post - weights).cwiseAbs().maxCoeff() < 0.03);
  CHECK(post.sum() == doctest::Approx(1.0).epsilon(1e-9));
}

TEST_CASE("cluster posterior matches a quadrature oracle on a 2-D problem") {
  // two clusters separated mostly along the observed dimension
  GaussianComponent a, b;
  a.mean = Eigen::VectorXd::Zero(2);
  a.mean << -1.5, -1.5;
  a.covariance = Eigen::MatrixXd::Identity(2, 2);
  a.log_weight = std::log(0.5);
  b.mean = Eigen::VectorXd::Zero(2);
  b.mean << 1.5, 1.5;
  b.covariance = Eigen::MatrixXd::Identity(2, 2);
  b.log_weight = std::log(0.5);
  Mixture truth({a, b});
  ClusteringModel clustering(truth);
  TaskSpec task{TaskKind::kUnsupervised, 0, 2, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::unsupervised_model(task, truth);

  PartialInstance x_o = PartialInstance::empty(2).with_observed(0, 1.0);

  // quadrature: p(z|x_0) = int p(x_1|x_0) p_Z(z|x_0,x_1) dx_1
  Mixture cond = s.condition(x_o);
  const int intervals = 6000;
  const double lo = -14.0, hi = 14.0;
  double h = (hi - lo) / intervals;
  Eigen::VectorXd oracle = Eigen::VectorXd::Zero(2);
  for (int i = 0; i <= intervals; ++i) {
    Eigen::VectorXd x1(1);
    x1[0] = lo + i * h;
    double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    double density = std::exp(cond.log_density(x1));
    Eigen::VectorXd full(2);
    full << 1.0, x1[0];
    oracle += w * density * clustering.posterior(full);
  }
  oracle *= h / 3.0;
  oracle /= oracle.sum();

  SplitRng mc(17);
  Eigen::VectorXd post = cluster_posterior(s, clustering, x_o, 1000, mc);
  CHECK((post - oracle).cwiseAbs().maxCoeff() < 0.01);
}

TEST_CASE("goal rewards measure collapsed entropy differences") {
  SubGoal goal;
  goal.kind = SubGoalKind::kClassPair;
  goal.members = {0, 1};

  Eigen::VectorXd before(3), after(3);
  before << 0.5, 0.5, 0.0;
  after << 1.0, 0.0, 0.0;
  CHECK(goal_reward(before, before, goal, 1.0) == doctest::Approx(0.0));
  CHECK(goal_reward(before, after, goal, 1.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));

  // permuting the non-selected categories leaves the reward unchanged
  Eigen::VectorXd p(5), q(5), q_perm(5);
  p << 0.35, 0.25, 0.2, 0.15, 0.05;
  q << 0.5, 0.3, 0.1, 0.06, 0.04;
  q_perm << 0.5, 0.3, 0.04, 0.1, 0.06;  // rest permuted
  SubGoal wide;
  wide.members = {0, 1};
  CHECK(goal_reward(p, q, wide, 0.9) ==
        doctest::Approx(goal_reward(p, q_perm, wide, 0.9)).epsilon(1e-12));
  CHECK(goal_reward(q, q, wide, 1.0) == doctest::Approx(0.0).epsilon(1e-12));
}

TEST_CASE("goal embeddings are multi-hot over the members") {
  SubGoal goal;
  goal.members = {1, 3};
  Eigen::VectorXd e = goal_embedding(goal, 5);
  CHECK(e.sum() == 2.0);
  CHECK(e[1] == 1.0);
  CHECK(e[3] == 1.0);
  CHECK_THROWS_AS(goal_embedding(goal, 3), std::invalid_argument);
}

namespace {

struct GoalSetup {
  std::shared_ptr<const MixtureSurrogate> surrogate;
  Dataset train;
  EnvConfig env_config;
};

GoalSetup four_class_setup() {
  GoalSetup setup;
  SplitRng rng(19);
  const int d = 4;
  std::vector<Mixture> per_class;
  Dataset data;
  data.task = TaskSpec{TaskKind::kClassification, 4, d, OrderingConstraint::kNone};
  data.features.resize(400, d);
  for (int c = 0; c < 4; ++c) {
    GaussianComponent comp;
    comp.mean = Eigen::VectorXd::Zero(d);
    comp.mean[c] = 3.0;  // class c marked on feature c
    comp.covariance = Eigen::MatrixXd::Identity(d, d);
    comp.log_weight = 0.0;
    per_class.push_back(Mixture({comp}));
  }
  Eigen::VectorXd priors = Eigen::VectorXd::Constant(4, std::log(0.25));
  setup.surrogate =
      std::make_shared<const MixtureSurrogate>(MixtureSurrogate::classification_model(
          data.task, std::move(per_class), priors));
  for (int r = 0; r < data.n(); ++r) {
    int y = rng.uniform_int(0, 3);
    for (int j = 0; j < d; ++j)
      data.features(r, j) = rng.gaussian() + (j == y ? 3.0 : 0.0);
    data.targets.push_back(Target::label(y));
  }
  setup.train = data;
  setup.env_config.allow_terminate = false;
  setup.env_config.hard_budget = 4;
  setup.env_config.goal_reward = true;
  setup.env_config.shaping = true;
  return setup;
}

}  // namespace

TEST_CASE("goal rewards telescope within env segments") {
  GoalSetup setup = four_class_setup();
  AcquisitionEnv env(setup.surrogate, CostModel::uniform(4), setup.env_config);
  env.reset(setup.train.features.row(0).transpose(), setup.train.targets[0]);

  std::vector<int> members{0, 1};
  auto potential = [&](const PartialInstance& s) {
    Eigen::VectorXd p = setup.surrogate->class_posterior(s).array().exp();
    return collapsed_entropy(p, members);
  };
  double h0 = potential(env.state());
  env.set_goal_potential(potential);
  double gamma = setup.env_config.gamma;
  double discounted = 0.0, discount = 1.0;
  for (int i = 0; i < 4; ++i) {
    StepOutcome out = env.step(Action::acquire(i));
    discounted += discount * out.reward.goal;
    discount *= gamma;
  }
  // r_e = H_t - gamma H_{t+1} telescopes to h0 - gamma^T h_T
  double h_end = potential(env.state());
  CHECK(discounted == doctest::Approx(h0 - discount * h_end).epsilon(1e-9));
}

TEST_CASE("goal-conditioned episodes run segments and render explanations") {
  GoalSetup setup = four_class_setup();
  ActionGrouping grouping = group_features_contiguous(4, 2);
  SplitRng init(23);
  PolicyNetwork net(setup.surrogate->task(), grouping, 4, init);

  GoalEpisodeConfig config;
  config.kind = SubGoalKind::kClassPair;
  config.num_members = 2;
  config.period = 2;

  AcquisitionEnv env(setup.surrogate, CostModel::uniform(4), setup.env_config);
  GoalEpisode episode = run_goal_episode(
      net, env, nullptr, config, setup.train.features.row(1).transpose(),
      setup.train.targets[1], SplitRng(29));
  CHECK(episode.segments.size() == 2);  // 4 acquisitions, 2 per goal
  for (const auto& seg : episode.segments) {
    CHECK(seg.subgoal.members.size() == 2);
    CHECK(seg.collapsed_before.size() == 3);
    CHECK(seg.collapsed_before.sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
  episode.trace.validate(setup.surrogate->task());

  std::string text = render_goal_episode(episode, {});
  CHECK(text.find("disambiguate") != std::string::npos);
  std::string jsonl = goal_episode_jsonl(episode);
  CHECK(jsonl.find("posterior_before") != std::string::npos);

  // period covering the whole budget: a single goal for the episode
  config.period = 10;
  GoalEpisode single = run_goal_episode(
      net, env, nullptr, config, setup.train.features.row(2).transpose(),
      setup.train.targets[2], SplitRng(31));
  CHECK(single.segments.size() == 1);
}

TEST_CASE("cluster goals keep the posterior normalized along the episode") {
  SplitRng rng(37);
  Mixture truth = afa::testing::random_mixture(4, 5, rng, 3.0);
  ClusteringModel clustering(truth);
  TaskSpec task{TaskKind::kUnsupervised, 0, 4, OrderingConstraint::kNone};
  auto surrogate = std::make_shared<const MixtureSurrogate>(
      MixtureSurrogate::unsupervised_model(task, truth));

  EnvConfig env_config;
  env_config.allow_terminate = false;
  env_config.hard_budget = 3;
  env_config.goal_reward = true;
  AcquisitionEnv env(surrogate, CostModel::uniform(4), env_config);

  ActionGrouping grouping = group_features_contiguous(4, 2);
  SplitRng init(41);
  PolicyNetwork net(task, grouping, 5, init);

  GoalEpisodeConfig config;
  config.kind = SubGoalKind::kClusterSet;
  config.num_members = 3;
  config.period = 1;
  config.num_imputations = 25;

  Eigen::VectorXd instance = truth.sample(rng);
  GoalEpisode episode = run_goal_episode(net, env, &clustering, config,
                                         instance, Target::none(), SplitRng(43));
  CHECK(episode.segments.size() == 3);
  for (const auto& seg : episode.segments) {
    CHECK(seg.collapsed_before.size() == 4);
    CHECK(seg.collapsed_before.sum() == doctest::Approx(1.0).epsilon(1e-9));
    CHECK(seg.collapsed_after.sum() == doctest::Approx(1.0).epsilon(1e-9));
  }
}
