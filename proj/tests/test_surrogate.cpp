#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "afa/mixture.hpp"
#include "synthetic.hpp"

using namespace afa;

namespace {

MixtureSurrogate standard_normal_1d() {
  GaussianComponent c;
  c.mean = Eigen::VectorXd::Zero(1);
  c.covariance = Eigen::MatrixXd::Identity(1, 1);
  c.log_weight = 0.0;
  TaskSpec task{TaskKind::kUnsupervised, 0, 1, OrderingConstraint::kNone};
  return MixtureSurrogate::unsupervised_model(task, Mixture({c}));
}

Mixture bivariate_correlated(double rho) {
  GaussianComponent c;
  c.mean = Eigen::VectorXd::Zero(2);
  c.covariance.resize(2, 2);
  c.covariance << 1.0, rho, rho, 1.0;
  c.log_weight = 0.0;
  return Mixture({c});
}

}  // namespace

TEST_CASE("log marginal of a standard normal at zero") {
  MixtureSurrogate s = standard_normal_1d();
  PartialInstance x = PartialInstance::empty(1).with_observed(0, 0.0);
  CHECK(s.log_marginal(x) ==
        doctest::Approx(-0.5 * std::log(2.0 * 3.14159265358979323846))
            .epsilon(1e-10));
  CHECK(s.log_marginal(PartialInstance::empty(1)) == 0.0);
}

TEST_CASE("1-D mixture marginal integrates to one by quadrature") {
  SplitRng rng(5);
  GaussianComponent a, b;
  a.mean = Eigen::VectorXd::Constant(1, -2.0);
  a.covariance = Eigen::MatrixXd::Constant(1, 1, 0.5);
  a.log_weight = std::log(0.3);
  b.mean = Eigen::VectorXd::Constant(1, 3.0);
  b.covariance = Eigen::MatrixXd::Constant(1, 1, 2.0);
  b.log_weight = std::log(0.7);
  Mixture m({a, b});

  // Simpson over [-20, 20]
  const int intervals = 4000;
  const double lo = -20.0, hi = 20.0;
  double h = (hi - lo) / intervals;
  double acc = 0.0;
  for (int i = 0; i <= intervals; ++i) {
    Eigen::VectorXd x(1);
    x[0] = lo + i * h;
    double f = std::exp(m.log_density(x));
    double w = (i == 0 || i == intervals) ? 1.0 : (i % 2 ? 4.0 : 2.0);
    acc += w * f;
  }
  acc *= h / 3.0;
  CHECK(acc == doctest::Approx(1.0).epsilon(1e-6));
}

TEST_CASE("textbook bivariate conditioning") {
  Mixture m = bivariate_correlated(0.8);
  Eigen::VectorXd obs(1);
  obs << 1.0;
  Mixture cond = m.conditional({0}, obs);
  CHECK(cond.components()[0].mean[0] == doctest::Approx(0.8).epsilon(1e-12));
  CHECK(cond.components()[0].covariance(0, 0) ==
        doctest::Approx(0.36).epsilon(1e-12));
}

TEST_CASE("diagonal covariance: conditional equals marginal") {
  GaussianComponent c;
  c.mean = Eigen::VectorXd::Zero(3);
  c.mean << 1.0, 2.0, 3.0;
  c.covariance = Eigen::Vector3d(0.5, 1.5, 2.5).asDiagonal();
  c.log_weight = 0.0;
  Mixture m({c});
  Eigen::VectorXd obs(1);
  obs << 4.0;
  Mixture cond = m.conditional({0}, obs);
  CHECK(cond.components()[0].mean[0] == doctest::Approx(2.0));
  CHECK(cond.components()[0].mean[1] == doctest::Approx(3.0));
  CHECK(cond.components()[0].covariance(0, 0) == doctest::Approx(1.5));
}

TEST_CASE("chain rule: conditional density plus marginal equals joint") {
  SplitRng rng(23);
  Mixture joint = afa::testing::random_mixture(5, 3, rng);
  TaskSpec task{TaskKind::kUnsupervised, 0, 5, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::unsupervised_model(task, joint);
  for (int trial = 0; trial < 100; ++trial) {
    Eigen::VectorXd x = joint.sample(rng);
    FeatureIndexSet o = sample_mask(5, rng);
    if (o.empty() || o.size() == 5) continue;
    PartialInstance x_o = PartialInstance::from(x, o);
    PartialInstance x_all = PartialInstance::from(x, FeatureIndexSet::full(5));
    Mixture cond = s.condition(x_o);
    Eigen::VectorXd xu(5 - o.size());
    int k = 0;
    for (int i : o.complement(5)) xu[k++] = x[i];
    double lhs = cond.log_density(xu) + s.log_marginal(x_o);
    double rhs = s.log_marginal(x_all);
    CHECK(lhs == doctest::Approx(rhs).epsilon(1e-8));
  }
}

TEST_CASE("conditioning in two steps equals conditioning once") {
  SplitRng rng(29);
  Mixture joint = afa::testing::random_mixture(4, 3, rng);
  Eigen::VectorXd x = joint.sample(rng);
  Eigen::VectorXd xi(1), xj(1), both(2);
  xi << x[1];
  xj << x[3];
  both << x[1], x[3];

  Mixture two_step = joint.conditional({1}, xi).conditional({2}, xj);
  // after removing coord 1, original coord 3 sits at position 2
  Mixture one_step = joint.conditional({1, 3}, both);
  REQUIRE(two_step.num_components() == one_step.num_components());
  for (int c = 0; c < one_step.num_components(); ++c) {
    const auto& a = two_step.components()[c];
    const auto& b = one_step.components()[c];
    CHECK(a.log_weight == doctest::Approx(b.log_weight).epsilon(1e-8));
    CHECK((a.mean - b.mean).cwiseAbs().maxCoeff() < 1e-8);
    CHECK((a.covariance - b.covariance).cwiseAbs().maxCoeff() < 1e-8);
  }
}

TEST_CASE("posterior equals prior with no observations or equal classes") {
  MixtureSurrogate s =
      afa::testing::two_class_gaussian_surrogate(3, {0}, 2.0);
  Eigen::VectorXd post =
      s.class_posterior(PartialInstance::empty(3)).array().exp();
  CHECK(post[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(post[1] == doctest::Approx(0.5).epsilon(1e-12));

  // identical class-conditional mixtures: posterior equals prior everywhere
  MixtureSurrogate same =
      afa::testing::two_class_gaussian_surrogate(3, {}, 0.0);
  SplitRng rng(31);
  for (int t = 0; t < 20; ++t) {
    PartialInstance x = PartialInstance::empty(3)
                            .with_observed(0, rng.gaussian())
                            .with_observed(2, rng.gaussian());
    Eigen::VectorXd p = same.class_posterior(x).array().exp();
    CHECK(p[0] == doctest::Approx(0.5).epsilon(1e-10));
  }
}

TEST_CASE("class posterior matches a brute-force Bayes oracle on a grid") {
  MixtureSurrogate s =
      afa::testing::two_class_gaussian_surrogate(2, {0, 1}, 3.0);
  for (double x0 = -3.0; x0 <= 3.0; x0 += 0.5) {
    PartialInstance x = PartialInstance::empty(2).with_observed(0, x0);
    // direct density evaluation per class
    auto normal = [](double v, double mean) {
      return std::exp(-0.5 * (v - mean) * (v - mean)) /
             std::sqrt(2.0 * 3.14159265358979323846);
    };
    double p0 = 0.5 * normal(x0, -1.5), p1 = 0.5 * normal(x0, 1.5);
    Eigen::VectorXd post = s.class_posterior(x).array().exp();
    CHECK(post[1] == doctest::Approx(p1 / (p0 + p1)).epsilon(1e-6));
  }

  // posteriors sum to one and shift invariance holds
  Eigen::VectorXd lp =
      s.class_posterior(PartialInstance::empty(2).with_observed(1, 0.7));
  CHECK(lp.array().exp().sum() == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("conditional sampling converges to the conditional mean") {
  Mixture m = bivariate_correlated(0.8);
  TaskSpec task{TaskKind::kUnsupervised, 0, 2, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::unsupervised_model(task, m);
  PartialInstance x = PartialInstance::empty(2).with_observed(0, 1.0);
  SplitRng rng(37);
  Eigen::MatrixXd draws = s.sample_conditional(x, 100000, rng);
  CHECK(draws.col(0).mean() == doctest::Approx(0.8).epsilon(0.015));
}

TEST_CASE("degenerate components sample at the conditional mean") {
  GaussianComponent c;
  c.mean = Eigen::VectorXd::Zero(2);
  c.mean << 0.3, -0.9;
  c.covariance = 1e-8 * Eigen::MatrixXd::Identity(2, 2);
  c.log_weight = 0.0;
  TaskSpec task{TaskKind::kUnsupervised, 0, 2, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::unsupervised_model(task, Mixture({c}));
  SplitRng rng(41);
  PartialInstance x = PartialInstance::empty(2).with_observed(0, 0.3);
  Eigen::MatrixXd draws = s.sample_conditional(x, 200, rng);
  for (int r = 0; r < draws.rows(); ++r)
    CHECK(std::abs(draws(r, 0) - (-0.9)) < 1e-3);
}

TEST_CASE("component choice frequencies match posterior weights") {
  GaussianComponent a, b;
  a.mean = Eigen::VectorXd::Constant(1, -1.0);
  a.covariance = Eigen::MatrixXd::Identity(1, 1);
  a.log_weight = std::log(0.25);
  b.mean = Eigen::VectorXd::Constant(1, 2.0);
  b.covariance = Eigen::MatrixXd::Identity(1, 1);
  b.log_weight = std::log(0.75);
  Mixture m({a, b});
  SplitRng rng(43);
  int counts[2] = {0, 0};
  const int draws = 100000;
  for (int t = 0; t < draws; ++t) counts[m.sample_component(rng)]++;
  CHECK(std::abs(counts[0] / double(draws) - 0.25) < 0.01);
  CHECK(std::abs(counts[1] / double(draws) - 0.75) < 0.01);
}

TEST_CASE("entropy formulas") {
  Eigen::VectorXd uniform4 = Eigen::VectorXd::Constant(4, std::log(0.25));
  CHECK(categorical_entropy(uniform4) ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));

  Eigen::VectorXd onehot(3);
  onehot << 0.0, -745.0, -745.0;  // ~exactly 1 on the first class
  CHECK(categorical_entropy(onehot) == doctest::Approx(0.0).epsilon(1e-10));

  // unit variance Gaussian entropy through the regression path
  GaussianComponent c;
  c.mean = Eigen::VectorXd::Zero(2);
  c.covariance = Eigen::MatrixXd::Identity(2, 2);
  c.log_weight = 0.0;
  TaskSpec task{TaskKind::kRegression, 0, 1, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::regression_model(task, Mixture({c}));
  CHECK(s.conditional_entropy_y(PartialInstance::empty(1)) ==
        doctest::Approx(1.4189385332).epsilon(1e-9));
}

TEST_CASE("single gaussian EM recovers sample moments in two iterations") {
  SplitRng rng(47);
  Eigen::MatrixXd rows(400, 2);
  for (int r = 0; r < 400; ++r) {
    rows(r, 0) = rng.gaussian();
    rows(r, 1) = 0.5 * rng.gaussian() + 1.0;
  }
  FitReport report;
  Mixture m = fit_mixture_em(rows, 1, SplitRng(1), FitConfig{}, &report);
  CHECK(report.iterations <= 2);
  Eigen::VectorXd sample_mean = rows.colwise().mean();
  double se0 = 1.0 / std::sqrt(400.0);
  CHECK(std::abs(m.components()[0].mean[0] - sample_mean[0]) < 3 * se0);
  CHECK(std::abs(m.components()[0].mean[1] - sample_mean[1]) < 3 * se0);
}

TEST_CASE("EM separates two far clusters with balanced weights") {
  SplitRng rng(53);
  Eigen::MatrixXd rows(600, 2);
  for (int r = 0; r < 600; ++r) {
    double center = (r % 2 == 0) ? -10.0 : 10.0;
    rows(r, 0) = center + rng.gaussian();
    rows(r, 1) = rng.gaussian();
  }
  FitReport report;
  Mixture m = fit_mixture_em(rows, 2, SplitRng(2), FitConfig{}, &report);
  Eigen::VectorXd w = m.weights();
  CHECK(std::abs(w[0] - 0.5) < 0.05);
  // log likelihood is monotone non-decreasing up to numerical noise
  for (std::size_t i = 1; i < report.log_likelihood.size(); ++i) {
    CHECK(report.log_likelihood[i] >=
          report.log_likelihood[i - 1] -
              1e-8 * (std::abs(report.log_likelihood[i - 1]) + 1.0));
  }
}

TEST_CASE("classification fit shrinks components for small classes") {
  SplitRng rng(59);
  Dataset data;
  data.task = TaskSpec{TaskKind::kClassification, 2, 2, OrderingConstraint::kNone};
  data.features.resize(23, 2);
  for (int r = 0; r < 23; ++r) {
    bool minority = r < 3;
    data.features(r, 0) = rng.gaussian() + (minority ? 3.0 : 0.0);
    data.features(r, 1) = rng.gaussian();
    data.targets.push_back(Target::label(minority ? 1 : 0));
  }
  FitReport report;
  MixtureSurrogate s =
      MixtureSurrogate::fit_em(data, 5, SplitRng(3), FitConfig{}, &report);
  CHECK(s.class_mixture(1).num_components() == 3);
  CHECK(!report.warnings.empty());
}

TEST_CASE("held-out masked objective prefers the true model") {
  SplitRng rng(61);
  Mixture truth = afa::testing::random_mixture(4, 2, rng);
  Dataset heldout = afa::testing::sample_unsupervised(truth, 400, rng);
  TaskSpec task{TaskKind::kUnsupervised, 0, 4, OrderingConstraint::kNone};
  MixtureSurrogate good = MixtureSurrogate::unsupervised_model(task, truth);

  // perturbed parameters score lower on in-distribution data
  std::vector<GaussianComponent> comps = truth.components();
  for (auto& c : comps) c.mean.array() += 1.5;
  MixtureSurrogate bad =
      MixtureSurrogate::unsupervised_model(task, Mixture(comps));

  SplitRng mask_rng(7);
  SplitRng mask_rng2(7);  // identical masks for both models
  double score_good = good.heldout_masked_objective(heldout, mask_rng);
  double score_bad = bad.heldout_masked_objective(heldout, mask_rng2);
  CHECK(score_good > score_bad);
}

TEST_CASE("masked objective with a single gaussian tracks conditional entropies") {
  // on its own generating distribution the expected value of log p(x_u|x_o)
  // is minus the conditional differential entropy; with one component the
  // entropies are closed form
  SplitRng rng(67);
  GaussianComponent c;
  c.mean = Eigen::VectorXd::Zero(2);
  c.covariance.resize(2, 2);
  c.covariance << 1.0, 0.6, 0.6, 1.0;
  c.log_weight = 0.0;
  Mixture truth({c});
  TaskSpec task{TaskKind::kUnsupervised, 0, 2, OrderingConstraint::kNone};
  MixtureSurrogate s = MixtureSurrogate::unsupervised_model(task, truth);
  Dataset heldout = afa::testing::sample_unsupervised(truth, 20000, rng);

  SplitRng mask_rng(9);
  double objective = s.heldout_masked_objective(heldout, mask_rng);

  // masks over d=2: cardinality 0 (joint entropy) or 1 (one conditional)
  const double log2pie = std::log(2.0 * 3.14159265358979323846) + 1.0;
  double h_joint = 0.5 * (2.0 * log2pie + std::log(1.0 - 0.36));
  double h_cond = 0.5 * (log2pie + std::log(1.0 - 0.36));
  double expected = -0.5 * h_joint - 0.5 * h_cond;
  CHECK(objective == doctest::Approx(expected).epsilon(0.02));
}

TEST_CASE("model persistence round trips bit-faithfully") {
  SplitRng rng(71);
  Dataset data = afa::testing::two_class_gaussian(60, 3, {0}, 2.0, rng);
  MixtureSurrogate s = MixtureSurrogate::fit_em(data, 2, SplitRng(4));

  std::ostringstream first;
  s.save(first);
  std::istringstream in(first.str());
  MixtureSurrogate loaded = MixtureSurrogate::load(in);
  std::ostringstream second;
  loaded.save(second);
  CHECK(first.str() == second.str());

  // loaded model computes identical values
  PartialInstance x = PartialInstance::empty(3).with_observed(1, 0.4);
  CHECK(s.log_marginal(x) == loaded.log_marginal(x));
}
