#pragma once

#include <Eigen/Dense>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "afa/dataset.hpp"
#include "afa/rng.hpp"
#include "afa/types.hpp"

namespace afa {

double log_sum_exp(const Eigen::VectorXd& v);
// Entropy in nats of a categorical given log-probabilities.
double categorical_entropy(const Eigen::VectorXd& log_probs);

struct GaussianComponent {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // symmetric positive-definite
  double log_weight = 0.0;
};

// Finite Gaussian mixture over a fixed coordinate set. Log-weights are
// normalized (log-sum-exp 0) at construction.
class Mixture {
 public:
  static constexpr double kRegFloor = 1e-4;

  Mixture() = default;
  explicit Mixture(std::vector<GaussianComponent> components);

  int dimension() const;
  int num_components() const { return static_cast<int>(components_.size()); }
  const std::vector<GaussianComponent>& components() const { return components_; }

  double log_density(const Eigen::VectorXd& x) const;
  // log w_k + log N(x; mu_k, Sigma_k)
  double component_log_density(int k, const Eigen::VectorXd& x) const;

  // Restriction to a subset of coordinates (ascending positions).
  Mixture marginal(const std::vector<int>& dims) const;

  // Gaussian conditioning per component plus reweighting by each component's
  // marginal likelihood of the observed values. Result is over the remaining
  // coordinates in ascending order.
  Mixture conditional(const std::vector<int>& obs_dims,
                      const Eigen::VectorXd& obs_values,
                      double reg = kRegFloor) const;

  Eigen::VectorXd mean() const;
  Eigen::MatrixXd covariance() const;
  double coordinate_variance(int dim) const;

  Eigen::VectorXd sample(SplitRng& rng) const;
  Eigen::MatrixXd sample(int count, SplitRng& rng) const;
  // Component index drawn by weight, for frequency checks.
  int sample_component(SplitRng& rng) const;

  Eigen::VectorXd weights() const;  // exp(log_weight)

  // Convolution with N(0, sigma^2 I).
  Mixture smoothed(double sigma) const;
  // Gradient of log density at x.
  Eigen::VectorXd score(const Eigen::VectorXd& x) const;

 private:
  std::vector<GaussianComponent> components_;
};

struct FitConfig {
  int max_iterations = 200;
  double tolerance = 1e-7;   // relative mean log-likelihood improvement
  double reg_floor = 1e-4;   // added to covariance diagonals
  int kmeans_iterations = 25;
};

struct FitReport {
  std::vector<double> log_likelihood;  // mean per EM iteration
  int iterations = 0;                  // M-steps executed
  std::vector<std::string> warnings;
};

// EM to a local optimum with k-means++ seeded means. Deterministic given rng.
Mixture fit_mixture_em(const Eigen::MatrixXd& rows, int num_components,
                       SplitRng rng, const FitConfig& config = {},
                       FitReport* report = nullptr);

// Exact arbitrary-conditional surrogate: class-conditional Gaussian mixtures
// over features (classification), one joint mixture with the target as an
// extra trailing dimension (regression), or a plain feature mixture
// (unsupervised).
class MixtureSurrogate {
 public:
  MixtureSurrogate() = default;  // empty shell; assign from a factory

  static MixtureSurrogate classification_model(
      TaskSpec task, std::vector<Mixture> per_class, Eigen::VectorXd log_priors,
      StandardizationParams standardization = {},
      std::vector<std::string> feature_names = {});
  static MixtureSurrogate regression_model(
      TaskSpec task, Mixture joint_with_target,
      StandardizationParams standardization = {},
      std::vector<std::string> feature_names = {});
  static MixtureSurrogate unsupervised_model(
      TaskSpec task, Mixture joint,
      StandardizationParams standardization = {},
      std::vector<std::string> feature_names = {});

  static MixtureSurrogate fit_em(const Dataset& data, int num_components,
                                 SplitRng rng, const FitConfig& config = {},
                                 FitReport* report = nullptr);

  const TaskSpec& task() const { return task_; }
  int dimension() const { return task_.d; }
  const StandardizationParams& standardization() const { return standardization_; }
  const std::vector<std::string>& feature_names() const { return feature_names_; }
  const Eigen::VectorXd& class_log_priors() const;
  const Mixture& class_mixture(int c) const;
  // Mixture over the d feature coordinates with the class/target
  // marginalized out.
  const Mixture& feature_mixture() const { return feature_mixture_; }

  // Exact mixture marginal at the observed entries; empty set gives 0 (log of
  // an empty product). Optional class restricts to one class-conditional.
  double log_marginal(const PartialInstance& x_o,
                      std::optional<int> cls = std::nullopt) const;

  // p(x_u | x_o) over unobserved features, ascending index order.
  Mixture condition(const PartialInstance& x_o,
                    std::optional<int> cls = std::nullopt) const;

  // Regression only: conditional over unobserved features plus the target as
  // the final coordinate.
  Mixture condition_with_target(const PartialInstance& x_o) const;

  // Classification: log P(y | x_o).
  Eigen::VectorXd class_posterior(const PartialInstance& x_o) const;
  // Regression: exact conditional mean and variance of the target.
  std::pair<double, double> regression_posterior(const PartialInstance& x_o) const;

  // count x |u| draws from p(x_u | x_o).
  Eigen::MatrixXd sample_conditional(const PartialInstance& x_o, int count,
                                     SplitRng& rng) const;

  // H(y | x_o) in nats (supervised tasks).
  double conditional_entropy_y(const PartialInstance& x_o) const;

  // Mean over rows and sampled masks of log p(x_u|x_o), plus log P(y|x_o)
  // with unit weight when supervised.
  double heldout_masked_objective(const Dataset& heldout, SplitRng& rng) const;

  // Copy with the stored standardization replaced (models are immutable).
  MixtureSurrogate with_standardization(StandardizationParams params) const;

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static MixtureSurrogate load(std::istream& in);
  static MixtureSurrogate load(const std::string& path);

 private:
  void rebuild_feature_mixture();

  TaskSpec task_;
  StandardizationParams standardization_;
  std::vector<std::string> feature_names_;
  std::vector<Mixture> class_mixtures_;  // classification
  Eigen::VectorXd log_priors_;           // classification
  Mixture joint_;                        // regression (d+1) / unsupervised (d)
  Mixture feature_mixture_;              // cached, features only
};

}  // namespace afa
