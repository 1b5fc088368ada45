#pragma once

#include <functional>
#include <memory>
#include <optional>

#include "afa/greedy.hpp"
#include "afa/mixture.hpp"

namespace afa {

class ScoreStatsModel;  // ood.hpp

struct EnvConfig {
  double alpha = 0.01;
  double gamma = 0.99;
  bool allow_terminate = true;
  std::optional<int> hard_budget;
  bool shaping = true;
  bool ood_reward = false;
  bool goal_reward = false;
  bool class_weighted_loss = false;
  double ood_reward_weight = 1.0;
  bool exact_side_info_moments = true;
  int side_info_samples = 64;

  void validate() const;
};

struct StepOutcome {
  PartialInstance next_state;
  RewardBreakdown reward;
  bool done = false;
};

struct SideInfo {
  Eigen::VectorXd imputed_mean;       // d; observed value at observed indices
  Eigen::VectorXd imputed_variance;   // d; 0 at observed indices
  Eigen::VectorXd expected_info_gain; // d; 0 at observed indices
  Eigen::VectorXd prediction_summary; // |Y| probabilities or (mean, variance)
};

// Intermediate reward for acquiring feature i from `before`, using the
// realized value:
//   supervised   H(y|x_o) - gamma * H(y|x_o, x_i)
//   unsupervised -log p(x_u|x_o)/|u| - gamma * (-log p(x_{u\i}|x_o,x_i)/(|u|-1))
// `full_values` supplies the acquired value and, for the unsupervised form,
// the remaining unobserved entries.
double shaping_reward(const MixtureSurrogate& surrogate,
                      const Eigen::VectorXd& full_values,
                      const PartialInstance& before, int i, double gamma);

// Shaping potential at a state: -H(y|s) (supervised) or
// log p(x_u|x_o)/|u| (unsupervised; 0 once everything is observed).
double shaping_potential(const MixtureSurrogate& surrogate,
                         const Eigen::VectorXd& full_values,
                         const PartialInstance& state);

// Imputation moments, per-candidate Gaussian-entropy info gain, and the
// prediction summary.
SideInfo side_info(const MixtureSurrogate& surrogate, const PartialInstance& x_o,
                   int num_samples, SplitRng& rng, bool exact_moments = true);

// The AFA MDP. One instance per episode; reset() rebinds the hidden instance.
class AcquisitionEnv {
 public:
  AcquisitionEnv(std::shared_ptr<const MixtureSurrogate> surrogate,
                 CostModel cost, EnvConfig config,
                 std::shared_ptr<const ScoreStatsModel> dose = nullptr);

  // Inverse-frequency weights, normalized to mean 1, for weighted
  // cross-entropy terminal rewards.
  void set_class_weights(Eigen::VectorXd weights);

  // Goal potential callback: returns the collapsed sub-goal entropy at a
  // state. The env turns it into per-step rewards H(s) - gamma H(s').
  void set_goal_potential(std::function<double(const PartialInstance&)> fn);
  void clear_goal_potential();

  const PartialInstance& reset(Eigen::VectorXd full_values, Target target);
  StepOutcome step(Action action);

  // Size d+1 (terminate last). Observed indices invalid; chronological rule
  // applied when configured; terminate valid iff allowed or no feature
  // action remains.
  std::vector<bool> valid_action_mask() const;

  const PartialInstance& state() const { return state_; }
  const Target& target() const { return target_; }
  const Eigen::VectorXd& instance() const { return instance_; }
  int steps_taken() const { return steps_; }
  bool done() const { return done_; }
  const EnvConfig& config() const { return config_; }
  const MixtureSurrogate& surrogate() const { return *surrogate_; }
  const CostModel& cost_model() const { return cost_; }

 private:
  double prediction_reward() const;

  std::shared_ptr<const MixtureSurrogate> surrogate_;
  CostModel cost_;
  EnvConfig config_;
  std::shared_ptr<const ScoreStatsModel> dose_;
  Eigen::VectorXd class_weights_;

  std::function<double(const PartialInstance&)> goal_potential_;
  double goal_entropy_cached_ = 0.0;
  bool goal_active_ = false;

  Eigen::VectorXd instance_;
  Target target_;
  PartialInstance state_;
  int steps_ = 0;
  bool done_ = true;
};

// Inverse class frequency, normalized to mean 1.
Eigen::VectorXd inverse_frequency_weights(const Dataset& data);

}  // namespace afa
