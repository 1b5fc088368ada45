#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <utility>
#include <vector>

#include "afa/env.hpp"
#include "afa/mlp.hpp"

namespace afa {

enum class GroupingScheme { kMutualInformation, kRandom, kContiguous, kSpectral };

// Fixed partition of the feature indices into K ordered groups of at most
// N = ceil(d/K) members, sorted by descending marginal informativeness.
struct ActionGrouping {
  std::vector<std::vector<int>> groups;
  Eigen::VectorXd mi_scores;  // per feature; zeros for schemes without MI

  int num_groups() const { return static_cast<int>(groups.size()); }
  int max_group_size() const;  // N
  int dimension() const;

  // g_k^(n); throws std::out_of_range outside the partition.
  int decode(int k, int n) const;
  std::pair<int, int> encode(int feature) const;

  void validate() const;
};

// Marginal mutual information I(x_i; y) estimated over validation pairs, then
// sorted descending and split into K contiguous groups.
ActionGrouping group_features(const MixtureSurrogate& surrogate,
                              const Dataset& validation, int num_groups,
                              int num_samples, SplitRng rng);
// Ablation alternatives behind the same interface.
ActionGrouping group_features_random(int d, int num_groups, SplitRng rng);
ActionGrouping group_features_contiguous(int d, int num_groups);
ActionGrouping group_features_spectral(const Dataset& validation,
                                       int num_groups);

struct PolicyOutput {
  Eigen::VectorXd group_log_probs;   // K+1, terminate slot last; -inf invalid
  Eigen::MatrixXd member_log_probs;  // K x N; -inf invalid
  double value = 0.0;
};

// Masked renormalization of raw logits: invalid members get probability
// exactly zero, fully-invalid groups drop out at the group level. Throws
// std::logic_error when nothing is valid.
PolicyOutput masked_policy(const Eigen::VectorXd& group_logits,
                           const Eigen::VectorXd& member_logits, double value,
                           const ActionGrouping& grouping,
                           const std::vector<bool>& action_mask);

double action_log_prob(const PolicyOutput& po, const ActionGrouping& grouping,
                       Action action);
// Entropy of the joint (group, member) distribution including terminate.
double policy_entropy(const PolicyOutput& po);
Action sample_action(const PolicyOutput& po, const ActionGrouping& grouping,
                     SplitRng& rng);
Action argmax_action(const PolicyOutput& po, const ActionGrouping& grouping);

// Hierarchical policy: shared two-layer trunk with group/member/value heads.
// Input layout: [values(d), mask(d), imputed means(d), imputed variances(d),
// info gain(d), prediction summary, goal embedding].
class PolicyNetwork {
 public:
  PolicyNetwork(TaskSpec task, ActionGrouping grouping, int goal_dim,
                SplitRng init_rng);

  Eigen::VectorXd build_input(const PartialInstance& state, const SideInfo& si,
                              const Eigen::VectorXd& goal_embedding) const;

  PolicyOutput forward(const Eigen::VectorXd& input,
                       const std::vector<bool>& action_mask) const;
  PolicyOutput forward(const PartialInstance& state, const SideInfo& si,
                       const std::vector<bool>& action_mask,
                       const Eigen::VectorXd& goal_embedding) const;

  const TaskSpec& task() const { return task_; }
  const ActionGrouping& grouping() const { return grouping_; }
  int goal_dim() const { return goal_dim_; }
  int summary_dim() const;
  Mlp& mlp() { return *mlp_; }
  const Mlp& mlp() const { return *mlp_; }

  void save(std::ostream& out, std::uint64_t config_hash) const;
  void save(const std::string& path, std::uint64_t config_hash) const;
  static std::pair<PolicyNetwork, std::uint64_t> load(std::istream& in);
  static std::pair<PolicyNetwork, std::uint64_t> load(const std::string& path);

 private:
  TaskSpec task_;
  ActionGrouping grouping_;
  int goal_dim_ = 0;
  std::shared_ptr<Mlp> mlp_;
};

struct PpoConfig {
  int updates = 50;
  int rollout_steps = 2048;
  int epochs = 10;
  int minibatch_size = 256;
  double clip = 0.2;
  double gae_lambda = 0.95;
  double entropy_coef = 0.01;
  double value_coef = 0.5;
  double learning_rate = 3e-4;
  bool normalize_advantages = true;
  int smoothing_window = 5;
};

struct Transition {
  Eigen::VectorXd input;
  std::vector<bool> mask;
  Action action;
  double log_prob = 0.0;
  double value = 0.0;
  double reward = 0.0;  // full shaped reward used for learning
  bool done = false;
};

struct BatchSample {
  const Transition* transition = nullptr;
  double advantage = 0.0;
  double value_target = 0.0;
};

// Mean composite PPO loss (clipped surrogate + value + entropy bonus) over the
// batch; accumulates exact gradients into grad when given.
double ppo_loss(const Mlp& mlp, const ActionGrouping& grouping,
                const std::vector<BatchSample>& batch, const PpoConfig& config,
                Eigen::VectorXd* grad);

// Goal conditioning callbacks supplied by the explain layer: every `period`
// acquisitions the trainer asks for a goal embedding plus a collapsed-entropy
// potential for the env's goal reward.
struct GoalHooks {
  int period = 10;
  int warm_start = 0;
  std::function<std::pair<Eigen::VectorXd,
                          std::function<double(const PartialInstance&)>>(
      const PartialInstance&)>
      select;
};

struct TrainReport {
  std::vector<double> task_return;   // mean per update, cost + prediction only
  std::vector<double> total_return;  // includes shaping/goal/ood components
  std::vector<double> smoothed_task_return;  // moving-window average
  std::vector<double> policy_loss;
  std::vector<double> value_loss;
  std::vector<double> entropy;
};

TrainReport train_ppo(AcquisitionEnv& env, const Dataset& train,
                      PolicyNetwork& net, const PpoConfig& config, SplitRng rng,
                      const GoalHooks* goals = nullptr);

void write_training_log(const std::string& path, const TrainReport& report);

}  // namespace afa
