#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "afa/agent.hpp"
#include "afa/mixture.hpp"

namespace afa {

// Probabilistic clustering of fully observed instances; supplies the cluster
// assignment posterior p_Z(z | x).
class ClusteringModel {
 public:
  ClusteringModel() = default;
  explicit ClusteringModel(Mixture mixture) : mixture_(std::move(mixture)) {}

  static ClusteringModel fit(const Eigen::MatrixXd& rows, int num_clusters,
                             SplitRng rng, const FitConfig& config = {});

  int num_clusters() const { return mixture_.num_components(); }
  int dimension() const { return mixture_.dimension(); }
  const Mixture& mixture() const { return mixture_; }

  // Posterior over clusters for a fully observed instance.
  Eigen::VectorXd posterior(const Eigen::VectorXd& x) const;

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static ClusteringModel load(std::istream& in);
  static ClusteringModel load(const std::string& path);

 private:
  Mixture mixture_;
};

enum class SubGoalKind { kClassPair, kClusterSet };

struct SubGoal {
  SubGoalKind kind = SubGoalKind::kClassPair;
  std::vector<int> members;            // 2 classes or C clusters, distinct
  Eigen::VectorXd posterior_snapshot;  // posterior at selection time
};

// Top-2 classes or top-C clusters by probability; ties broken by lowest index.
SubGoal select_subgoal(const Eigen::VectorXd& posterior, SubGoalKind kind,
                       int num_members);

// Average over imputations x_u ~ p(x_u|x_o) of p_Z(z | x_o, x_u).
Eigen::VectorXd cluster_posterior(const MixtureSurrogate& surrogate,
                                  const ClusteringModel& clustering,
                                  const PartialInstance& x_o,
                                  int num_imputations, SplitRng& rng);

// Collapse a posterior to [selected members..., rest] and return its entropy.
double collapsed_entropy(const Eigen::VectorXd& posterior,
                         const std::vector<int>& members);
Eigen::VectorXd collapse_posterior(const Eigen::VectorXd& posterior,
                                   const std::vector<int>& members);

// H(collapsed before) - gamma * H(collapsed after).
double goal_reward(const Eigen::VectorXd& posterior_before,
                   const Eigen::VectorXd& posterior_after,
                   const SubGoal& subgoal, double gamma);

// Goal embeddings appended to the policy input: two-hot over classes or
// C-hot over clusters.
Eigen::VectorXd goal_embedding(const SubGoal& subgoal, int embedding_dim);

struct GoalEpisodeConfig {
  SubGoalKind kind = SubGoalKind::kClassPair;
  int num_members = 2;          // C (2 for class pairs)
  int period = 10;              // T acquisitions per sub-goal
  int warm_start = 0;           // unconditioned acquisitions at the start
  int num_imputations = 50;     // cluster posterior Monte Carlo size
};

struct GoalSegment {
  SubGoal subgoal;                   // empty members for the warm-start segment
  std::vector<int> acquired;
  Eigen::VectorXd collapsed_before;  // over members + rest
  Eigen::VectorXd collapsed_after;
  double entropy_before = 0.0;
  double entropy_after = 0.0;
};

struct GoalEpisode {
  AcquisitionTrace trace;
  std::vector<GoalSegment> segments;
};

// Factory for the trainer: selects sub-goals from the current posterior and
// hands the env a collapsed-entropy potential.
GoalHooks make_goal_hooks(const MixtureSurrogate& surrogate,
                          const ClusteringModel* clustering,
                          const GoalEpisodeConfig& config, SplitRng rng);

// Alternating sub-goal selection and goal-conditioned acquisition with a
// trained agent. The env must have goal rewards enabled.
GoalEpisode run_goal_episode(const PolicyNetwork& net, AcquisitionEnv& env,
                             const ClusteringModel* clustering,
                             const GoalEpisodeConfig& config,
                             const Eigen::VectorXd& instance, Target target,
                             SplitRng rng, bool deterministic = true);

std::string render_goal_episode(const GoalEpisode& episode,
                                const std::vector<std::string>& feature_names);
std::string goal_episode_jsonl(const GoalEpisode& episode);

}  // namespace afa
