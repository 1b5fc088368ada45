#pragma once

#include <memory>
#include <string>
#include <vector>

#include "afa/agent.hpp"
#include "afa/env.hpp"
#include "afa/greedy.hpp"

namespace afa {

// Step-wise acquisition policy driven through the env by run_episode.
class AcquisitionPolicy {
 public:
  virtual ~AcquisitionPolicy() = default;
  virtual Action act(AcquisitionEnv& env, SplitRng& rng) = 0;
  virtual std::string name() const = 0;
};

class RandomPolicy : public AcquisitionPolicy {
 public:
  Action act(AcquisitionEnv& env, SplitRng& rng) override;
  std::string name() const override { return "random"; }
};

class GreedyCmiPolicy : public AcquisitionPolicy {
 public:
  explicit GreedyCmiPolicy(int num_samples = 0) : num_samples_(num_samples) {}
  Action act(AcquisitionEnv& env, SplitRng& rng) override;
  std::string name() const override { return "greedy"; }

 private:
  int num_samples_;  // 0 picks the task default
};

class StaticOrderPolicy : public AcquisitionPolicy {
 public:
  explicit StaticOrderPolicy(std::vector<int> order)
      : order_(std::move(order)) {}
  Action act(AcquisitionEnv& env, SplitRng& rng) override;
  std::string name() const override { return "static"; }

 private:
  std::vector<int> order_;
};

class AgentPolicy : public AcquisitionPolicy {
 public:
  explicit AgentPolicy(std::shared_ptr<const PolicyNetwork> net,
                       bool deterministic = true)
      : net_(std::move(net)), deterministic_(deterministic) {}
  Action act(AcquisitionEnv& env, SplitRng& rng) override;
  std::string name() const override { return "agent"; }

 private:
  std::shared_ptr<const PolicyNetwork> net_;
  bool deterministic_;
};

AcquisitionTrace run_episode(AcquisitionEnv& env, const Eigen::VectorXd& values,
                             Target target, AcquisitionPolicy& policy,
                             SplitRng rng);

struct CurvePoint {
  int budget = 0;
  double metric = 0.0;
  double stderr_boot = 0.0;  // per-instance bootstrap standard error
};

struct CurveConfig {
  int bootstrap_resamples = 1000;
  int workers = 1;
};

// Policy run with each hard budget over the test set; termination is forced
// at the budget. Mean accuracy plus bootstrap standard error per budget.
std::vector<CurvePoint> accuracy_curve(
    const std::shared_ptr<const MixtureSurrogate>& surrogate,
    AcquisitionPolicy& policy, const Dataset& test,
    const std::vector<int>& budgets, const EnvConfig& base_config,
    const CostModel& cost, SplitRng rng, const CurveConfig& curve = {});

// Regression: rmse of the target. Unsupervised: rmse of imputing the
// complement of the acquired set (0 once everything is acquired).
std::vector<CurvePoint> rmse_curve(
    const std::shared_ptr<const MixtureSurrogate>& surrogate,
    AcquisitionPolicy& policy, const Dataset& test,
    const std::vector<int>& budgets, const EnvConfig& base_config,
    const CostModel& cost, SplitRng rng, const CurveConfig& curve = {});

double f1_score(const std::vector<int>& predictions,
                const std::vector<int>& labels, int positive_class);

void write_curve_csv(const std::string& path, const std::string& metric_name,
                     const std::vector<CurvePoint>& curve);

}  // namespace afa
