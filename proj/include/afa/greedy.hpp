#pragma once

#include <functional>
#include <optional>

#include "afa/mixture.hpp"

namespace afa {

// Reveals the true value of a feature on demand (the environment's role
// during greedy acquisition).
using InstanceOracle = std::function<double(int feature)>;

struct GreedyConfig {
  int num_samples_supervised = 256;
  int num_samples_unsupervised = 1024;
  std::optional<int> budget;
  std::optional<double> cmi_threshold;  // stop when max estimate < threshold
  bool record_scores = true;

  int samples_for(TaskKind kind) const {
    return kind == TaskKind::kUnsupervised ? num_samples_unsupervised
                                           : num_samples_supervised;
  }
};

// Monte Carlo estimate of I(x_i ; y | x_o) for a classification task:
// average over x_i ~ p(x_i|x_o) of KL(P(y|x_i,x_o) || P(y|x_o)).
// Non-negative pointwise.
double cmi_classification(const MixtureSurrogate& surrogate,
                          const PartialInstance& x_o, int i, int num_samples,
                          SplitRng& rng);

// Regression: average over (x_i, y) ~ p(x_i, y | x_o) of
// log p(y|x_i,x_o) - log p(y|x_o), densities exact under the surrogate.
double cmi_regression(const MixtureSurrogate& surrogate,
                      const PartialInstance& x_o, int i, int num_samples,
                      SplitRng& rng);

// Unsupervised: target is the remaining unobserved features r = u \ {i}.
// Defined as 0 when |u| = 1.
double cmi_unsupervised(const MixtureSurrogate& surrogate,
                        const PartialInstance& x_o, int i, int num_samples,
                        SplitRng& rng);

// Dispatch on the surrogate's task kind.
double cmi(const MixtureSurrogate& surrogate, const PartialInstance& x_o, int i,
           int num_samples, SplitRng& rng);

// Greedy loop: estimate CMI for every candidate, acquire the argmax (ties
// broken by lowest index), stop on budget or threshold. The trace holds one
// step per acquisition with per-candidate estimates when recorded.
AcquisitionTrace greedy_acquire(const MixtureSurrogate& surrogate,
                                const InstanceOracle& oracle,
                                const GreedyConfig& config, SplitRng rng);

// Fixed acquisition order: at each step pick the candidate whose CMI averaged
// over the validation instances is largest.
std::vector<int> static_order(const MixtureSurrogate& surrogate,
                              const Dataset& validation, int num_samples,
                              SplitRng rng);

// Prediction at the current observed set, for any task kind.
Prediction predict(const MixtureSurrogate& surrogate, const PartialInstance& x_o);

// Candidate features at a state: unobserved, filtered by the chronological
// rule when the task orders features.
std::vector<int> candidate_features(const TaskSpec& task,
                                    const PartialInstance& state);

}  // namespace afa
