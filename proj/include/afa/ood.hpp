#pragma once

#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

#include "afa/mixture.hpp"

namespace afa {

struct NoiseSchedule {
  std::vector<double> sigmas;  // strictly decreasing, positive

  static NoiseSchedule geometric(double sigma_high = 1.0,
                                 double sigma_low = 0.01, int levels = 10);

  int levels() const { return static_cast<int>(sigmas.size()); }
  void validate() const;
};

// Exact gradient of log q_sigma(x_o) restricted to the observed dimensions,
// where q_sigma is the surrogate's feature marginal smoothed by N(0, sigma^2 I)
// (the mixture covariances gain sigma^2 on the diagonal).
Eigen::VectorXd smoothed_marginal_score(const MixtureSurrogate& surrogate,
                                        const PartialInstance& x_o,
                                        double sigma);

// s_i = || smoothed_marginal_score(x_o, sigma_i) ||_2 per noise level.
Eigen::VectorXd score_stats(const MixtureSurrogate& surrogate,
                            const NoiseSchedule& schedule,
                            const PartialInstance& x_o);

// Autoregressive linear-Gaussian density of states over the score norms,
// conditioned on a mask summary (observed fraction, log(1+|o|)).
class ScoreStatsModel {
 public:
  ScoreStatsModel() = default;
  ScoreStatsModel(NoiseSchedule schedule,
                  std::vector<Eigen::VectorXd> coefficients,
                  Eigen::VectorXd variances);

  const NoiseSchedule& schedule() const { return schedule_; }

  // log p(s_1..s_L | mask summary); sum of L conditional Gaussian terms.
  double log_density(const Eigen::VectorXd& stats, double observed_fraction,
                     int observed_count) const;

  void save(std::ostream& out) const;
  void save(const std::string& path) const;
  static ScoreStatsModel load(std::istream& in);
  static ScoreStatsModel load(const std::string& path);

 private:
  NoiseSchedule schedule_;
  // level l regresses s_l on [1, s_1..s_{l-1}, fraction, log1p(count)]
  std::vector<Eigen::VectorXd> coefficients_;
  Eigen::VectorXd variances_;
};

using MaskSampler = std::function<FeatureIndexSet(int d, SplitRng& rng)>;

// Uniform-cardinality masks resampled until nonempty (score stats need at
// least one observed dimension).
MaskSampler default_nonempty_mask_sampler();

// mask_conditioning=false drops the mask-summary regressors (ablation).
ScoreStatsModel fit_dose(const MixtureSurrogate& surrogate, const Dataset& data,
                         const NoiseSchedule& schedule,
                         const MaskSampler& mask_sampler, SplitRng rng,
                         bool mask_conditioning = true);

// -log p(stats | mask summary): larger means more likely out-of-distribution.
double ood_score(const ScoreStatsModel& model, const MixtureSurrogate& surrogate,
                 const PartialInstance& x_o);

// Terminal robustness reward: weight * ood_score when enabled, else 0.
double ood_reward(const ScoreStatsModel& model, const MixtureSurrogate& surrogate,
                  const PartialInstance& x_o, double weight, bool enabled);

// P(random OOD score > random in-distribution score), ties counted half.
double auroc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores);

}  // namespace afa
