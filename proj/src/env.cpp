#include "afa/env.hpp"

#include <algorithm>
#include <cmath>

#include "afa/ood.hpp"

namespace afa {

void EnvConfig::validate() const {
  if (gamma <= 0.0 || gamma > 1.0)
    throw std::invalid_argument("gamma must be in (0, 1]");
  if (alpha < 0.0) throw std::invalid_argument("alpha must be >= 0");
  if (!allow_terminate && !hard_budget)
    throw std::invalid_argument(
        "hard_budget is required when terminate is disabled");
  if (hard_budget && *hard_budget < 0)
    throw std::invalid_argument("hard_budget must be >= 0");
  if (side_info_samples < 2)
    throw std::invalid_argument("side_info_samples must be >= 2");
}

double shaping_potential(const MixtureSurrogate& surrogate,
                         const Eigen::VectorXd& full_values,
                         const PartialInstance& state) {
  if (surrogate.task().supervised()) {
    return -surrogate.conditional_entropy_y(state);
  }
  const int d = surrogate.task().d;
  int num_unobserved = d - state.observed().size();
  if (num_unobserved == 0) return 0.0;
  PartialInstance all = PartialInstance::from(
      full_values, FeatureIndexSet::full(d));
  double log_cond = surrogate.log_marginal(all) - surrogate.log_marginal(state);
  return log_cond / num_unobserved;
}

double shaping_reward(const MixtureSurrogate& surrogate,
                      const Eigen::VectorXd& full_values,
                      const PartialInstance& before, int i, double gamma) {
  PartialInstance after = before.with_observed(i, full_values[i]);
  double phi_before = shaping_potential(surrogate, full_values, before);
  double phi_after = shaping_potential(surrogate, full_values, after);
  return gamma * phi_after - phi_before;
}

SideInfo side_info(const MixtureSurrogate& surrogate, const PartialInstance& x_o,
                   int num_samples, SplitRng& rng, bool exact_moments) {
  const TaskSpec& task = surrogate.task();
  const int d = task.d;
  SideInfo si;
  si.imputed_mean = x_o.values();
  si.imputed_variance = Eigen::VectorXd::Zero(d);
  si.expected_info_gain = Eigen::VectorXd::Zero(d);

  const std::vector<int> u = x_o.unobserved().indices();
  if (!u.empty()) {
    Mixture cond = surrogate.condition(x_o);
    if (exact_moments) {
      Eigen::VectorXd mean = cond.mean();
      for (std::size_t k = 0; k < u.size(); ++k) {
        si.imputed_mean[u[k]] = mean[k];
        si.imputed_variance[u[k]] = cond.coordinate_variance(k);
      }
    } else {
      Eigen::MatrixXd draws = cond.sample(num_samples, rng);
      Eigen::VectorXd mean = draws.colwise().mean();
      for (std::size_t k = 0; k < u.size(); ++k) {
        si.imputed_mean[u[k]] = mean[k];
        si.imputed_variance[u[k]] =
            (draws.col(k).array() - mean[k]).square().sum() /
            (num_samples - 1);
      }
    }

    // info gain per candidate via Gaussian entropies of exact conditional
    // variances: H(x_i|x_o) - E_y[H(x_i|y,x_o)]
    constexpr double kVarFloor = 1e-12;
    switch (task.kind) {
      case TaskKind::kClassification: {
        Eigen::VectorXd posterior =
            surrogate.class_posterior(x_o).array().exp();
        std::vector<Mixture> per_class;
        per_class.reserve(task.num_classes);
        for (int c = 0; c < task.num_classes; ++c)
          per_class.push_back(surrogate.condition(x_o, c));
        for (std::size_t k = 0; k < u.size(); ++k) {
          double h_marg =
              0.5 * std::log(std::max(cond.coordinate_variance(k), kVarFloor));
          double h_cond = 0.0;
          for (int c = 0; c < task.num_classes; ++c) {
            h_cond += posterior[c] *
                      0.5 *
                      std::log(std::max(per_class[c].coordinate_variance(k),
                                        kVarFloor));
          }
          si.expected_info_gain[u[k]] = h_marg - h_cond;
        }
        break;
      }
      case TaskKind::kRegression: {
        Mixture with_y = surrogate.condition_with_target(x_o);
        int y_pos = with_y.dimension() - 1;
        int y_samples = std::min(num_samples, 16);
        Eigen::MatrixXd y_draws =
            with_y.marginal({y_pos}).sample(y_samples, rng);
        std::vector<Mixture> given_y;
        given_y.reserve(y_samples);
        Eigen::VectorXd yv(1);
        for (int s = 0; s < y_samples; ++s) {
          yv[0] = y_draws(s, 0);
          given_y.push_back(with_y.conditional({y_pos}, yv));
        }
        for (std::size_t k = 0; k < u.size(); ++k) {
          double h_marg =
              0.5 * std::log(std::max(cond.coordinate_variance(k), kVarFloor));
          double h_cond = 0.0;
          for (int s = 0; s < y_samples; ++s) {
            h_cond += 0.5 * std::log(std::max(
                                given_y[s].coordinate_variance(k), kVarFloor));
          }
          si.expected_info_gain[u[k]] = h_marg - h_cond / y_samples;
        }
        break;
      }
      case TaskKind::kUnsupervised: {
        if (u.size() >= 2) {
          int r_samples = std::min(num_samples, 16);
          Eigen::MatrixXd draws = cond.sample(r_samples, rng);
          for (std::size_t k = 0; k < u.size(); ++k) {
            std::vector<int> rest;
            for (int j = 0; j < static_cast<int>(u.size()); ++j)
              if (j != static_cast<int>(k)) rest.push_back(j);
            double h_marg = 0.5 * std::log(std::max(
                                      cond.coordinate_variance(k), kVarFloor));
            double h_cond = 0.0;
            Eigen::VectorXd xr(rest.size());
            for (int s = 0; s < r_samples; ++s) {
              for (std::size_t j = 0; j < rest.size(); ++j)
                xr[j] = draws(s, rest[j]);
              Mixture given_r = cond.conditional(rest, xr);
              h_cond += 0.5 * std::log(std::max(
                                  given_r.coordinate_variance(0), kVarFloor));
            }
            si.expected_info_gain[u[k]] = h_marg - h_cond / r_samples;
          }
        }
        break;
      }
    }
  }

  switch (task.kind) {
    case TaskKind::kClassification:
      si.prediction_summary = surrogate.class_posterior(x_o).array().exp();
      break;
    case TaskKind::kRegression: {
      auto [mean, var] = surrogate.regression_posterior(x_o);
      si.prediction_summary.resize(2);
      si.prediction_summary << mean, var;
      break;
    }
    case TaskKind::kUnsupervised:
      si.prediction_summary.resize(0);
      break;
  }
  return si;
}

AcquisitionEnv::AcquisitionEnv(std::shared_ptr<const MixtureSurrogate> surrogate,
                               CostModel cost, EnvConfig config,
                               std::shared_ptr<const ScoreStatsModel> dose)
    : surrogate_(std::move(surrogate)),
      cost_(std::move(cost)),
      config_(config),
      dose_(std::move(dose)) {
  config_.validate();
  cost_.validate();
  if (cost_.per_feature_cost.size() != surrogate_->task().d)
    throw std::invalid_argument("cost model dimension mismatch");
  if (config_.ood_reward && !dose_)
    throw std::invalid_argument("ood_reward needs a fitted score-stats model");
}

void AcquisitionEnv::set_class_weights(Eigen::VectorXd weights) {
  if (surrogate_->task().kind != TaskKind::kClassification)
    throw std::logic_error("class weights need a classification task");
  if (weights.size() != surrogate_->task().num_classes)
    throw std::invalid_argument("class weight size mismatch");
  class_weights_ = std::move(weights);
}

void AcquisitionEnv::set_goal_potential(
    std::function<double(const PartialInstance&)> fn) {
  goal_potential_ = std::move(fn);
  goal_active_ = static_cast<bool>(goal_potential_);
  if (goal_active_ && !done_) goal_entropy_cached_ = goal_potential_(state_);
}

void AcquisitionEnv::clear_goal_potential() {
  goal_potential_ = nullptr;
  goal_active_ = false;
}

const PartialInstance& AcquisitionEnv::reset(Eigen::VectorXd full_values,
                                             Target target) {
  const TaskSpec& task = surrogate_->task();
  if (full_values.size() != task.d)
    throw std::invalid_argument("instance dimension mismatch");
  if (!full_values.allFinite()) throw NumericError("non-finite instance");
  switch (task.kind) {
    case TaskKind::kClassification:
      if (!target.is_label() || target.label() >= task.num_classes)
        throw std::invalid_argument("episode needs a class label");
      break;
    case TaskKind::kRegression:
      if (!target.is_scalar())
        throw std::invalid_argument("episode needs a scalar target");
      break;
    case TaskKind::kUnsupervised:
      if (!target.is_none())
        throw std::invalid_argument("unsupervised episode carries no target");
      break;
  }
  instance_ = std::move(full_values);
  target_ = target;
  state_ = PartialInstance::empty(task.d);
  steps_ = 0;
  done_ = false;
  if (goal_active_) goal_entropy_cached_ = goal_potential_(state_);
  return state_;
}

std::vector<bool> AcquisitionEnv::valid_action_mask() const {
  const int d = surrogate_->task().d;
  std::vector<bool> mask(d + 1, false);
  if (done_) return mask;
  bool budget_reached = config_.hard_budget && steps_ >= *config_.hard_budget;
  bool any_feature = false;
  if (!budget_reached) {
    for (int i : candidate_features(surrogate_->task(), state_)) {
      mask[i] = true;
      any_feature = true;
    }
  }
  mask[d] = config_.allow_terminate || !any_feature;
  return mask;
}

double AcquisitionEnv::prediction_reward() const {
  const TaskSpec& task = surrogate_->task();
  switch (task.kind) {
    case TaskKind::kClassification: {
      double log_p = surrogate_->class_posterior(state_)[target_.label()];
      double weight =
          config_.class_weighted_loss && class_weights_.size()
              ? class_weights_[target_.label()]
              : 1.0;
      return weight * log_p;  // negative (weighted) cross-entropy
    }
    case TaskKind::kRegression: {
      auto [mean, var] = surrogate_->regression_posterior(state_);
      (void)var;
      double err = mean - target_.scalar();
      return -err * err;
    }
    case TaskKind::kUnsupervised: {
      const std::vector<int> u = state_.unobserved().indices();
      if (u.empty()) return 0.0;
      Eigen::VectorXd imputed = surrogate_->condition(state_).mean();
      double mse = 0.0;
      for (std::size_t k = 0; k < u.size(); ++k) {
        double err = imputed[k] - instance_[u[k]];
        mse += err * err;
      }
      return -mse / u.size();
    }
  }
  throw std::logic_error("unknown task kind");
}

StepOutcome AcquisitionEnv::step(Action action) {
  if (done_) throw std::logic_error("episode already terminated");
  std::vector<bool> mask = valid_action_mask();
  const int d = surrogate_->task().d;
  int slot = action.is_terminate() ? d : action.index;
  if (slot < 0 || slot > d || !mask[slot])
    throw std::invalid_argument("invalid action for current state");

  StepOutcome out;
  if (action.is_terminate()) {
    out.reward.prediction = prediction_reward();
    if (config_.ood_reward && dose_) {
      out.reward.ood =
          config_.ood_reward_weight * ood_score(*dose_, *surrogate_, state_);
    }
    done_ = true;
  } else {
    int i = action.index;
    out.reward.cost = -config_.alpha * cost_.per_feature_cost[i];
    if (config_.shaping) {
      out.reward.shaping =
          shaping_reward(*surrogate_, instance_, state_, i, config_.gamma);
    }
    PartialInstance next = state_.with_observed(i, instance_[i]);
    if (config_.goal_reward && goal_active_) {
      double h_after = goal_potential_(next);
      out.reward.goal = goal_entropy_cached_ - config_.gamma * h_after;
      goal_entropy_cached_ = h_after;
    }
    state_ = std::move(next);
    ++steps_;
  }
  out.next_state = state_;
  out.done = done_;
  return out;
}

Eigen::VectorXd inverse_frequency_weights(const Dataset& data) {
  Eigen::VectorXd freq = data.class_frequencies();
  Eigen::VectorXd weights(freq.size());
  for (int c = 0; c < freq.size(); ++c) {
    if (freq[c] <= 0.0) throw DataError("class without training rows");
    weights[c] = 1.0 / freq[c];
  }
  return weights * (weights.size() / weights.sum());
}

}  // namespace afa
