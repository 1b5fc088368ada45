#include "afa/greedy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace afa {

namespace {

int position_of(const std::vector<int>& ascending, int value) {
  auto it = std::lower_bound(ascending.begin(), ascending.end(), value);
  return static_cast<int>(it - ascending.begin());
}

}  // namespace

std::vector<int> candidate_features(const TaskSpec& task,
                                    const PartialInstance& state) {
  std::vector<int> out;
  int min_allowed = 0;
  if (task.ordering == OrderingConstraint::kChronological &&
      !state.observed().empty()) {
    min_allowed = state.observed().indices().back() + 1;
  }
  for (int i = 0; i < task.d; ++i) {
    if (!state.observed().contains(i) && i >= min_allowed) out.push_back(i);
  }
  return out;
}

double cmi_classification(const MixtureSurrogate& surrogate,
                          const PartialInstance& x_o, int i, int num_samples,
                          SplitRng& rng) {
  if (x_o.observed().contains(i))
    throw std::invalid_argument("candidate already observed");
  const int num_classes = surrogate.task().num_classes;

  // p(x_i | x_o) per class as 1-D mixtures; sampling uses the class-weighted
  // posterior mixture so that log-joints update incrementally per sample.
  Eigen::VectorXd base_posterior = surrogate.class_posterior(x_o);
  const std::vector<int> u = x_o.unobserved().indices();
  std::vector<int> i_pos{position_of(u, i)};
  std::vector<Mixture> per_class;
  per_class.reserve(num_classes);
  for (int c = 0; c < num_classes; ++c)
    per_class.push_back(surrogate.condition(x_o, c).marginal(i_pos));
  Mixture sampler = surrogate.condition(x_o).marginal(i_pos);

  double acc = 0.0;
  Eigen::VectorXd xi(1), logits(num_classes);
  for (int s = 0; s < num_samples; ++s) {
    xi = sampler.sample(rng);
    for (int c = 0; c < num_classes; ++c) {
      // log P(c) p(x_o|c) p(x_i|x_o,c)
      logits[c] = base_posterior[c] + per_class[c].log_density(xi);
    }
    Eigen::VectorXd post = logits.array() - log_sum_exp(logits);
    double kl = 0.0;
    for (int c = 0; c < num_classes; ++c) {
      double p = std::exp(post[c]);
      if (p > 0.0) kl += p * (post[c] - base_posterior[c]);
    }
    acc += std::max(kl, 0.0);
  }
  return acc / num_samples;
}

double cmi_regression(const MixtureSurrogate& surrogate,
                      const PartialInstance& x_o, int i, int num_samples,
                      SplitRng& rng) {
  if (x_o.observed().contains(i))
    throw std::invalid_argument("candidate already observed");

  Mixture cond = surrogate.condition_with_target(x_o);
  const std::vector<int> u = x_o.unobserved().indices();
  int y_pos = cond.dimension() - 1;
  std::vector<int> iy{position_of(u, i), y_pos};
  Mixture joint_iy = cond.marginal(iy);       // p(x_i, y | x_o)
  Mixture y_given_o = cond.marginal({y_pos});  // p(y | x_o)

  double acc = 0.0;
  std::vector<int> first{0};
  Eigen::VectorXd draw(2), xi(1), y(1);
  for (int s = 0; s < num_samples; ++s) {
    draw = joint_iy.sample(rng);
    xi[0] = draw[0];
    y[0] = draw[1];
    double num = joint_iy.conditional(first, xi).log_density(y);
    double den = y_given_o.log_density(y);
    acc += num - den;
  }
  return acc / num_samples;
}

double cmi_unsupervised(const MixtureSurrogate& surrogate,
                        const PartialInstance& x_o, int i, int num_samples,
                        SplitRng& rng) {
  if (x_o.observed().contains(i))
    throw std::invalid_argument("candidate already observed");
  const std::vector<int> u = x_o.unobserved().indices();
  if (u.size() < 2) return 0.0;  // no remainder to inform

  Mixture cond = surrogate.condition(x_o);
  int i_pos = position_of(u, i);
  std::vector<int> i_only{i_pos};
  std::vector<int> r_pos;
  for (int k = 0; k < static_cast<int>(u.size()); ++k)
    if (k != i_pos) r_pos.push_back(k);
  Mixture r_given_o = cond.marginal(r_pos);

  double acc = 0.0;
  Eigen::VectorXd xi(1), xr(r_pos.size());
  for (int s = 0; s < num_samples; ++s) {
    Eigen::VectorXd xu = cond.sample(rng);
    xi[0] = xu[i_pos];
    for (std::size_t k = 0; k < r_pos.size(); ++k) xr[k] = xu[r_pos[k]];
    double num = cond.conditional(i_only, xi).log_density(xr);
    double den = r_given_o.log_density(xr);
    acc += num - den;
  }
  return acc / num_samples;
}

double cmi(const MixtureSurrogate& surrogate, const PartialInstance& x_o, int i,
           int num_samples, SplitRng& rng) {
  switch (surrogate.task().kind) {
    case TaskKind::kClassification:
      return cmi_classification(surrogate, x_o, i, num_samples, rng);
    case TaskKind::kRegression:
      return cmi_regression(surrogate, x_o, i, num_samples, rng);
    case TaskKind::kUnsupervised:
      return cmi_unsupervised(surrogate, x_o, i, num_samples, rng);
  }
  throw std::logic_error("unknown task kind");
}

Prediction predict(const MixtureSurrogate& surrogate, const PartialInstance& x_o) {
  Prediction p;
  p.kind = surrogate.task().kind;
  switch (p.kind) {
    case TaskKind::kClassification:
      p.class_probs = surrogate.class_posterior(x_o).array().exp();
      break;
    case TaskKind::kRegression: {
      auto [mean, var] = surrogate.regression_posterior(x_o);
      p.mean = mean;
      p.variance = var;
      break;
    }
    case TaskKind::kUnsupervised: {
      p.imputed = x_o.values();
      if (x_o.observed().size() < x_o.dimension()) {
        Eigen::VectorXd means = surrogate.condition(x_o).mean();
        const std::vector<int> u = x_o.unobserved().indices();
        for (std::size_t k = 0; k < u.size(); ++k) p.imputed[u[k]] = means[k];
      }
      break;
    }
  }
  return p;
}

AcquisitionTrace greedy_acquire(const MixtureSurrogate& surrogate,
                                const InstanceOracle& oracle,
                                const GreedyConfig& config, SplitRng rng) {
  const TaskSpec& task = surrogate.task();
  const int num_samples = config.samples_for(task.kind);
  PartialInstance state = PartialInstance::empty(task.d);
  AcquisitionTrace trace;

  int budget = config.budget.value_or(task.d);
  budget = std::min(budget, task.d);
  for (int step = 0; step < budget; ++step) {
    std::vector<int> candidates = candidate_features(task, state);
    if (candidates.empty()) break;
    std::vector<double> scores(task.d,
                               -std::numeric_limits<double>::infinity());
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int i : candidates) {
      SplitRng sub = rng.split("cmi", static_cast<std::uint64_t>(step) * task.d + i);
      double score = cmi(surrogate, state, i, num_samples, sub);
      scores[i] = score;
      if (score > best_score) {  // strict: ties keep the lowest index
        best_score = score;
        best = i;
      }
    }
    if (config.cmi_threshold && best_score < *config.cmi_threshold) break;

    TraceStep ts;
    ts.action = Action::acquire(best);
    ts.value = oracle(best);
    if (config.record_scores) ts.candidate_scores = std::move(scores);
    state = state.with_observed(best, ts.value);
    if (task.kind == TaskKind::kClassification) {
      Eigen::VectorXd post = surrogate.class_posterior(state).array().exp();
      ts.posterior.assign(post.data(), post.data() + post.size());
    }
    trace.steps.push_back(std::move(ts));
  }

  trace.final_observed = state.observed();
  trace.final_prediction = predict(surrogate, state);
  trace.validate(task);
  return trace;
}

std::vector<int> static_order(const MixtureSurrogate& surrogate,
                              const Dataset& validation, int num_samples,
                              SplitRng rng) {
  if (validation.n() == 0)
    throw std::invalid_argument("validation set is empty");
  const TaskSpec& task = surrogate.task();
  std::vector<PartialInstance> states(validation.n(),
                                      PartialInstance::empty(task.d));
  std::vector<int> order;
  std::vector<bool> used(task.d, false);

  for (int step = 0; step < task.d; ++step) {
    int best = -1;
    double best_score = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < task.d; ++i) {
      if (used[i]) continue;
      if (task.ordering == OrderingConstraint::kChronological && !order.empty() &&
          i <= *std::max_element(order.begin(), order.end()))
        continue;
      double avg = 0.0;
      for (int r = 0; r < validation.n(); ++r) {
        SplitRng sub = rng.split(
            "static", (static_cast<std::uint64_t>(step) * task.d + i) *
                              validation.n() + r);
        avg += cmi(surrogate, states[r], i, num_samples, sub);
      }
      avg /= validation.n();
      if (avg > best_score) {
        best_score = avg;
        best = i;
      }
    }
    if (best < 0) break;
    used[best] = true;
    order.push_back(best);
    for (int r = 0; r < validation.n(); ++r)
      states[r] = states[r].with_observed(best, validation.features(r, best));
  }
  return order;
}

}  // namespace afa
