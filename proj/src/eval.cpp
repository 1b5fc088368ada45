#include "afa/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <limits>
#include <numeric>
#include <thread>

namespace afa {

Action RandomPolicy::act(AcquisitionEnv& env, SplitRng& rng) {
  std::vector<bool> mask = env.valid_action_mask();
  const int d = env.surrogate().task().d;
  std::vector<int> features;
  for (int i = 0; i < d; ++i)
    if (mask[i]) features.push_back(i);
  if (features.empty()) return Action::terminate();
  return Action::acquire(features[rng.uniform_int(
      0, static_cast<int>(features.size()) - 1)]);
}

Action GreedyCmiPolicy::act(AcquisitionEnv& env, SplitRng& rng) {
  std::vector<bool> mask = env.valid_action_mask();
  const TaskSpec& task = env.surrogate().task();
  int samples = num_samples_ > 0 ? num_samples_
                                 : GreedyConfig{}.samples_for(task.kind);
  int best = -1;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int i = 0; i < task.d; ++i) {
    if (!mask[i]) continue;
    SplitRng sub = rng.split("cmi", static_cast<std::uint64_t>(
                                        env.steps_taken()) * task.d + i);
    double score = cmi(env.surrogate(), env.state(), i, samples, sub);
    if (score > best_score) {
      best_score = score;
      best = i;
    }
  }
  if (best < 0) return Action::terminate();
  return Action::acquire(best);
}

Action StaticOrderPolicy::act(AcquisitionEnv& env, SplitRng&) {
  std::vector<bool> mask = env.valid_action_mask();
  for (int i : order_) {
    if (i >= 0 && i < static_cast<int>(mask.size()) - 1 && mask[i])
      return Action::acquire(i);
  }
  return Action::terminate();
}

Action AgentPolicy::act(AcquisitionEnv& env, SplitRng& rng) {
  SplitRng side = rng.split("side", env.steps_taken());
  SideInfo si = side_info(env.surrogate(), env.state(),
                          env.config().side_info_samples, side,
                          env.config().exact_side_info_moments);
  Eigen::VectorXd goal = Eigen::VectorXd::Zero(net_->goal_dim());
  PolicyOutput po =
      net_->forward(env.state(), si, env.valid_action_mask(), goal);
  if (deterministic_) return argmax_action(po, net_->grouping());
  return sample_action(po, net_->grouping(), rng);
}

AcquisitionTrace run_episode(AcquisitionEnv& env, const Eigen::VectorXd& values,
                             Target target, AcquisitionPolicy& policy,
                             SplitRng rng) {
  env.reset(values, target);
  AcquisitionTrace trace;
  int guard = 0;
  const int limit = 4 * env.surrogate().task().d + 8;
  while (!env.done()) {
    if (++guard > limit) throw std::logic_error("policy failed to terminate");
    Action a = policy.act(env, rng);
    StepOutcome outcome = env.step(a);
    TraceStep step;
    step.action = a;
    if (!a.is_terminate()) step.value = outcome.next_state.values()[a.index];
    step.reward = outcome.reward;
    trace.steps.push_back(std::move(step));
  }
  trace.final_observed = env.state().observed();
  trace.final_prediction = predict(env.surrogate(), env.state());
  trace.validate(env.surrogate().task());
  return trace;
}

namespace {

double bootstrap_stderr(const std::vector<double>& values, int resamples,
                        SplitRng rng) {
  if (values.size() < 2 || resamples < 2) return 0.0;
  const int n = static_cast<int>(values.size());
  std::vector<double> means;
  means.reserve(resamples);
  for (int b = 0; b < resamples; ++b) {
    double acc = 0.0;
    for (int i = 0; i < n; ++i) acc += values[rng.uniform_int(0, n - 1)];
    means.push_back(acc / n);
  }
  double mean = std::accumulate(means.begin(), means.end(), 0.0) / resamples;
  double var = 0.0;
  for (double m : means) var += (m - mean) * (m - mean);
  return std::sqrt(var / (resamples - 1));
}

// per-instance metric at one budget; parallel over instances with
// deterministic per-instance rng streams
std::vector<double> per_instance_metric(
    const std::shared_ptr<const MixtureSurrogate>& surrogate,
    AcquisitionPolicy& policy, const Dataset& test, int budget,
    const EnvConfig& base_config, const CostModel& cost, SplitRng& rng,
    int workers,
    const std::function<double(const AcquisitionTrace&, int row)>& metric) {
  EnvConfig config = base_config;
  config.hard_budget = std::min(budget, test.d());
  config.allow_terminate = false;

  std::vector<double> out(test.n());
  std::vector<SplitRng> streams;
  streams.reserve(test.n());
  for (int r = 0; r < test.n(); ++r)
    streams.push_back(rng.split("instance", r));

  auto run_range = [&](int from, int to) {
    AcquisitionEnv env(surrogate, cost, config);
    for (int r = from; r < to; ++r) {
      AcquisitionTrace trace =
          run_episode(env, test.features.row(r).transpose(), test.targets[r],
                      policy, streams[r]);
      out[r] = metric(trace, r);
    }
  };

  workers = std::max(1, std::min(workers, test.n()));
  if (workers == 1) {
    run_range(0, test.n());
  } else {
    std::vector<std::thread> pool;
    int chunk = (test.n() + workers - 1) / workers;
    for (int w = 0; w < workers; ++w) {
      int from = w * chunk;
      int to = std::min(from + chunk, test.n());
      if (from < to) pool.emplace_back(run_range, from, to);
    }
    for (auto& t : pool) t.join();
  }
  return out;
}

}  // namespace

std::vector<CurvePoint> accuracy_curve(
    const std::shared_ptr<const MixtureSurrogate>& surrogate,
    AcquisitionPolicy& policy, const Dataset& test,
    const std::vector<int>& budgets, const EnvConfig& base_config,
    const CostModel& cost, SplitRng rng, const CurveConfig& curve) {
  if (surrogate->task().kind != TaskKind::kClassification)
    throw std::invalid_argument("accuracy curve needs a classification task");
  for (std::size_t b = 1; b < budgets.size(); ++b) {
    if (budgets[b] < budgets[b - 1])
      throw std::invalid_argument("budgets must be sorted ascending");
  }
  std::vector<CurvePoint> out;
  for (int budget : budgets) {
    SplitRng budget_rng = rng.split("budget", budget);
    std::vector<double> hits = per_instance_metric(
        surrogate, policy, test, budget, base_config, cost, budget_rng,
        curve.workers, [&](const AcquisitionTrace& trace, int row) {
          return trace.final_prediction.argmax_class() ==
                         test.targets[row].label()
                     ? 1.0
                     : 0.0;
        });
    CurvePoint point;
    point.budget = budget;
    point.metric = std::accumulate(hits.begin(), hits.end(), 0.0) / hits.size();
    point.stderr_boot = bootstrap_stderr(hits, curve.bootstrap_resamples,
                                         budget_rng.split("bootstrap"));
    out.push_back(point);
  }
  return out;
}

std::vector<CurvePoint> rmse_curve(
    const std::shared_ptr<const MixtureSurrogate>& surrogate,
    AcquisitionPolicy& policy, const Dataset& test,
    const std::vector<int>& budgets, const EnvConfig& base_config,
    const CostModel& cost, SplitRng rng, const CurveConfig& curve) {
  const TaskKind kind = surrogate->task().kind;
  if (kind == TaskKind::kClassification)
    throw std::invalid_argument("rmse curve needs regression or unsupervised");
  std::vector<CurvePoint> out;
  for (int budget : budgets) {
    SplitRng budget_rng = rng.split("budget", budget);
    std::vector<double> sq_errors = per_instance_metric(
        surrogate, policy, test, budget, base_config, cost, budget_rng,
        curve.workers, [&](const AcquisitionTrace& trace, int row) {
          if (kind == TaskKind::kRegression) {
            double err =
                trace.final_prediction.mean - test.targets[row].scalar();
            return err * err;
          }
          // unsupervised: imputation error over the complement
          FeatureIndexSet u = trace.final_observed.complement(test.d());
          if (u.empty()) return 0.0;
          double acc = 0.0;
          for (int i : u) {
            double err =
                trace.final_prediction.imputed[i] - test.features(row, i);
            acc += err * err;
          }
          return acc / u.size();
        });
    CurvePoint point;
    point.budget = budget;
    double mse =
        std::accumulate(sq_errors.begin(), sq_errors.end(), 0.0) /
        sq_errors.size();
    point.metric = std::sqrt(mse);
    point.stderr_boot = bootstrap_stderr(sq_errors, curve.bootstrap_resamples,
                                         budget_rng.split("bootstrap"));
    out.push_back(point);
  }
  return out;
}

double f1_score(const std::vector<int>& predictions,
                const std::vector<int>& labels, int positive_class) {
  if (predictions.size() != labels.size())
    throw std::invalid_argument("predictions/labels size mismatch");
  if (predictions.empty()) throw std::invalid_argument("empty prediction list");
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    bool pred_pos = predictions[i] == positive_class;
    bool is_pos = labels[i] == positive_class;
    if (pred_pos && is_pos) ++tp;
    if (pred_pos && !is_pos) ++fp;
    if (!pred_pos && is_pos) ++fn;
  }
  double denom = 2.0 * tp + fp + fn;
  if (denom == 0.0) return 0.0;
  return 2.0 * tp / denom;
}

void write_curve_csv(const std::string& path, const std::string& metric_name,
                     const std::vector<CurvePoint>& curve) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write curve file: " + path);
  out << "budget," << metric_name << ",stderr\n";
  out.precision(17);
  for (const CurvePoint& p : curve)
    out << p.budget << "," << p.metric << "," << p.stderr_boot << "\n";
}

}  // namespace afa
