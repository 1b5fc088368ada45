#include "afa/agent.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include "afa/io.hpp"

namespace afa {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

std::vector<std::vector<int>> contiguous_split(const std::vector<int>& ordered,
                                               int num_groups) {
  const int d = static_cast<int>(ordered.size());
  if (num_groups < 1 || num_groups > d)
    throw std::invalid_argument("group count must be in [1, d]");
  int size = (d + num_groups - 1) / num_groups;  // ceil(d / K)
  std::vector<std::vector<int>> groups;
  for (int at = 0; at < d; at += size) {
    int end = std::min(at + size, d);
    groups.emplace_back(ordered.begin() + at, ordered.begin() + end);
  }
  return groups;
}

}  // namespace

int ActionGrouping::max_group_size() const {
  int n = 0;
  for (const auto& g : groups) n = std::max(n, static_cast<int>(g.size()));
  return n;
}

int ActionGrouping::dimension() const {
  int d = 0;
  for (const auto& g : groups) d += static_cast<int>(g.size());
  return d;
}

int ActionGrouping::decode(int k, int n) const {
  if (k < 0 || k >= num_groups()) throw std::out_of_range("group index");
  const auto& g = groups[k];
  if (n < 0 || n >= static_cast<int>(g.size()))
    throw std::out_of_range("member index");
  return g[n];
}

std::pair<int, int> ActionGrouping::encode(int feature) const {
  for (int k = 0; k < num_groups(); ++k) {
    for (int n = 0; n < static_cast<int>(groups[k].size()); ++n) {
      if (groups[k][n] == feature) return {k, n};
    }
  }
  throw std::out_of_range("feature not covered by grouping");
}

void ActionGrouping::validate() const {
  const int d = dimension();
  std::vector<bool> seen(d, false);
  for (const auto& g : groups) {
    if (g.empty()) throw std::invalid_argument("empty action group");
    for (int i : g) {
      if (i < 0 || i >= d || seen[i])
        throw std::invalid_argument("groups must partition the features");
      seen[i] = true;
    }
  }
  int n = max_group_size();
  for (std::size_t k = 0; k + 1 < groups.size(); ++k) {
    if (static_cast<int>(groups[k].size()) != n)
      throw std::invalid_argument("only the last group may be smaller");
  }
  if (mi_scores.size() && mi_scores.size() != d)
    throw std::invalid_argument("mi score size mismatch");
}

ActionGrouping group_features(const MixtureSurrogate& surrogate,
                              const Dataset& validation, int num_groups,
                              int num_samples, SplitRng rng) {
  if (validation.n() == 0)
    throw std::invalid_argument("validation set is empty");
  const TaskSpec& task = surrogate.task();
  const int d = task.d;

  std::vector<int> rows(validation.n());
  std::iota(rows.begin(), rows.end(), 0);
  if (num_samples < validation.n()) {
    std::shuffle(rows.begin(), rows.end(), rng.engine());
    rows.resize(num_samples);
  }

  Eigen::VectorXd mi = Eigen::VectorXd::Zero(d);
  PartialInstance empty = PartialInstance::empty(d);
  for (int i = 0; i < d; ++i) {
    double acc = 0.0;
    for (int r : rows) {
      Eigen::VectorXd row = validation.features.row(r).transpose();
      PartialInstance x_i =
          empty.with_observed(i, row[i]);
      switch (task.kind) {
        case TaskKind::kClassification: {
          int y = validation.targets[r].label();
          acc += surrogate.class_posterior(x_i)[y] -
                 surrogate.class_posterior(empty)[y];
          break;
        }
        case TaskKind::kRegression: {
          Eigen::VectorXd y(1);
          y[0] = validation.targets[r].scalar();
          Mixture with_y = surrogate.condition_with_target(x_i);
          Mixture prior_y = surrogate.condition_with_target(empty);
          acc += with_y.marginal({with_y.dimension() - 1}).log_density(y) -
                 prior_y.marginal({prior_y.dimension() - 1}).log_density(y);
          break;
        }
        case TaskKind::kUnsupervised: {
          // I(x_i ; x_rest) from three marginal evaluations
          PartialInstance all =
              PartialInstance::from(row, FeatureIndexSet::full(d));
          PartialInstance rest = PartialInstance::from(
              row, FeatureIndexSet({i}).complement(d));
          acc += surrogate.log_marginal(all) - surrogate.log_marginal(x_i) -
                 surrogate.log_marginal(rest);
          break;
        }
      }
    }
    mi[i] = acc / rows.size();
  }

  // quantize to nano-nats so estimator rounding noise cannot break ties
  std::vector<long long> key(d);
  for (int i = 0; i < d; ++i) key[i] = std::llround(mi[i] * 1e9);
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (key[a] != key[b]) return key[a] > key[b];
    return a < b;
  });

  ActionGrouping grouping;
  grouping.groups = contiguous_split(order, num_groups);
  grouping.mi_scores = mi;
  grouping.validate();
  return grouping;
}

ActionGrouping group_features_random(int d, int num_groups, SplitRng rng) {
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  ActionGrouping grouping;
  grouping.groups = contiguous_split(order, num_groups);
  grouping.mi_scores = Eigen::VectorXd::Zero(d);
  grouping.validate();
  return grouping;
}

ActionGrouping group_features_contiguous(int d, int num_groups) {
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  ActionGrouping grouping;
  grouping.groups = contiguous_split(order, num_groups);
  grouping.mi_scores = Eigen::VectorXd::Zero(d);
  grouping.validate();
  return grouping;
}

ActionGrouping group_features_spectral(const Dataset& validation,
                                       int num_groups) {
  if (validation.n() < 2)
    throw std::invalid_argument("need at least 2 validation rows");
  const int d = validation.d();
  Eigen::MatrixXd centered =
      validation.features.rowwise() - validation.features.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / validation.n();
  Eigen::VectorXd sd = cov.diagonal().array().sqrt().max(1e-12);
  Eigen::MatrixXd affinity =
      (cov.array() / (sd * sd.transpose()).array()).abs();
  affinity.diagonal().setZero();

  Eigen::MatrixXd laplacian = -affinity;
  laplacian.diagonal() = affinity.rowwise().sum();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(laplacian);
  // order features along the Fiedler vector, then split into equal blocks
  Eigen::VectorXd fiedler = eig.eigenvectors().col(std::min(1, d - 1));
  std::vector<int> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (fiedler[a] != fiedler[b]) return fiedler[a] < fiedler[b];
    return a < b;
  });
  ActionGrouping grouping;
  grouping.groups = contiguous_split(order, num_groups);
  grouping.mi_scores = Eigen::VectorXd::Zero(d);
  grouping.validate();
  return grouping;
}

namespace {

// log-softmax over entries where valid[i]; invalid become -inf
Eigen::VectorXd masked_log_softmax(const Eigen::VectorXd& logits,
                                   const std::vector<bool>& valid) {
  Eigen::VectorXd out = Eigen::VectorXd::Constant(logits.size(), kNegInf);
  double maxv = kNegInf;
  for (int i = 0; i < logits.size(); ++i)
    if (valid[i]) maxv = std::max(maxv, logits[i]);
  if (maxv == kNegInf) throw std::logic_error("no valid entries to normalize");
  double sum = 0.0;
  for (int i = 0; i < logits.size(); ++i)
    if (valid[i]) sum += std::exp(logits[i] - maxv);
  double lse = maxv + std::log(sum);
  for (int i = 0; i < logits.size(); ++i)
    if (valid[i]) out[i] = logits[i] - lse;
  return out;
}

std::vector<bool> member_validity(const ActionGrouping& grouping, int k, int n,
                                  const std::vector<bool>& action_mask) {
  std::vector<bool> valid(n, false);
  const auto& g = grouping.groups[k];
  for (int j = 0; j < static_cast<int>(g.size()); ++j)
    valid[j] = action_mask[g[j]];
  return valid;
}

}  // namespace

PolicyOutput masked_policy(const Eigen::VectorXd& group_logits,
                           const Eigen::VectorXd& member_logits, double value,
                           const ActionGrouping& grouping,
                           const std::vector<bool>& action_mask) {
  const int k = grouping.num_groups();
  const int n = grouping.max_group_size();
  const int d = grouping.dimension();
  if (group_logits.size() != k + 1 || member_logits.size() != k * n)
    throw std::invalid_argument("logit size mismatch");
  if (static_cast<int>(action_mask.size()) != d + 1)
    throw std::invalid_argument("action mask size mismatch");

  PolicyOutput po;
  po.value = value;
  po.member_log_probs = Eigen::MatrixXd::Constant(k, n, kNegInf);
  std::vector<bool> group_valid(k + 1, false);
  group_valid[k] = action_mask[d];
  for (int g = 0; g < k; ++g) {
    std::vector<bool> valid = member_validity(grouping, g, n, action_mask);
    bool any = std::find(valid.begin(), valid.end(), true) != valid.end();
    group_valid[g] = any;
    if (!any) continue;
    Eigen::VectorXd row = member_logits.segment(g * n, n);
    po.member_log_probs.row(g) = masked_log_softmax(row, valid).transpose();
  }
  po.group_log_probs = masked_log_softmax(group_logits, group_valid);
  return po;
}

double action_log_prob(const PolicyOutput& po, const ActionGrouping& grouping,
                       Action action) {
  if (action.is_terminate())
    return po.group_log_probs[grouping.num_groups()];
  auto [k, n] = grouping.encode(action.index);
  return po.group_log_probs[k] + po.member_log_probs(k, n);
}

double policy_entropy(const PolicyOutput& po) {
  const int k = static_cast<int>(po.group_log_probs.size()) - 1;
  double h = 0.0;
  for (int g = 0; g <= k; ++g) {
    double lp = po.group_log_probs[g];
    if (lp == kNegInf) continue;
    double p = std::exp(lp);
    h -= p * lp;
    if (g < k) {
      double hk = 0.0;
      for (int n = 0; n < po.member_log_probs.cols(); ++n) {
        double mlp = po.member_log_probs(g, n);
        if (mlp != kNegInf) hk -= std::exp(mlp) * mlp;
      }
      h += p * hk;
    }
  }
  return h;
}

Action sample_action(const PolicyOutput& po, const ActionGrouping& grouping,
                     SplitRng& rng) {
  const int k = grouping.num_groups();
  double u = rng.uniform();
  int slot = -1;
  double acc = 0.0;
  for (int g = 0; g <= k; ++g) {
    if (po.group_log_probs[g] == kNegInf) continue;
    acc += std::exp(po.group_log_probs[g]);
    slot = g;
    if (u <= acc) break;
  }
  if (slot == k) return Action::terminate();
  double u2 = rng.uniform();
  double acc2 = 0.0;
  int pick = -1;
  for (int n = 0; n < po.member_log_probs.cols(); ++n) {
    if (po.member_log_probs(slot, n) == kNegInf) continue;
    acc2 += std::exp(po.member_log_probs(slot, n));
    pick = n;
    if (u2 <= acc2) break;
  }
  return Action::acquire(grouping.decode(slot, pick));
}

Action argmax_action(const PolicyOutput& po, const ActionGrouping& grouping) {
  const int k = grouping.num_groups();
  Action best = Action::terminate();
  double best_lp = po.group_log_probs[k];
  for (int g = 0; g < k; ++g) {
    if (po.group_log_probs[g] == kNegInf) continue;
    for (int n = 0; n < po.member_log_probs.cols(); ++n) {
      if (po.member_log_probs(g, n) == kNegInf) continue;
      double lp = po.group_log_probs[g] + po.member_log_probs(g, n);
      if (lp > best_lp) {
        best_lp = lp;
        best = Action::acquire(grouping.decode(g, n));
      }
    }
  }
  return best;
}

PolicyNetwork::PolicyNetwork(TaskSpec task, ActionGrouping grouping,
                             int goal_dim, SplitRng init_rng)
    : task_(task), grouping_(std::move(grouping)), goal_dim_(goal_dim) {
  task_.validate();
  grouping_.validate();
  if (grouping_.dimension() != task_.d)
    throw std::invalid_argument("grouping does not cover the task features");
  if (goal_dim_ < 0) throw std::invalid_argument("goal_dim must be >= 0");
  MlpShape shape;
  shape.input = 5 * task_.d + summary_dim() + goal_dim_;
  shape.group_out = grouping_.num_groups() + 1;
  shape.member_out = grouping_.num_groups() * grouping_.max_group_size();
  mlp_ = std::make_shared<Mlp>(shape, init_rng);
}

int PolicyNetwork::summary_dim() const {
  switch (task_.kind) {
    case TaskKind::kClassification: return task_.num_classes;
    case TaskKind::kRegression: return 2;
    case TaskKind::kUnsupervised: return 0;
  }
  throw std::logic_error("unknown task kind");
}

Eigen::VectorXd PolicyNetwork::build_input(
    const PartialInstance& state, const SideInfo& si,
    const Eigen::VectorXd& goal_embedding) const {
  const int d = task_.d;
  if (goal_embedding.size() != goal_dim_)
    throw std::invalid_argument("goal embedding size mismatch");
  Eigen::VectorXd input(mlp_->shape().input);
  input.segment(0, d) = state.values();
  for (int i = 0; i < d; ++i)
    input[d + i] = state.observed().contains(i) ? 1.0 : 0.0;
  input.segment(2 * d, d) = si.imputed_mean;
  input.segment(3 * d, d) = si.imputed_variance;
  input.segment(4 * d, d) = si.expected_info_gain;
  if (si.prediction_summary.size() != summary_dim())
    throw std::invalid_argument("prediction summary size mismatch");
  input.segment(5 * d, summary_dim()) = si.prediction_summary;
  if (goal_dim_ > 0)
    input.segment(5 * d + summary_dim(), goal_dim_) = goal_embedding;
  return input;
}

PolicyOutput PolicyNetwork::forward(const Eigen::VectorXd& input,
                                    const std::vector<bool>& action_mask) const {
  Mlp::Forward fw = mlp_->forward(input);
  return masked_policy(fw.group_logits, fw.member_logits, fw.value, grouping_,
                       action_mask);
}

PolicyOutput PolicyNetwork::forward(const PartialInstance& state,
                                    const SideInfo& si,
                                    const std::vector<bool>& action_mask,
                                    const Eigen::VectorXd& goal_embedding) const {
  return forward(build_input(state, si, goal_embedding), action_mask);
}

void PolicyNetwork::save(std::ostream& out, std::uint64_t config_hash) const {
  out << "afa-agent v1\n";
  out << "config_hash " << config_hash << "\n";
  out << "task " << to_string(task_.kind) << " d " << task_.d << " classes "
      << task_.num_classes << " ordering "
      << (task_.ordering == OrderingConstraint::kChronological ? "chronological"
                                                               : "none")
      << "\n";
  out << "goal_dim " << goal_dim_ << "\n";
  out << "groups " << grouping_.num_groups() << "\n";
  for (const auto& g : grouping_.groups) {
    out << g.size();
    for (int i : g) out << " " << i;
    out << "\n";
  }
  out << "mi ";
  write_vector(out, grouping_.mi_scores.size()
                        ? grouping_.mi_scores
                        : Eigen::VectorXd::Zero(task_.d));
  const MlpShape& s = mlp_->shape();
  out << "mlp " << s.input << " " << s.hidden1 << " " << s.hidden2 << " "
      << s.group_out << " " << s.member_out << "\n";
  out << "params " << mlp_->params().size() << "\n";
  write_vector(out, mlp_->params());
  out << "end\n";
}

void PolicyNetwork::save(const std::string& path,
                         std::uint64_t config_hash) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write checkpoint: " + path);
  save(out, config_hash);
}

std::pair<PolicyNetwork, std::uint64_t> PolicyNetwork::load(std::istream& in) {
  expect_keyword(in, "afa-agent");
  std::string version = expect_token(in);
  if (version != "v1") throw DataError("unsupported agent version " + version);
  expect_keyword(in, "config_hash");
  std::uint64_t hash = std::stoull(expect_token(in));
  expect_keyword(in, "task");
  TaskSpec task;
  task.kind = task_kind_from_string(expect_token(in));
  expect_keyword(in, "d");
  task.d = read_int(in);
  expect_keyword(in, "classes");
  task.num_classes = read_int(in);
  expect_keyword(in, "ordering");
  task.ordering = expect_token(in) == "chronological"
                      ? OrderingConstraint::kChronological
                      : OrderingConstraint::kNone;
  expect_keyword(in, "goal_dim");
  int goal_dim = read_int(in);
  expect_keyword(in, "groups");
  int k = read_int(in);
  ActionGrouping grouping;
  grouping.groups.resize(k);
  for (int g = 0; g < k; ++g) {
    int size = read_int(in);
    grouping.groups[g].resize(size);
    for (int j = 0; j < size; ++j) grouping.groups[g][j] = read_int(in);
  }
  expect_keyword(in, "mi");
  grouping.mi_scores = read_vector(in, task.d);
  expect_keyword(in, "mlp");
  MlpShape shape;
  shape.input = read_int(in);
  shape.hidden1 = read_int(in);
  shape.hidden2 = read_int(in);
  shape.group_out = read_int(in);
  shape.member_out = read_int(in);
  expect_keyword(in, "params");
  int count = read_int(in);
  Eigen::VectorXd params = read_vector(in, count);
  expect_keyword(in, "end");

  SplitRng scratch(0);
  PolicyNetwork net(task, std::move(grouping), goal_dim, scratch);
  if (net.mlp().shape().input != shape.input ||
      net.mlp().params().size() != count)
    throw DataError("checkpoint shape mismatch");
  net.mlp().params() = params;
  return {std::move(net), hash};
}

std::pair<PolicyNetwork, std::uint64_t> PolicyNetwork::load(
    const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open checkpoint: " + path);
  return load(in);
}

double ppo_loss(const Mlp& mlp, const ActionGrouping& grouping,
                const std::vector<BatchSample>& batch, const PpoConfig& config,
                Eigen::VectorXd* grad) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const int k = grouping.num_groups();
  const int n = grouping.max_group_size();
  const double inv_b = 1.0 / batch.size();
  double total_loss = 0.0;

  for (const BatchSample& sample : batch) {
    const Transition& tr = *sample.transition;
    Mlp::Forward fw = mlp.forward(tr.input);
    PolicyOutput po =
        masked_policy(fw.group_logits, fw.member_logits, fw.value, grouping,
                      tr.mask);
    double lp = action_log_prob(po, grouping, tr.action);
    double ratio = std::exp(lp - tr.log_prob);
    double adv = sample.advantage;
    double unclipped = ratio * adv;
    double clipped =
        std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip) * adv;
    double policy_term = -std::min(unclipped, clipped);
    double entropy = policy_entropy(po);
    double value_err = fw.value - sample.value_target;
    double loss = policy_term - config.entropy_coef * entropy +
                  config.value_coef * value_err * value_err;
    total_loss += loss * inv_b;
    if (!grad) continue;

    // d(policy_term)/d lp: ties resolve to the unclipped branch
    double coef = (unclipped <= clipped) ? -ratio * adv : 0.0;

    Eigen::VectorXd d_group = Eigen::VectorXd::Zero(k + 1);
    Eigen::VectorXd d_member = Eigen::VectorXd::Zero(k * n);

    int slot = tr.action.is_terminate() ? k : grouping.encode(tr.action.index).first;
    // member entropies and the p_k H_k sum feed the group-logit gradient
    double h_group = 0.0;
    Eigen::VectorXd member_entropy = Eigen::VectorXd::Zero(k + 1);
    for (int g = 0; g <= k; ++g) {
      double glp = po.group_log_probs[g];
      if (glp == kNegInf) continue;
      h_group -= std::exp(glp) * glp;
      if (g < k) {
        double hk = 0.0;
        for (int j = 0; j < n; ++j) {
          double mlpv = po.member_log_probs(g, j);
          if (mlpv != kNegInf) hk -= std::exp(mlpv) * mlpv;
        }
        member_entropy[g] = hk;
      }
    }
    double mean_member_entropy = 0.0;
    for (int g = 0; g <= k; ++g) {
      if (po.group_log_probs[g] != kNegInf)
        mean_member_entropy +=
            std::exp(po.group_log_probs[g]) * member_entropy[g];
    }

    for (int g = 0; g <= k; ++g) {
      double glp = po.group_log_probs[g];
      if (glp == kNegInf) continue;
      double p = std::exp(glp);
      double d_lp = (g == slot ? 1.0 : 0.0) - p;
      double d_h = -p * (glp + h_group) + p * (member_entropy[g] - mean_member_entropy);
      d_group[g] = (coef * d_lp - config.entropy_coef * d_h) * inv_b;
    }

    if (!tr.action.is_terminate()) {
      auto [gk, gn] = grouping.encode(tr.action.index);
      for (int j = 0; j < n; ++j) {
        double mlpv = po.member_log_probs(gk, j);
        if (mlpv == kNegInf) continue;
        double p = std::exp(mlpv);
        double d_lp = (j == gn ? 1.0 : 0.0) - p;
        d_member[gk * n + j] += coef * d_lp * inv_b;
      }
    }
    // entropy gradient through every valid member row
    for (int g = 0; g < k; ++g) {
      double glp = po.group_log_probs[g];
      if (glp == kNegInf) continue;
      double pk = std::exp(glp);
      for (int j = 0; j < n; ++j) {
        double mlpv = po.member_log_probs(g, j);
        if (mlpv == kNegInf) continue;
        double d_h = -std::exp(mlpv) * (mlpv + member_entropy[g]);
        d_member[g * n + j] +=
            -config.entropy_coef * pk * d_h * inv_b;
      }
    }

    double d_value = 2.0 * config.value_coef * value_err * inv_b;
    mlp.backward(fw, d_group, d_member, d_value, *grad);
  }
  return total_loss;
}

namespace {

struct GoalState {
  Eigen::VectorXd embedding;
  int steps_into_goal = 0;
  bool warm = false;
  int warm_left = 0;
};

}  // namespace

TrainReport train_ppo(AcquisitionEnv& env, const Dataset& train,
                      PolicyNetwork& net, const PpoConfig& config, SplitRng rng,
                      const GoalHooks* goals) {
  if (train.n() == 0) throw std::invalid_argument("empty training set");
  if (goals && net.goal_dim() == 0)
    throw std::invalid_argument("goal hooks need a goal-conditioned network");
  const TaskSpec& task = net.task();
  if (task.d != train.d())
    throw std::invalid_argument("network/dataset dimension mismatch");

  TrainReport report;
  AdamOptimizer adam(static_cast<int>(net.mlp().params().size()),
                     config.learning_rate);
  SplitRng side_rng = rng.split("side-info");
  SplitRng action_rng = rng.split("actions");

  std::vector<int> order(train.n());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // forces a reshuffle on first use
  std::uint64_t pass = 0;

  GoalState goal;
  goal.embedding = Eigen::VectorXd::Zero(net.goal_dim());

  auto next_instance = [&]() {
    if (cursor >= order.size()) {
      std::shuffle(order.begin(), order.end(),
                   rng.split("episodes", pass++).engine());
      cursor = 0;
    }
    return order[cursor++];
  };

  auto begin_goal_segment = [&](const PartialInstance& state) {
    if (!goals) return;
    auto [embedding, potential] = goals->select(state);
    goal.embedding = std::move(embedding);
    env.set_goal_potential(std::move(potential));
    goal.steps_into_goal = 0;
    goal.warm = false;
  };

  auto reset_episode = [&]() {
    int row = next_instance();
    env.reset(train.features.row(row).transpose(), train.targets[row]);
    if (goals) {
      goal.warm_left = goals->warm_start;
      if (goal.warm_left > 0) {
        goal.warm = true;
        goal.embedding = Eigen::VectorXd::Zero(net.goal_dim());
        env.clear_goal_potential();
      } else {
        begin_goal_segment(env.state());
      }
    }
  };

  bool episode_open = false;
  double episode_task = 0.0, episode_total = 0.0;
  double last_task_mean = 0.0, last_total_mean = 0.0;

  for (int update = 0; update < config.updates; ++update) {
    std::vector<Transition> buffer;
    buffer.reserve(config.rollout_steps);
    std::vector<double> finished_task, finished_total;

    while (static_cast<int>(buffer.size()) < config.rollout_steps) {
      if (!episode_open) {
        reset_episode();
        episode_open = true;
        episode_task = episode_total = 0.0;
      }
      SideInfo si = side_info(env.surrogate(), env.state(),
                              env.config().side_info_samples, side_rng,
                              env.config().exact_side_info_moments);
      Transition tr;
      tr.input = net.build_input(env.state(), si, goal.embedding);
      tr.mask = env.valid_action_mask();
      PolicyOutput po = net.forward(tr.input, tr.mask);
      tr.action = sample_action(po, net.grouping(), action_rng);
      tr.log_prob = action_log_prob(po, net.grouping(), tr.action);
      tr.value = po.value;
      const Action act = tr.action;
      StepOutcome outcome = env.step(act);
      tr.reward = outcome.reward.total();
      tr.done = outcome.done;
      episode_task += outcome.reward.cost + outcome.reward.prediction;
      episode_total += outcome.reward.total();
      buffer.push_back(std::move(tr));

      if (outcome.done) {
        finished_task.push_back(episode_task);
        finished_total.push_back(episode_total);
        episode_open = false;
      } else if (goals && !act.is_terminate()) {
        if (goal.warm) {
          if (--goal.warm_left <= 0) begin_goal_segment(env.state());
        } else if (++goal.steps_into_goal >= goals->period) {
          begin_goal_segment(env.state());
        }
      }
    }

    // bootstrap value for a rollout cut mid-episode
    double bootstrap = 0.0;
    if (episode_open) {
      SideInfo si = side_info(env.surrogate(), env.state(),
                              env.config().side_info_samples, side_rng,
                              env.config().exact_side_info_moments);
      Eigen::VectorXd input = net.build_input(env.state(), si, goal.embedding);
      bootstrap = net.forward(input, env.valid_action_mask()).value;
    }

    const double gamma = env.config().gamma;
    const int steps = static_cast<int>(buffer.size());
    std::vector<double> advantages(steps), targets(steps);
    double gae = 0.0;
    for (int t = steps - 1; t >= 0; --t) {
      double next_value = (t + 1 < steps)
                              ? (buffer[t].done ? 0.0 : buffer[t + 1].value)
                              : (buffer[t].done ? 0.0 : bootstrap);
      double not_done = buffer[t].done ? 0.0 : 1.0;
      double delta = buffer[t].reward + gamma * next_value - buffer[t].value;
      gae = delta + gamma * config.gae_lambda * not_done * gae;
      advantages[t] = gae;
      targets[t] = gae + buffer[t].value;
    }
    if (config.normalize_advantages && steps > 1) {
      double mean = std::accumulate(advantages.begin(), advantages.end(), 0.0) /
                    steps;
      double var = 0.0;
      for (double a : advantages) var += (a - mean) * (a - mean);
      double sd = std::sqrt(var / steps) + 1e-8;
      for (double& a : advantages) a = (a - mean) / sd;
    }

    std::vector<int> idx(steps);
    std::iota(idx.begin(), idx.end(), 0);
    Eigen::VectorXd grad(net.mlp().params().size());
    double upd_policy = 0.0, upd_value = 0.0, upd_entropy = 0.0;
    int minibatches = 0;
    for (int epoch = 0; epoch < config.epochs; ++epoch) {
      std::shuffle(idx.begin(), idx.end(),
                   rng.split("minibatch",
                             static_cast<std::uint64_t>(update) * config.epochs +
                                 epoch)
                       .engine());
      for (int at = 0; at < steps; at += config.minibatch_size) {
        int end = std::min(at + config.minibatch_size, steps);
        std::vector<BatchSample> batch;
        batch.reserve(end - at);
        for (int j = at; j < end; ++j) {
          batch.push_back(
              BatchSample{&buffer[idx[j]], advantages[idx[j]], targets[idx[j]]});
        }
        grad.setZero();
        double loss = ppo_loss(net.mlp(), net.grouping(), batch, config, &grad);
        if (!std::isfinite(loss) || !grad.allFinite()) {
          std::ostringstream msg;
          msg << "non-finite PPO loss at update " << update << " (loss="
              << loss << ", |grad|=" << grad.norm() << ")";
          throw NumericError(msg.str());
        }
        adam.step(net.mlp().params(), grad);
        ++minibatches;
      }
    }

    // diagnostics on the final parameters over the whole buffer
    {
      std::vector<BatchSample> all;
      all.reserve(steps);
      for (int j = 0; j < steps; ++j)
        all.push_back(BatchSample{&buffer[j], advantages[j], targets[j]});
      double policy_term = 0.0, value_term = 0.0, entropy_term = 0.0;
      for (const auto& sample : all) {
        PolicyOutput po = net.forward(sample.transition->input,
                                      sample.transition->mask);
        double lp = action_log_prob(po, net.grouping(), sample.transition->action);
        double ratio = std::exp(lp - sample.transition->log_prob);
        double clipped =
            std::clamp(ratio, 1.0 - config.clip, 1.0 + config.clip);
        policy_term += -std::min(ratio * sample.advantage,
                                 clipped * sample.advantage);
        double err = po.value - sample.value_target;
        value_term += err * err;
        entropy_term += policy_entropy(po);
      }
      upd_policy = policy_term / steps;
      upd_value = value_term / steps;
      upd_entropy = entropy_term / steps;
    }

    if (!finished_task.empty()) {
      last_task_mean =
          std::accumulate(finished_task.begin(), finished_task.end(), 0.0) /
          finished_task.size();
      last_total_mean =
          std::accumulate(finished_total.begin(), finished_total.end(), 0.0) /
          finished_total.size();
    }
    report.task_return.push_back(last_task_mean);
    report.total_return.push_back(last_total_mean);
    report.policy_loss.push_back(upd_policy);
    report.value_loss.push_back(upd_value);
    report.entropy.push_back(upd_entropy);
  }

  // moving window average
  const int window = std::max(1, config.smoothing_window);
  for (std::size_t t = 0; t < report.task_return.size(); ++t) {
    int from = std::max<int>(0, static_cast<int>(t) - window + 1);
    double acc = 0.0;
    for (int j = from; j <= static_cast<int>(t); ++j)
      acc += report.task_return[j];
    report.smoothed_task_return.push_back(acc / (t - from + 1));
  }
  return report;
}

void write_training_log(const std::string& path, const TrainReport& report) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write training log: " + path);
  out << "update,task_return,smoothed_task_return,total_return,policy_loss,"
         "value_loss,entropy\n";
  out.precision(17);
  for (std::size_t t = 0; t < report.task_return.size(); ++t) {
    out << t << "," << report.task_return[t] << ","
        << report.smoothed_task_return[t] << "," << report.total_return[t]
        << "," << report.policy_loss[t] << "," << report.value_loss[t] << ","
        << report.entropy[t] << "\n";
  }
}

}  // namespace afa
