#include "afa/explain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <memory>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "afa/greedy.hpp"
#include "afa/io.hpp"

namespace afa {

using nlohmann::json;

ClusteringModel ClusteringModel::fit(const Eigen::MatrixXd& rows,
                                     int num_clusters, SplitRng rng,
                                     const FitConfig& config) {
  return ClusteringModel(
      fit_mixture_em(rows, num_clusters, rng.split("clustering"), config));
}

Eigen::VectorXd ClusteringModel::posterior(const Eigen::VectorXd& x) const {
  Eigen::VectorXd logits(mixture_.num_components());
  for (int z = 0; z < mixture_.num_components(); ++z)
    logits[z] = mixture_.component_log_density(z, x);
  return (logits.array() - log_sum_exp(logits)).exp();
}

void ClusteringModel::save(std::ostream& out) const {
  out << "afa-clustering v1\n";
  out << "components " << mixture_.num_components() << " dim "
      << mixture_.dimension() << "\n";
  for (const auto& c : mixture_.components()) {
    out << "log_weight " << hex_double(c.log_weight) << "\n";
    out << "mean ";
    write_vector(out, c.mean);
    out << "cov\n";
    write_matrix(out, c.covariance);
  }
  out << "end\n";
}

void ClusteringModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write clustering file: " + path);
  save(out);
}

ClusteringModel ClusteringModel::load(std::istream& in) {
  expect_keyword(in, "afa-clustering");
  std::string version = expect_token(in);
  if (version != "v1")
    throw DataError("unsupported clustering version " + version);
  expect_keyword(in, "components");
  int k = read_int(in);
  expect_keyword(in, "dim");
  int d = read_int(in);
  std::vector<GaussianComponent> comps(k);
  for (int c = 0; c < k; ++c) {
    expect_keyword(in, "log_weight");
    comps[c].log_weight = parse_hex_double(expect_token(in));
    expect_keyword(in, "mean");
    comps[c].mean = read_vector(in, d);
    expect_keyword(in, "cov");
    comps[c].covariance = read_matrix(in, d, d);
  }
  expect_keyword(in, "end");
  return ClusteringModel(Mixture(std::move(comps)));
}

ClusteringModel ClusteringModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open clustering file: " + path);
  return load(in);
}

SubGoal select_subgoal(const Eigen::VectorXd& posterior, SubGoalKind kind,
                       int num_members) {
  if (num_members < 2) throw std::invalid_argument("sub-goal needs >= 2 members");
  if (posterior.size() < num_members)
    throw std::invalid_argument("fewer categories than requested members");
  std::vector<int> order(posterior.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    if (posterior[a] != posterior[b]) return posterior[a] > posterior[b];
    return a < b;
  });
  SubGoal goal;
  goal.kind = kind;
  goal.members.assign(order.begin(), order.begin() + num_members);
  goal.posterior_snapshot = posterior;
  return goal;
}

Eigen::VectorXd cluster_posterior(const MixtureSurrogate& surrogate,
                                  const ClusteringModel& clustering,
                                  const PartialInstance& x_o,
                                  int num_imputations, SplitRng& rng) {
  if (num_imputations < 1)
    throw std::invalid_argument("need at least one imputation");
  if (clustering.dimension() != x_o.dimension())
    throw std::invalid_argument("clustering dimension mismatch");
  if (x_o.observed().size() == x_o.dimension())
    return clustering.posterior(x_o.values());

  const std::vector<int> u = x_o.unobserved().indices();
  Eigen::MatrixXd draws = surrogate.sample_conditional(x_o, num_imputations, rng);
  Eigen::VectorXd acc = Eigen::VectorXd::Zero(clustering.num_clusters());
  Eigen::VectorXd full = x_o.values();
  for (int s = 0; s < num_imputations; ++s) {
    for (std::size_t k = 0; k < u.size(); ++k) full[u[k]] = draws(s, k);
    acc += clustering.posterior(full);
  }
  acc /= num_imputations;
  return acc / acc.sum();
}

Eigen::VectorXd collapse_posterior(const Eigen::VectorXd& posterior,
                                   const std::vector<int>& members) {
  Eigen::VectorXd out(members.size() + 1);
  double selected = 0.0;
  for (std::size_t k = 0; k < members.size(); ++k) {
    out[k] = posterior[members[k]];
    selected += out[k];
  }
  out[members.size()] = std::max(1.0 - selected, 0.0);
  return out;
}

double collapsed_entropy(const Eigen::VectorXd& posterior,
                         const std::vector<int>& members) {
  Eigen::VectorXd collapsed = collapse_posterior(posterior, members);
  double h = 0.0;
  for (int i = 0; i < collapsed.size(); ++i) {
    if (collapsed[i] > 0.0) h -= collapsed[i] * std::log(collapsed[i]);
  }
  return h;
}

double goal_reward(const Eigen::VectorXd& posterior_before,
                   const Eigen::VectorXd& posterior_after,
                   const SubGoal& subgoal, double gamma) {
  return collapsed_entropy(posterior_before, subgoal.members) -
         gamma * collapsed_entropy(posterior_after, subgoal.members);
}

Eigen::VectorXd goal_embedding(const SubGoal& subgoal, int embedding_dim) {
  Eigen::VectorXd out = Eigen::VectorXd::Zero(embedding_dim);
  for (int m : subgoal.members) {
    if (m >= embedding_dim)
      throw std::invalid_argument("goal member exceeds embedding size");
    out[m] = 1.0;
  }
  return out;
}

GoalHooks make_goal_hooks(const MixtureSurrogate& surrogate,
                          const ClusteringModel* clustering,
                          const GoalEpisodeConfig& config, SplitRng rng) {
  if (config.kind == SubGoalKind::kClusterSet && clustering == nullptr)
    throw std::invalid_argument("cluster sub-goals need a clustering model");
  if (config.kind == SubGoalKind::kClassPair &&
      surrogate.task().kind != TaskKind::kClassification)
    throw std::invalid_argument("class-pair sub-goals need classification");

  const int dim = config.kind == SubGoalKind::kClassPair
                      ? surrogate.task().num_classes
                      : clustering->num_clusters();
  const int members =
      config.kind == SubGoalKind::kClassPair ? 2 : config.num_members;
  auto shared_rng = std::make_shared<SplitRng>(rng.split("goal-hooks"));

  GoalHooks hooks;
  hooks.period = config.period;
  hooks.warm_start = config.warm_start;
  hooks.select = [&surrogate, clustering, config, dim, members, shared_rng](
                     const PartialInstance& state) {
    Eigen::VectorXd posterior =
        config.kind == SubGoalKind::kClassPair
            ? Eigen::VectorXd(surrogate.class_posterior(state).array().exp())
            : cluster_posterior(surrogate, *clustering, state,
                                config.num_imputations, *shared_rng);
    SubGoal goal = select_subgoal(posterior, config.kind, members);
    Eigen::VectorXd embedding = goal_embedding(goal, dim);
    std::vector<int> goal_members = goal.members;
    auto potential = [&surrogate, clustering, config, goal_members,
                      shared_rng](const PartialInstance& s) {
      Eigen::VectorXd p =
          config.kind == SubGoalKind::kClassPair
              ? Eigen::VectorXd(surrogate.class_posterior(s).array().exp())
              : cluster_posterior(surrogate, *clustering, s,
                                  config.num_imputations, *shared_rng);
      return collapsed_entropy(p, goal_members);
    };
    return std::make_pair(std::move(embedding),
                          std::function<double(const PartialInstance&)>(potential));
  };
  return hooks;
}

GoalEpisode run_goal_episode(const PolicyNetwork& net, AcquisitionEnv& env,
                             const ClusteringModel* clustering,
                             const GoalEpisodeConfig& config,
                             const Eigen::VectorXd& instance, Target target,
                             SplitRng rng, bool deterministic) {
  const MixtureSurrogate& surrogate = env.surrogate();
  const int dim = config.kind == SubGoalKind::kClassPair
                      ? surrogate.task().num_classes
                      : clustering->num_clusters();
  if (net.goal_dim() != dim)
    throw std::invalid_argument("network goal embedding size mismatch");
  const int members =
      config.kind == SubGoalKind::kClassPair ? 2 : config.num_members;

  SplitRng posterior_rng = rng.split("posteriors");
  SplitRng side_rng = rng.split("side-info");
  SplitRng action_rng = rng.split("actions");

  auto posterior_now = [&]() {
    return config.kind == SubGoalKind::kClassPair
               ? Eigen::VectorXd(
                     surrogate.class_posterior(env.state()).array().exp())
               : cluster_posterior(surrogate, *clustering, env.state(),
                                   config.num_imputations, posterior_rng);
  };

  GoalEpisode episode;
  env.reset(instance, target);
  env.clear_goal_potential();

  auto act_once = [&](const Eigen::VectorXd& embedding) -> Action {
    SideInfo si = side_info(surrogate, env.state(),
                            env.config().side_info_samples, side_rng,
                            env.config().exact_side_info_moments);
    PolicyOutput po = net.forward(env.state(), si, env.valid_action_mask(),
                                  embedding);
    Action a = deterministic ? argmax_action(po, net.grouping())
                             : sample_action(po, net.grouping(), action_rng);
    StepOutcome outcome = env.step(a);
    TraceStep step;
    step.action = a;
    if (!a.is_terminate()) step.value = outcome.next_state.values()[a.index];
    step.reward = outcome.reward;
    episode.trace.steps.push_back(std::move(step));
    return a;
  };

  // warm start: unconditioned acquisitions with a null goal
  if (config.warm_start > 0 && !env.done()) {
    GoalSegment warm;
    Eigen::VectorXd before = posterior_now();
    Eigen::VectorXd zero_goal = Eigen::VectorXd::Zero(dim);
    for (int t = 0; t < config.warm_start && !env.done(); ++t) {
      Action a = act_once(zero_goal);
      if (!a.is_terminate()) warm.acquired.push_back(a.index);
    }
    Eigen::VectorXd after = posterior_now();
    warm.entropy_before = categorical_entropy(before.array().max(1e-300).log());
    warm.entropy_after = categorical_entropy(after.array().max(1e-300).log());
    episode.segments.push_back(std::move(warm));
  }

  auto features_remaining = [&]() {
    std::vector<bool> mask = env.valid_action_mask();
    for (std::size_t i = 0; i + 1 < mask.size(); ++i)
      if (mask[i]) return true;
    return false;
  };

  while (!env.done()) {
    if (!features_remaining()) {
      // nothing left to acquire; close the episode without a new goal
      act_once(Eigen::VectorXd::Zero(dim));
      break;
    }
    Eigen::VectorXd posterior = posterior_now();
    SubGoal goal = select_subgoal(posterior, config.kind, members);
    Eigen::VectorXd embedding = goal_embedding(goal, dim);
    std::vector<int> goal_members = goal.members;

    GoalSegment segment;
    segment.subgoal = goal;
    segment.collapsed_before = collapse_posterior(posterior, goal_members);
    segment.entropy_before = collapsed_entropy(posterior, goal_members);

    // potential over the collapsed sub-goal; the env caches values so the
    // telescoped goal rewards match the segment endpoints exactly
    Eigen::VectorXd last_posterior = posterior;
    env.set_goal_potential([&surrogate, clustering, &config, goal_members,
                            &posterior_rng, &last_posterior](
                               const PartialInstance& s) {
      Eigen::VectorXd p =
          config.kind == SubGoalKind::kClassPair
              ? Eigen::VectorXd(surrogate.class_posterior(s).array().exp())
              : cluster_posterior(surrogate, *clustering, s,
                                  config.num_imputations, posterior_rng);
      last_posterior = p;
      return collapsed_entropy(p, goal_members);
    });

    for (int t = 0; t < config.period && !env.done(); ++t) {
      Action a = act_once(embedding);
      if (!a.is_terminate()) segment.acquired.push_back(a.index);
    }
    segment.collapsed_after = collapse_posterior(last_posterior, goal_members);
    segment.entropy_after = collapsed_entropy(last_posterior, goal_members);
    episode.segments.push_back(std::move(segment));
  }
  env.clear_goal_potential();

  episode.trace.final_observed = env.state().observed();
  episode.trace.final_prediction = predict(surrogate, env.state());
  episode.trace.validate(surrogate.task());
  return episode;
}

std::string render_goal_episode(const GoalEpisode& episode,
                                const std::vector<std::string>& feature_names) {
  auto name = [&](int i) {
    return feature_names.empty() ? "f" + std::to_string(i) : feature_names[i];
  };
  std::ostringstream out;
  for (std::size_t s = 0; s < episode.segments.size(); ++s) {
    const GoalSegment& seg = episode.segments[s];
    out << "segment " << s << ": acquired {";
    for (std::size_t k = 0; k < seg.acquired.size(); ++k) {
      if (k) out << ", ";
      out << name(seg.acquired[k]);
    }
    out << "}";
    if (seg.subgoal.members.empty()) {
      out << " without a goal (warm start)";
    } else {
      out << " to disambiguate {";
      for (std::size_t k = 0; k < seg.subgoal.members.size(); ++k) {
        if (k) out << ", ";
        out << seg.subgoal.members[k];
      }
      out << "}";
    }
    out.precision(4);
    out << " (entropy " << seg.entropy_before << " -> " << seg.entropy_after
        << ")\n";
  }
  return out.str();
}

std::string goal_episode_jsonl(const GoalEpisode& episode) {
  std::ostringstream out;
  for (std::size_t s = 0; s < episode.segments.size(); ++s) {
    const GoalSegment& seg = episode.segments[s];
    json j;
    j["segment"] = s;
    j["goal"] = seg.subgoal.members;
    j["acquired"] = seg.acquired;
    auto vec = [](const Eigen::VectorXd& v) {
      return std::vector<double>(v.data(), v.data() + v.size());
    };
    j["posterior_before"] = vec(seg.collapsed_before);
    j["posterior_after"] = vec(seg.collapsed_after);
    j["entropy_before"] = seg.entropy_before;
    j["entropy_after"] = seg.entropy_after;
    out << j.dump() << "\n";
  }
  return out.str();
}

}  // namespace afa
