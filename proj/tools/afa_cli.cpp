// afa: fit surrogates, train acquisition agents, run and inspect
// acquisitions, and drive a live terminal session.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>

#include "afa/agent.hpp"
#include "afa/eval.hpp"
#include "afa/explain.hpp"
#include "afa/io.hpp"
#include "afa/mixture.hpp"
#include "afa/ood.hpp"

using namespace afa;

namespace {

constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitNumeric = 3;

Dataset load_standardized(const std::string& path, TaskKind kind,
                          const StandardizationParams* params,
                          StandardizationParams* fitted) {
  RawDataset raw = read_csv(path, kind);
  TaskSpec task;
  task.kind = kind;
  task.d = static_cast<int>(raw.features.cols());
  if (kind == TaskKind::kClassification) {
    int max_label = 0;
    for (const Target& t : raw.targets) max_label = std::max(max_label, t.label());
    task.num_classes = max_label + 1;
  }
  if (params != nullptr) {
    // reuse the training-time transform
    Dataset data;
    data.task = task;
    data.feature_names = raw.feature_names;
    data.targets = std::move(raw.targets);
    data.features.resize(raw.features.rows(), raw.features.cols());
    for (int r = 0; r < raw.features.rows(); ++r)
      data.features.row(r) =
          params->apply(raw.features.row(r).transpose()).transpose();
    data.validate();
    return data;
  }
  auto [data, p] = standardize_dataset(raw.features, std::move(raw.targets),
                                       task, raw.feature_names);
  if (fitted) *fitted = p;
  return data;
}

std::uint64_t hash_args(const std::vector<std::string>& parts) {
  std::string joined;
  for (const auto& p : parts) {
    joined += p;
    joined += '\n';
  }
  return fnv1a_hash(joined);
}

struct EnvOptions {
  double alpha = 0.01;
  double gamma = 0.99;
  bool shaping = true;
  bool weighted_loss = false;
  double ood_reward_weight = 1.0;
  int side_info_samples = 64;

  void attach(CLI::App* cmd) {
    cmd->add_option("--alpha", alpha, "acquisition cost trade-off");
    cmd->add_option("--gamma", gamma, "discount factor");
    cmd->add_flag("--shaping,!--no-shaping", shaping,
                  "intermediate information-gain rewards");
    cmd->add_flag("--weighted-loss", weighted_loss,
                  "inverse-frequency class weights in the terminal loss");
    cmd->add_option("--ood-reward-weight", ood_reward_weight,
                    "scale of the terminal OOD reward");
    cmd->add_option("--side-info-samples", side_info_samples,
                    "Monte Carlo draws for side information");
  }

  EnvConfig to_config() const {
    EnvConfig config;
    config.alpha = alpha;
    config.gamma = gamma;
    config.shaping = shaping;
    config.class_weighted_loss = weighted_loss;
    config.ood_reward_weight = ood_reward_weight;
    config.side_info_samples = side_info_samples;
    return config;
  }
};

int cap_budget(int budget, int d) {
  if (budget > d) {
    std::cerr << "afa: warning: budget " << budget << " exceeds " << d
              << " features, capping\n";
    return d;
  }
  return budget;
}

// ------------------------------ fit-surrogate ------------------------------

int run_fit_surrogate(const std::string& data_path, const std::string& task_name,
                      int components, std::uint64_t seed,
                      const std::string& out_path, double heldout_fraction) {
  TaskKind kind = task_kind_from_string(task_name);
  StandardizationParams params;
  Dataset data = load_standardized(data_path, kind, nullptr, &params);

  SplitRng rng(seed);
  Dataset train = data, heldout;
  if (heldout_fraction > 0.0 && data.n() >= 10) {
    SplitRng split_rng = rng.split("heldout-split");
    auto [hold, rest] = data.split(heldout_fraction, split_rng);
    heldout = std::move(hold);
    train = std::move(rest);
  }

  FitReport report;
  MixtureSurrogate model =
      MixtureSurrogate::fit_em(train, components, rng.split("em"), FitConfig{},
                               &report)
          .with_standardization(params);
  model.save(out_path);

  std::cout << "fitted " << to_string(kind) << " surrogate on " << train.n()
            << " rows (d=" << train.d() << ", components=" << components
            << ", seed=" << seed << ")\n";
  std::cout << "em iterations: " << report.iterations << "\n";
  if (!report.log_likelihood.empty())
    std::cout << "final train log-likelihood per row: "
              << report.log_likelihood.back() << "\n";
  if (heldout.n() > 0) {
    SplitRng mask_rng = rng.split("heldout-masks");
    std::cout << "held-out masked objective (" << heldout.n()
              << " rows): " << model.heldout_masked_objective(heldout, mask_rng)
              << "\n";
  }
  std::cout << "model written to " << out_path << "\n";
  return 0;
}

// ------------------------------ fit-clusters ------------------------------

int run_fit_clusters(const std::string& data_path, const std::string& model_path,
                     int clusters, std::uint64_t seed,
                     const std::string& out_path) {
  MixtureSurrogate model = MixtureSurrogate::load(model_path);
  Dataset data = load_standardized(data_path, model.task().kind,
                                   &model.standardization(), nullptr);
  ClusteringModel clustering =
      ClusteringModel::fit(data.features, clusters, SplitRng(seed));
  clustering.save(out_path);
  std::cout << "fitted " << clusters << " clusters on " << data.n()
            << " fully observed rows (seed=" << seed << ")\n";
  std::cout << "clustering written to " << out_path << "\n";
  return 0;
}

// -------------------------------- fit-ood ---------------------------------

int run_fit_ood(const std::string& model_path, const std::string& data_path,
                const std::string& out_path, int levels, double sigma_high,
                double sigma_low, std::uint64_t seed) {
  MixtureSurrogate model = MixtureSurrogate::load(model_path);
  Dataset data = load_standardized(data_path, model.task().kind,
                                   &model.standardization(), nullptr);
  NoiseSchedule schedule =
      NoiseSchedule::geometric(sigma_high, sigma_low, levels);
  ScoreStatsModel dose = fit_dose(model, data, schedule,
                                  default_nonempty_mask_sampler(), SplitRng(seed));
  dose.save(out_path);
  std::cout << "fitted density of states over " << levels << " noise levels on "
            << data.n() << " rows (seed=" << seed << ")\n";
  std::cout << "model written to " << out_path << "\n";
  return 0;
}

// ------------------------------- train-agent -------------------------------

int run_train_agent(const std::string& model_path, const std::string& data_path,
                    const std::string& out_path, const std::string& log_path,
                    int groups, const std::string& grouping_scheme,
                    std::optional<int> budget, bool allow_terminate,
                    const EnvOptions& env_options, PpoConfig ppo,
                    const std::string& ood_model_path, bool ood_reward_flag,
                    const std::string& goal_kind,
                    const std::string& clusters_path, int goal_members,
                    int goal_period, int goal_warm_start, int goal_imputations,
                    std::uint64_t seed, const std::vector<std::string>& argv) {
  auto surrogate =
      std::make_shared<const MixtureSurrogate>(MixtureSurrogate::load(model_path));
  Dataset data = load_standardized(data_path, surrogate->task().kind,
                                   &surrogate->standardization(), nullptr);

  SplitRng rng(seed);
  SplitRng grouping_rng = rng.split("grouping");
  ActionGrouping grouping;
  if (grouping_scheme == "mi") {
    grouping = group_features(*surrogate, data, groups,
                              std::min(data.n(), 512), grouping_rng);
  } else if (grouping_scheme == "random") {
    grouping = group_features_random(data.d(), groups, grouping_rng);
  } else if (grouping_scheme == "contiguous") {
    grouping = group_features_contiguous(data.d(), groups);
  } else if (grouping_scheme == "spectral") {
    grouping = group_features_spectral(data, groups);
  } else {
    throw CLI::ValidationError("--grouping", "unknown scheme " + grouping_scheme);
  }

  EnvConfig env_config = env_options.to_config();
  env_config.allow_terminate = allow_terminate;
  if (budget) env_config.hard_budget = cap_budget(*budget, data.d());
  if (!allow_terminate && !budget)
    throw CLI::ValidationError("--budget",
                               "required unless --allow-terminate is set");

  std::shared_ptr<const ScoreStatsModel> dose;
  if (!ood_model_path.empty())
    dose = std::make_shared<const ScoreStatsModel>(
        ScoreStatsModel::load(ood_model_path));
  env_config.ood_reward = ood_reward_flag;
  if (env_config.ood_reward && !dose)
    throw CLI::ValidationError("--ood-reward", "needs --ood-model");

  std::unique_ptr<ClusteringModel> clustering;
  GoalEpisodeConfig goal_config;
  std::optional<GoalHooks> hooks;
  int goal_dim = 0;
  if (!goal_kind.empty()) {
    goal_config.kind = goal_kind == "cluster-set" ? SubGoalKind::kClusterSet
                                                  : SubGoalKind::kClassPair;
    goal_config.num_members = goal_members;
    goal_config.period = goal_period;
    goal_config.warm_start = goal_warm_start;
    goal_config.num_imputations = goal_imputations;
    if (goal_config.kind == SubGoalKind::kClusterSet) {
      if (clusters_path.empty())
        throw CLI::ValidationError("--goal-kind",
                                   "cluster-set needs --clusters-model");
      clustering = std::make_unique<ClusteringModel>(
          ClusteringModel::load(clusters_path));
      goal_dim = clustering->num_clusters();
    } else {
      goal_dim = surrogate->task().num_classes;
    }
    env_config.goal_reward = true;
    hooks = make_goal_hooks(*surrogate, clustering.get(), goal_config,
                            rng.split("goal-hooks"));
  }

  AcquisitionEnv env(surrogate, CostModel::uniform(data.d(), env_config.alpha),
                     env_config, dose);
  if (env_config.class_weighted_loss)
    env.set_class_weights(inverse_frequency_weights(data));

  SplitRng init_rng = rng.split("network-init");
  PolicyNetwork net(surrogate->task(), grouping, goal_dim, init_rng);
  TrainReport report = train_ppo(env, data, net, ppo, rng.split("ppo"),
                                 hooks ? &*hooks : nullptr);

  net.save(out_path, hash_args(argv));
  if (!log_path.empty()) write_training_log(log_path, report);
  std::cout << "trained agent for " << ppo.updates << " updates (seed=" << seed
            << ")\n";
  if (!report.task_return.empty())
    std::cout << "final mean task return: " << report.task_return.back()
              << "\n";
  std::cout << "checkpoint written to " << out_path << "\n";
  return 0;
}

// --------------------------------- acquire ---------------------------------

int run_acquire(const std::string& model_path, const std::string& policy_name,
                int budget, const std::string& data_path,
                const std::string& out_path, const std::string& metrics_path,
                const std::string& agent_path, const std::string& ood_path,
                const EnvOptions& env_options, int cmi_samples,
                std::uint64_t seed) {
  auto surrogate =
      std::make_shared<const MixtureSurrogate>(MixtureSurrogate::load(model_path));
  Dataset data = load_standardized(data_path, surrogate->task().kind,
                                   &surrogate->standardization(), nullptr);
  budget = cap_budget(budget, data.d());

  EnvConfig env_config = env_options.to_config();
  env_config.hard_budget = budget;
  env_config.allow_terminate = false;

  std::shared_ptr<const ScoreStatsModel> dose;
  if (!ood_path.empty())
    dose = std::make_shared<const ScoreStatsModel>(
        ScoreStatsModel::load(ood_path));

  std::unique_ptr<AcquisitionPolicy> policy;
  std::shared_ptr<const PolicyNetwork> net;
  if (policy_name == "greedy") {
    policy = std::make_unique<GreedyCmiPolicy>(cmi_samples);
  } else if (policy_name == "random") {
    policy = std::make_unique<RandomPolicy>();
  } else if (policy_name == "agent") {
    if (agent_path.empty())
      throw CLI::ValidationError("--policy", "agent policy needs --agent");
    net = std::make_shared<const PolicyNetwork>(
        PolicyNetwork::load(agent_path).first);
    if (net->task().d != data.d())
      throw DataError("agent checkpoint dimension mismatch");
    policy = std::make_unique<AgentPolicy>(net);
  } else if (policy_name == "static") {
    SplitRng order_rng(seed);
    std::vector<int> order =
        static_order(*surrogate, data, std::max(16, cmi_samples / 4),
                     order_rng.split("static-order"));
    std::cout << "static order:";
    for (int i : order) std::cout << " " << i;
    std::cout << "\n";
    policy = std::make_unique<StaticOrderPolicy>(order);
  } else {
    throw CLI::ValidationError("--policy", "unknown policy " + policy_name);
  }

  std::ofstream traces;
  if (!out_path.empty()) {
    traces.open(out_path);
    if (!traces) throw DataError("cannot write traces: " + out_path);
  }
  std::ofstream metrics;
  if (!metrics_path.empty()) {
    metrics.open(metrics_path);
    if (!metrics) throw DataError("cannot write metrics: " + metrics_path);
    metrics << "instance,acquired,metric,return_total,ood_score,label\n";
    metrics.precision(17);
  }

  SplitRng rng(seed);
  AcquisitionEnv env(surrogate, CostModel::uniform(data.d(), env_config.alpha),
                     env_config, dose);
  if (env_config.class_weighted_loss &&
      surrogate->task().kind == TaskKind::kClassification)
    env.set_class_weights(inverse_frequency_weights(data));

  double metric_acc = 0.0;
  for (int r = 0; r < data.n(); ++r) {
    SplitRng episode_rng = rng.split("instance", r);
    AcquisitionTrace trace =
        run_episode(env, data.features.row(r).transpose(), data.targets[r],
                    *policy, episode_rng);
    if (traces.is_open()) traces << trace.to_jsonl();

    double metric = 0.0;
    switch (surrogate->task().kind) {
      case TaskKind::kClassification:
        metric = trace.final_prediction.argmax_class() ==
                         data.targets[r].label()
                     ? 1.0
                     : 0.0;
        break;
      case TaskKind::kRegression: {
        double err = trace.final_prediction.mean - data.targets[r].scalar();
        metric = err * err;
        break;
      }
      case TaskKind::kUnsupervised: {
        FeatureIndexSet u = trace.final_observed.complement(data.d());
        double acc = 0.0;
        for (int i : u) {
          double err = trace.final_prediction.imputed[i] - data.features(r, i);
          acc += err * err;
        }
        metric = u.empty() ? 0.0 : acc / u.size();
        break;
      }
    }
    metric_acc += metric;
    if (metrics.is_open()) {
      double score = 0.0;
      if (dose) {
        PartialInstance final_state = PartialInstance::from(
            data.features.row(r).transpose(), trace.final_observed);
        score = ood_score(*dose, *surrogate, final_state);
      }
      metrics << r << "," << trace.acquired_indices().size() << "," << metric
              << "," << trace.total_reward().total() << "," << score << ",";
      if (surrogate->task().kind == TaskKind::kClassification)
        metrics << data.targets[r].label();
      metrics << "\n";
    }
  }

  const char* metric_name =
      surrogate->task().kind == TaskKind::kClassification
          ? "accuracy"
          : "mean squared error";
  std::cout << "policy=" << policy_name << " budget=" << budget
            << " instances=" << data.n() << " seed=" << seed << "\n";
  std::cout << metric_name << ": " << metric_acc / data.n() << "\n";
  return 0;
}

// --------------------------------- explain ---------------------------------

int run_explain(const std::string& model_path, const std::string& agent_path,
                const std::string& data_path, const std::string& goal_kind,
                const std::string& clusters_path, int members, int period,
                int warm_start, int imputations, int budget,
                const std::string& out_path, const std::string& text_path,
                const EnvOptions& env_options, std::uint64_t seed) {
  auto surrogate =
      std::make_shared<const MixtureSurrogate>(MixtureSurrogate::load(model_path));
  Dataset data = load_standardized(data_path, surrogate->task().kind,
                                   &surrogate->standardization(), nullptr);
  auto [net, hash] = PolicyNetwork::load(agent_path);
  (void)hash;

  GoalEpisodeConfig config;
  config.kind = goal_kind == "cluster-set" ? SubGoalKind::kClusterSet
                                           : SubGoalKind::kClassPair;
  config.num_members = members;
  config.period = period;
  config.warm_start = warm_start;
  config.num_imputations = imputations;

  std::unique_ptr<ClusteringModel> clustering;
  if (config.kind == SubGoalKind::kClusterSet) {
    if (clusters_path.empty())
      throw CLI::ValidationError("--kind", "cluster-set needs --clusters-model");
    clustering =
        std::make_unique<ClusteringModel>(ClusteringModel::load(clusters_path));
  }

  EnvConfig env_config = env_options.to_config();
  env_config.hard_budget = cap_budget(budget, data.d());
  env_config.allow_terminate = false;
  env_config.goal_reward = true;
  AcquisitionEnv env(surrogate, CostModel::uniform(data.d(), env_config.alpha),
                     env_config);

  std::ofstream out;
  if (!out_path.empty()) {
    out.open(out_path);
    if (!out) throw DataError("cannot write " + out_path);
  }
  std::ofstream text;
  if (!text_path.empty()) {
    text.open(text_path);
    if (!text) throw DataError("cannot write " + text_path);
  }

  SplitRng rng(seed);
  for (int r = 0; r < data.n(); ++r) {
    GoalEpisode episode =
        run_goal_episode(net, env, clustering.get(), config,
                         data.features.row(r).transpose(), data.targets[r],
                         rng.split("episode", r));
    if (out.is_open()) out << goal_episode_jsonl(episode);
    std::string rendered =
        render_goal_episode(episode, surrogate->feature_names());
    if (text.is_open()) text << "instance " << r << "\n" << rendered << "\n";
    if (r == 0) std::cout << rendered;
  }
  std::cout << "explained " << data.n() << " episodes (seed=" << seed << ")\n";
  return 0;
}

// --------------------------------- session ---------------------------------

int run_session(const std::string& model_path, const std::string& agent_path,
                const std::string& ood_path, const std::string& out_path,
                std::optional<int> budget_opt, int cmi_samples,
                std::uint64_t seed) {
  auto surrogate =
      std::make_shared<const MixtureSurrogate>(MixtureSurrogate::load(model_path));
  const TaskSpec& task = surrogate->task();
  const int d = task.d;
  int budget = cap_budget(budget_opt.value_or(d), d);

  std::shared_ptr<const PolicyNetwork> net;
  if (!agent_path.empty())
    net = std::make_shared<const PolicyNetwork>(
        PolicyNetwork::load(agent_path).first);
  std::shared_ptr<const ScoreStatsModel> dose;
  if (!ood_path.empty())
    dose = std::make_shared<const ScoreStatsModel>(
        ScoreStatsModel::load(ood_path));

  auto feature_name = [&](int i) {
    return surrogate->feature_names().empty() ? "f" + std::to_string(i)
                                              : surrogate->feature_names()[i];
  };

  std::cout.precision(4);
  auto show_state = [&](const PartialInstance& state) {
    switch (task.kind) {
      case TaskKind::kClassification: {
        Eigen::VectorXd post = surrogate->class_posterior(state).array().exp();
        std::cout << "posterior:";
        for (int c = 0; c < post.size(); ++c) std::cout << " " << post[c];
        std::cout << "  entropy " << surrogate->conditional_entropy_y(state)
                  << " nats\n";
        break;
      }
      case TaskKind::kRegression: {
        auto [mean, var] = surrogate->regression_posterior(state);
        std::cout << "prediction: mean " << mean << " variance " << var << "\n";
        break;
      }
      case TaskKind::kUnsupervised:
        std::cout << "observed " << state.observed().size() << "/" << d
                  << " features\n";
        break;
    }
    if (dose && !state.observed().empty())
      std::cout << "ood score: " << ood_score(*dose, *surrogate, state) << "\n";
  };

  SplitRng rng(seed);
  PartialInstance state = PartialInstance::empty(d);
  AcquisitionTrace trace;
  std::cout << "interactive acquisition over " << d
            << " features; enter a value for the suggested feature, "
               "'acquire <i> <value>', 'stop' or 'quit'\n";
  show_state(state);

  // entered values are raw; the model works in standardized units
  const StandardizationParams& std_params = surrogate->standardization();
  while (static_cast<int>(state.observed().size()) < d &&
         static_cast<int>(trace.steps.size()) < budget) {
    std::vector<bool> mask(d + 1, false);
    for (int i : candidate_features(task, state)) mask[i] = true;
    bool any = false;
    for (int i = 0; i < d; ++i) any = any || mask[i];
    if (!any) break;

    int suggest = -1;
    if (net) {
      SplitRng side = rng.split("side", trace.steps.size());
      SideInfo si = side_info(*surrogate, state, 64, side);
      PolicyOutput po =
          net->forward(state, si, mask, Eigen::VectorXd::Zero(net->goal_dim()));
      Action a = argmax_action(po, net->grouping());
      if (a.is_terminate()) break;
      suggest = a.index;
      std::cout << "suggested: " << feature_name(suggest) << " (index "
                << suggest << ")\n";
    } else {
      double best = -std::numeric_limits<double>::infinity();
      for (int i = 0; i < d; ++i) {
        if (!mask[i]) continue;
        SplitRng sub = rng.split("cmi", trace.steps.size() * d + i);
        double score = cmi(*surrogate, state, i, cmi_samples, sub);
        if (score > best) {
          best = score;
          suggest = i;
        }
      }
      std::cout << "suggested: " << feature_name(suggest) << " (index "
                << suggest << ", estimated gain " << best << " nats)\n";
    }

    std::cout << "> " << std::flush;
    std::string line;
    if (!std::getline(std::cin, line)) break;
    std::istringstream parse(line);
    std::string head;
    parse >> head;
    if (head.empty()) continue;
    if (head == "quit" || head == "stop") break;

    int index = suggest;
    std::string value_token = head;
    if (head == "acquire") {
      std::string idx_token;
      if (!(parse >> idx_token >> value_token)) {
        std::cout << "usage: acquire <index> <value>\n";
        continue;
      }
      try {
        index = std::stoi(idx_token);
      } catch (const std::exception&) {
        std::cout << "not a feature index: " << idx_token << "\n";
        continue;
      }
      if (index < 0 || index >= d || !mask[index]) {
        std::cout << "feature " << index << " is not acquirable here\n";
        continue;
      }
    }
    char* end = nullptr;
    double raw_value = std::strtod(value_token.c_str(), &end);
    if (end == value_token.c_str() || *end != '\0' ||
        !std::isfinite(raw_value)) {
      std::cout << "not a finite number: " << value_token << "\n";
      continue;  // reprompt without state change
    }
    double value =
        (raw_value - std_params.mean[index]) / std_params.scale[index];
    state = state.with_observed(index, value);
    TraceStep step;
    step.action = Action::acquire(index);
    step.value = value;
    trace.steps.push_back(step);
    std::cout << "acquired " << feature_name(index) << " = " << raw_value
              << "\n";
    show_state(state);
  }

  trace.final_observed = state.observed();
  trace.final_prediction = predict(*surrogate, state);
  std::cout << "session over after " << trace.steps.size() << " acquisitions\n";
  show_state(state);
  if (!out_path.empty()) {
    std::ofstream out(out_path);
    if (!out) throw DataError("cannot write trace: " + out_path);
    out << trace.to_jsonl();
    std::cout << "trace written to " << out_path << "\n";
  }
  return 0;
}

// -------------------------------- eval-curve --------------------------------

int run_eval_curve(const std::string& model_path, const std::string& policy_name,
                   const std::string& data_path, const std::string& budgets_csv,
                   const std::string& out_path, const std::string& agent_path,
                   const EnvOptions& env_options, int cmi_samples,
                   std::uint64_t seed, int workers) {
  auto surrogate =
      std::make_shared<const MixtureSurrogate>(MixtureSurrogate::load(model_path));
  Dataset data = load_standardized(data_path, surrogate->task().kind,
                                   &surrogate->standardization(), nullptr);

  std::vector<int> budgets;
  std::istringstream parse(budgets_csv);
  std::string tok;
  while (std::getline(parse, tok, ',')) budgets.push_back(std::stoi(tok));

  std::unique_ptr<AcquisitionPolicy> policy;
  std::shared_ptr<const PolicyNetwork> net;
  if (policy_name == "greedy") {
    policy = std::make_unique<GreedyCmiPolicy>(cmi_samples);
  } else if (policy_name == "random") {
    policy = std::make_unique<RandomPolicy>();
  } else if (policy_name == "agent") {
    if (agent_path.empty())
      throw CLI::ValidationError("--policy", "agent policy needs --agent");
    net = std::make_shared<const PolicyNetwork>(
        PolicyNetwork::load(agent_path).first);
    policy = std::make_unique<AgentPolicy>(net);
  } else if (policy_name == "static") {
    SplitRng order_rng(seed);
    policy = std::make_unique<StaticOrderPolicy>(static_order(
        *surrogate, data, std::max(16, cmi_samples / 4), order_rng));
  } else {
    throw CLI::ValidationError("--policy", "unknown policy " + policy_name);
  }

  CurveConfig curve_config;
  curve_config.workers = workers;
  EnvConfig env_config = env_options.to_config();
  std::vector<CurvePoint> curve;
  std::string metric_name;
  if (surrogate->task().kind == TaskKind::kClassification) {
    metric_name = "accuracy";
    curve = accuracy_curve(surrogate, *policy, data, budgets, env_config,
                           CostModel::uniform(data.d(), env_config.alpha),
                           SplitRng(seed), curve_config);
  } else {
    metric_name = "rmse";
    curve = rmse_curve(surrogate, *policy, data, budgets, env_config,
                       CostModel::uniform(data.d(), env_config.alpha),
                       SplitRng(seed), curve_config);
  }
  write_curve_csv(out_path, metric_name, curve);
  for (const CurvePoint& p : curve)
    std::cout << "budget " << p.budget << ": " << metric_name << " "
              << p.metric << " +- " << p.stderr_boot << "\n";
  std::cout << "curve written to " << out_path << " (seed=" << seed << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"distribution-guided active feature acquisition"};
  app.require_subcommand(1);
  app.set_config("--config", "",
                 "run file with key = value lines; subcommand options live "
                 "under a [subcommand] section");
  app.allow_config_extras(CLI::config_extras_mode::error);

  std::vector<std::string> raw_args(argv, argv + argc);
  std::uint64_t seed = 0;
  app.add_option("--seed", seed, "master 64-bit seed")->capture_default_str();

  // fit-surrogate
  auto* fit =
      app.add_subcommand("fit-surrogate", "fit the mixture surrogate from a CSV");
  std::string data_path, out_path, task_name = "classification";
  int components = 4;
  double heldout_fraction = 0.2;
  fit->add_option("--data", data_path, "training CSV")->required();
  fit->add_option("--task", task_name,
                  "classification | regression | unsupervised");
  fit->add_option("--components", components, "mixture components per class");
  fit->add_option("--out", out_path, "output model file")->required();
  fit->add_option("--heldout-fraction", heldout_fraction,
                  "fraction held out for the masked objective report");

  // fit-clusters
  auto* fitc =
      app.add_subcommand("fit-clusters", "fit the explanation clustering model");
  std::string fitc_data, fitc_model, fitc_out;
  int num_clusters = 50;
  fitc->add_option("--data", fitc_data, "training CSV")->required();
  fitc->add_option("--model", fitc_model, "surrogate model file")->required();
  fitc->add_option("--clusters", num_clusters, "number of clusters");
  fitc->add_option("--out", fitc_out, "output clustering file")->required();

  // fit-ood
  auto* fito =
      app.add_subcommand("fit-ood", "fit the partially observed OOD detector");
  std::string fito_model, fito_data, fito_out;
  int levels = 10;
  double sigma_high = 1.0, sigma_low = 0.01;
  fito->add_option("--model", fito_model, "surrogate model file")->required();
  fito->add_option("--data", fito_data, "in-distribution CSV")->required();
  fito->add_option("--out", fito_out, "output model file")->required();
  fito->add_option("--levels", levels, "noise levels");
  fito->add_option("--sigma-high", sigma_high, "largest noise level");
  fito->add_option("--sigma-low", sigma_low, "smallest noise level");

  // train-agent
  auto* train =
      app.add_subcommand("train-agent", "train the hierarchical PPO agent");
  std::string train_model, train_data, train_out, train_log, train_ood;
  std::string grouping_scheme = "mi", goal_kind, goal_clusters;
  int groups = 4;
  int train_budget = -1;
  bool train_allow_terminate = false;
  bool train_ood_reward = false;
  int goal_members = 5, goal_period = 10, goal_warm = 0, goal_imputations = 50;
  EnvOptions train_env;
  PpoConfig ppo;
  train->add_option("--model", train_model, "surrogate model file")->required();
  train->add_option("--data", train_data, "training CSV")->required();
  train->add_option("--out", train_out, "checkpoint file")->required();
  train->add_option("--log", train_log, "training log CSV");
  train->add_option("--groups", groups, "action groups K");
  train->add_option("--grouping", grouping_scheme,
                    "mi | random | contiguous | spectral");
  train->add_option("--budget", train_budget, "hard acquisition budget");
  train->add_flag("--allow-terminate", train_allow_terminate,
                  "agent may stop before the budget");
  train->add_option("--ood-model", train_ood, "score-stats model file");
  train->add_flag("--ood-reward", train_ood_reward,
                  "add the OOD score to the terminal reward");
  train->add_option("--goal-kind", goal_kind,
                    "class-pair | cluster-set (goal-conditioned training)");
  train->add_option("--clusters-model", goal_clusters, "clustering file");
  train->add_option("--goal-members", goal_members, "clusters per sub-goal");
  train->add_option("--goal-period", goal_period, "acquisitions per sub-goal");
  train->add_option("--goal-warm-start", goal_warm,
                    "unconditioned acquisitions at the episode start");
  train->add_option("--goal-imputations", goal_imputations,
                    "imputations for cluster posteriors");
  train->add_option("--updates", ppo.updates, "PPO updates");
  train->add_option("--rollout-steps", ppo.rollout_steps, "steps per rollout");
  train->add_option("--epochs", ppo.epochs, "epochs per update");
  train->add_option("--minibatch", ppo.minibatch_size, "minibatch size");
  train->add_option("--clip", ppo.clip, "PPO clip range");
  train->add_option("--gae-lambda", ppo.gae_lambda, "GAE lambda");
  train->add_option("--entropy-coef", ppo.entropy_coef, "entropy bonus");
  train->add_option("--value-coef", ppo.value_coef, "value loss weight");
  train->add_option("--learning-rate", ppo.learning_rate, "Adam step size");
  train_env.attach(train);

  // acquire
  auto* acq = app.add_subcommand("acquire", "run a policy over a test CSV");
  std::string acq_model, acq_data, acq_out, acq_metrics, acq_agent, acq_ood;
  std::string policy_name = "greedy";
  int acq_budget = 0;
  int cmi_samples = 0;
  int workers = 1;
  EnvOptions acq_env;
  acq->add_option("--model", acq_model, "surrogate model file")->required();
  acq->add_option("--policy", policy_name, "greedy | agent | random | static");
  acq->add_option("--budget", acq_budget, "hard acquisition budget")->required();
  acq->add_option("--data", acq_data, "test CSV")->required();
  acq->add_option("--out", acq_out, "JSON-lines traces");
  acq->add_option("--metrics", acq_metrics, "per-instance metrics CSV");
  acq->add_option("--agent", acq_agent, "agent checkpoint");
  acq->add_option("--ood-model", acq_ood, "score-stats model file");
  acq->add_option("--cmi-samples", cmi_samples,
                  "Monte Carlo samples per CMI estimate (0 = task default)");
  acq->add_option("--workers", workers, "parallel evaluation workers");
  acq_env.attach(acq);

  // eval-curve
  auto* curve =
      app.add_subcommand("eval-curve", "metric vs budget over a test CSV");
  std::string curve_model, curve_data, curve_out, curve_agent;
  std::string curve_policy = "greedy", budgets_csv = "1,2,4";
  int curve_workers = 1, curve_samples = 0;
  EnvOptions curve_env;
  curve->add_option("--model", curve_model, "surrogate model file")->required();
  curve->add_option("--policy", curve_policy,
                    "greedy | agent | random | static");
  curve->add_option("--data", curve_data, "test CSV")->required();
  curve->add_option("--budgets", budgets_csv, "comma-separated budgets");
  curve->add_option("--out", curve_out, "curve CSV")->required();
  curve->add_option("--agent", curve_agent, "agent checkpoint");
  curve->add_option("--cmi-samples", curve_samples, "CMI samples");
  curve->add_option("--workers", curve_workers, "parallel workers");
  curve_env.attach(curve);

  // explain
  auto* explain =
      app.add_subcommand("explain", "goal-based acquisition with reports");
  std::string exp_model, exp_agent, exp_data, exp_out, exp_text, exp_clusters;
  std::string exp_kind = "class-pair";
  int exp_members = 5, exp_period = 10, exp_warm = 0, exp_imputations = 50;
  int exp_budget = 10;
  EnvOptions exp_env;
  explain->add_option("--model", exp_model, "surrogate model file")->required();
  explain->add_option("--agent", exp_agent, "goal-conditioned checkpoint")
      ->required();
  explain->add_option("--data", exp_data, "test CSV")->required();
  explain->add_option("--kind", exp_kind, "class-pair | cluster-set");
  explain->add_option("--clusters-model", exp_clusters, "clustering file");
  explain->add_option("--members", exp_members, "clusters per sub-goal");
  explain->add_option("--period", exp_period, "acquisitions per sub-goal");
  explain->add_option("--warm-start", exp_warm, "unconditioned acquisitions");
  explain->add_option("--imputations", exp_imputations,
                      "cluster posterior imputations");
  explain->add_option("--budget", exp_budget, "hard acquisition budget");
  explain->add_option("--out", exp_out, "JSON-lines per segment");
  explain->add_option("--text", exp_text, "plain-text report");
  exp_env.attach(explain);

  // session
  auto* session =
      app.add_subcommand("session", "interactive terminal acquisition");
  std::string ses_model, ses_agent, ses_ood, ses_out;
  int ses_budget = -1, ses_samples = 64;
  session->add_option("--model", ses_model, "surrogate model file")->required();
  session->add_option("--agent", ses_agent, "agent checkpoint");
  session->add_option("--ood-model", ses_ood, "score-stats model file");
  session->add_option("--out", ses_out, "trace output file");
  session->add_option("--budget", ses_budget, "acquisition budget");
  session->add_option("--cmi-samples", ses_samples, "CMI samples");

  // --seed and --config live on the parent; let subcommands pass them up
  for (CLI::App* sub :
       app.get_subcommands([](const CLI::App*) { return true; }))
    sub->fallthrough();

  try {
    app.parse(argc, argv);
    if (*fit)
      return run_fit_surrogate(data_path, task_name, components, seed, out_path,
                               heldout_fraction);
    if (*fitc)
      return run_fit_clusters(fitc_data, fitc_model, num_clusters, seed,
                              fitc_out);
    if (*fito)
      return run_fit_ood(fito_model, fito_data, fito_out, levels, sigma_high,
                         sigma_low, seed);
    if (*train)
      return run_train_agent(
          train_model, train_data, train_out, train_log, groups,
          grouping_scheme,
          train_budget >= 0 ? std::optional<int>(train_budget) : std::nullopt,
          train_allow_terminate, train_env, ppo, train_ood, train_ood_reward,
          goal_kind, goal_clusters, goal_members, goal_period, goal_warm,
          goal_imputations, seed, raw_args);
    if (*acq)
      return run_acquire(acq_model, policy_name, acq_budget, acq_data, acq_out,
                         acq_metrics, acq_agent, acq_ood, acq_env, cmi_samples,
                         seed);
    if (*curve)
      return run_eval_curve(curve_model, curve_policy, curve_data, budgets_csv,
                            curve_out, curve_agent, curve_env, curve_samples,
                            seed, curve_workers);
    if (*explain)
      return run_explain(exp_model, exp_agent, exp_data, exp_kind, exp_clusters,
                         exp_members, exp_period, exp_warm, exp_imputations,
                         exp_budget, exp_out, exp_text, exp_env, seed);
    if (*session)
      return run_session(ses_model, ses_agent, ses_ood, ses_out,
                         ses_budget >= 0 ? std::optional<int>(ses_budget)
                                         : std::nullopt,
                         ses_samples, seed);
    std::cerr << "no subcommand selected\n";
    return kExitUsage;
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  } catch (const DataError& e) {
    std::cerr << "afa: data error: " << e.what() << "\n";
    return kExitData;
  } catch (const NumericError& e) {
    std::cerr << "afa: numerical failure: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "afa: error: " << e.what() << "\n";
    return kExitUsage;
  }
}
