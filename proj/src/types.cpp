#include "afa/types.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

namespace afa {

using nlohmann::json;

std::string to_string(TaskKind kind) {
  switch (kind) {
    case TaskKind::kClassification: return "classification";
    case TaskKind::kRegression: return "regression";
    case TaskKind::kUnsupervised: return "unsupervised";
  }
  throw std::logic_error("unknown task kind");
}

TaskKind task_kind_from_string(const std::string& s) {
  if (s == "classification") return TaskKind::kClassification;
  if (s == "regression") return TaskKind::kRegression;
  if (s == "unsupervised") return TaskKind::kUnsupervised;
  throw DataError("unknown task kind: " + s);
}

FeatureIndexSet::FeatureIndexSet(std::vector<int> indices)
    : indices_(std::move(indices)) {
  std::sort(indices_.begin(), indices_.end());
  for (std::size_t k = 0; k < indices_.size(); ++k) {
    if (indices_[k] < 0) throw std::invalid_argument("negative feature index");
    if (k > 0 && indices_[k] == indices_[k - 1])
      throw std::invalid_argument("duplicate feature index");
  }
}

FeatureIndexSet FeatureIndexSet::full(int d) {
  std::vector<int> all(d);
  for (int i = 0; i < d; ++i) all[i] = i;
  return FeatureIndexSet(std::move(all));
}

bool FeatureIndexSet::contains(int i) const {
  return std::binary_search(indices_.begin(), indices_.end(), i);
}

FeatureIndexSet FeatureIndexSet::complement(int d) const {
  if (!indices_.empty() && indices_.back() >= d)
    throw std::invalid_argument("index set exceeds dimension");
  std::vector<int> rest;
  rest.reserve(d - size());
  std::size_t k = 0;
  for (int i = 0; i < d; ++i) {
    if (k < indices_.size() && indices_[k] == i) {
      ++k;
    } else {
      rest.push_back(i);
    }
  }
  return FeatureIndexSet(std::move(rest));
}

FeatureIndexSet FeatureIndexSet::with(int i) const {
  if (contains(i)) throw std::invalid_argument("index already present");
  std::vector<int> out = indices_;
  out.insert(std::upper_bound(out.begin(), out.end(), i), i);
  FeatureIndexSet result;
  result.indices_ = std::move(out);
  return result;
}

PartialInstance PartialInstance::empty(int d) {
  if (d < 1) throw std::invalid_argument("dimension must be >= 1");
  PartialInstance p;
  p.values_ = Eigen::VectorXd::Zero(d);
  return p;
}

PartialInstance PartialInstance::from(const Eigen::VectorXd& values,
                                      FeatureIndexSet observed) {
  PartialInstance p = PartialInstance::empty(static_cast<int>(values.size()));
  for (int i : observed) {
    if (i >= p.dimension())
      throw std::invalid_argument("observed index exceeds dimension");
    if (!std::isfinite(values[i]))
      throw NumericError("non-finite observed value");
    p.values_[i] = values[i];
  }
  p.observed_ = std::move(observed);
  return p;
}

PartialInstance PartialInstance::with_observed(int i, double value) const {
  if (i < 0 || i >= dimension())
    throw std::invalid_argument("feature index out of range");
  if (!std::isfinite(value)) throw NumericError("non-finite observed value");
  PartialInstance p = *this;
  p.observed_ = observed_.with(i);
  p.values_[i] = value;
  return p;
}

Eigen::VectorXd PartialInstance::observed_values() const {
  Eigen::VectorXd out(observed_.size());
  int k = 0;
  for (int i : observed_) out[k++] = values_[i];
  return out;
}

std::string PartialInstance::to_json() const {
  json j;
  j["d"] = dimension();
  j["observed"] = observed_.indices();
  std::vector<double> vals;
  vals.reserve(observed_.size());
  for (int i : observed_) vals.push_back(values_[i]);
  j["values"] = vals;
  return j.dump();
}

PartialInstance PartialInstance::from_json(const std::string& line) {
  json j = json::parse(line);
  int d = j.at("d").get<int>();
  std::vector<int> obs = j.at("observed").get<std::vector<int>>();
  std::vector<double> vals = j.at("values").get<std::vector<double>>();
  if (obs.size() != vals.size()) throw DataError("observed/values length mismatch");
  PartialInstance p = PartialInstance::empty(d);
  for (std::size_t k = 0; k < obs.size(); ++k) {
    p = p.with_observed(obs[k], vals[k]);
  }
  return p;
}

Target Target::label(int c) {
  if (c < 0) throw std::invalid_argument("class label must be >= 0");
  Target t;
  t.value_ = c;
  return t;
}

Target Target::scalar(double y) {
  if (!std::isfinite(y)) throw NumericError("non-finite target");
  Target t;
  t.value_ = y;
  return t;
}

int Target::label() const {
  if (!is_label()) throw std::logic_error("target is not a class label");
  return std::get<int>(value_);
}

double Target::scalar() const {
  if (!is_scalar()) throw std::logic_error("target is not a scalar");
  return std::get<double>(value_);
}

void TaskSpec::validate() const {
  if (d < 1) throw std::invalid_argument("task dimension must be >= 1");
  if (kind == TaskKind::kClassification && num_classes < 2)
    throw std::invalid_argument("classification needs num_classes >= 2");
}

CostModel CostModel::uniform(int d, double alpha) {
  CostModel c;
  c.per_feature_cost = Eigen::VectorXd::Ones(d);
  c.alpha = alpha;
  return c;
}

double CostModel::cost(const FeatureIndexSet& o) const {
  double total = 0.0;
  for (int i : o) total += per_feature_cost[i];
  return total;
}

void CostModel::validate() const {
  if (alpha < 0) throw std::invalid_argument("alpha must be >= 0");
  if ((per_feature_cost.array() < 0).any())
    throw std::invalid_argument("feature costs must be >= 0");
}

RewardBreakdown& RewardBreakdown::operator+=(const RewardBreakdown& o) {
  cost += o.cost;
  shaping += o.shaping;
  goal += o.goal;
  prediction += o.prediction;
  ood += o.ood;
  return *this;
}

int Prediction::argmax_class() const {
  if (class_probs.size() == 0) throw std::logic_error("no class posterior");
  int best = 0;
  class_probs.maxCoeff(&best);
  return best;
}

RewardBreakdown AcquisitionTrace::total_reward() const {
  RewardBreakdown total;
  for (const auto& s : steps) total += s.reward;
  return total;
}

std::vector<int> AcquisitionTrace::acquired_indices() const {
  std::vector<int> out;
  for (const auto& s : steps) {
    if (!s.action.is_terminate()) out.push_back(s.action.index);
  }
  return out;
}

void AcquisitionTrace::validate(const TaskSpec& task) const {
  std::vector<int> seen;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const auto& s = steps[t];
    if (s.action.is_terminate()) {
      if (t + 1 != steps.size())
        throw std::logic_error("terminate before end of trace");
      continue;
    }
    int i = s.action.index;
    if (i >= task.d) throw std::logic_error("acquired index out of range");
    if (std::find(seen.begin(), seen.end(), i) != seen.end())
      throw std::logic_error("feature acquired twice");
    if (task.ordering == OrderingConstraint::kChronological && !seen.empty() &&
        i <= *std::max_element(seen.begin(), seen.end()))
      throw std::logic_error("chronological ordering violated");
    seen.push_back(i);
  }
}

namespace {

json reward_json(const RewardBreakdown& r) {
  return json{{"cost", r.cost},
              {"shaping", r.shaping},
              {"goal", r.goal},
              {"prediction", r.prediction},
              {"ood", r.ood}};
}

json prediction_json(const Prediction& p) {
  json j;
  j["kind"] = to_string(p.kind);
  switch (p.kind) {
    case TaskKind::kClassification: {
      std::vector<double> probs(p.class_probs.data(),
                                p.class_probs.data() + p.class_probs.size());
      j["posterior"] = probs;
      j["class"] = p.argmax_class();
      break;
    }
    case TaskKind::kRegression:
      j["mean"] = p.mean;
      j["variance"] = p.variance;
      break;
    case TaskKind::kUnsupervised: {
      std::vector<double> imp(p.imputed.data(),
                              p.imputed.data() + p.imputed.size());
      j["imputed"] = imp;
      break;
    }
  }
  return j;
}

}  // namespace

std::string AcquisitionTrace::to_jsonl() const {
  std::ostringstream out;
  for (std::size_t t = 0; t < steps.size(); ++t) {
    const auto& s = steps[t];
    json j;
    j["step"] = t;
    if (s.action.is_terminate()) {
      j["action"] = "terminate";
    } else {
      j["action"] = s.action.index;
      j["value"] = s.value;
    }
    j["reward"] = reward_json(s.reward);
    if (!s.candidate_scores.empty()) j["scores"] = s.candidate_scores;
    if (!s.posterior.empty()) j["posterior"] = s.posterior;
    out << j.dump() << "\n";
  }
  json tail;
  tail["final"] = true;
  tail["observed"] = final_observed.indices();
  tail["prediction"] = prediction_json(final_prediction);
  tail["return"] = reward_json(total_reward());
  tail["return"]["total"] = total_reward().total();
  out << tail.dump() << "\n";
  return out.str();
}

}  // namespace afa
