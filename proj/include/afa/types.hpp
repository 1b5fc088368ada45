#pragma once

#include <Eigen/Dense>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

namespace afa {

// Malformed or inconsistent input data (CLI exit code 2).
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite values or failed factorizations (CLI exit code 3).
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class TaskKind { kClassification, kRegression, kUnsupervised };
enum class OrderingConstraint { kNone, kChronological };

std::string to_string(TaskKind kind);
TaskKind task_kind_from_string(const std::string& s);

// Ordered, duplicate-free set of feature indices in [0, d).
class FeatureIndexSet {
 public:
  FeatureIndexSet() = default;
  explicit FeatureIndexSet(std::vector<int> indices);

  static FeatureIndexSet full(int d);

  bool contains(int i) const;
  int size() const { return static_cast<int>(indices_.size()); }
  bool empty() const { return indices_.empty(); }
  const std::vector<int>& indices() const { return indices_; }

  FeatureIndexSet complement(int d) const;
  FeatureIndexSet with(int i) const;

  auto begin() const { return indices_.begin(); }
  auto end() const { return indices_.end(); }

  bool operator==(const FeatureIndexSet&) const = default;

 private:
  std::vector<int> indices_;  // ascending
};

// Feature vector plus observation mask. Entries at unobserved indices are
// canonical zero and never read by consumers.
class PartialInstance {
 public:
  PartialInstance() = default;

  static PartialInstance empty(int d);
  // Copies `values` at observed indices, zeroes the rest.
  static PartialInstance from(const Eigen::VectorXd& values,
                              FeatureIndexSet observed);

  PartialInstance with_observed(int i, double value) const;

  int dimension() const { return static_cast<int>(values_.size()); }
  const Eigen::VectorXd& values() const { return values_; }
  const FeatureIndexSet& observed() const { return observed_; }
  FeatureIndexSet unobserved() const { return observed_.complement(dimension()); }

  // Observed entries compacted in ascending index order.
  Eigen::VectorXd observed_values() const;

  std::string to_json() const;
  static PartialInstance from_json(const std::string& line);

 private:
  Eigen::VectorXd values_;
  FeatureIndexSet observed_;
};

// Class label, real scalar, or none (unsupervised).
class Target {
 public:
  Target() : value_(std::monostate{}) {}

  static Target none() { return Target(); }
  static Target label(int c);
  static Target scalar(double y);

  bool is_none() const { return std::holds_alternative<std::monostate>(value_); }
  bool is_label() const { return std::holds_alternative<int>(value_); }
  bool is_scalar() const { return std::holds_alternative<double>(value_); }

  int label() const;
  double scalar() const;

 private:
  std::variant<std::monostate, int, double> value_;
};

struct TaskSpec {
  TaskKind kind = TaskKind::kClassification;
  int num_classes = 0;  // classification only
  int d = 0;
  OrderingConstraint ordering = OrderingConstraint::kNone;

  void validate() const;
  bool supervised() const { return kind != TaskKind::kUnsupervised; }
};

struct CostModel {
  Eigen::VectorXd per_feature_cost;  // >= 0
  double alpha = 0.01;

  static CostModel uniform(int d, double alpha = 0.01);

  double cost(const FeatureIndexSet& o) const;
  void validate() const;
};

// Acquire feature `index`, or terminate and predict.
struct Action {
  int index = -1;

  static Action acquire(int i) { return Action{i}; }
  static Action terminate() { return Action{-1}; }
  bool is_terminate() const { return index < 0; }

  bool operator==(const Action&) const = default;
};

struct RewardBreakdown {
  double cost = 0.0;
  double shaping = 0.0;
  double goal = 0.0;
  double prediction = 0.0;
  double ood = 0.0;

  double total() const { return cost + shaping + goal + prediction + ood; }
  RewardBreakdown& operator+=(const RewardBreakdown& o);
};

struct Prediction {
  TaskKind kind = TaskKind::kClassification;
  Eigen::VectorXd class_probs;  // classification
  double mean = 0.0;            // regression
  double variance = 0.0;
  Eigen::VectorXd imputed;      // unsupervised: observed passthrough + means

  int argmax_class() const;
};

struct TraceStep {
  Action action;
  double value = 0.0;  // acquired feature value (acquisition steps)
  RewardBreakdown reward;
  std::vector<double> candidate_scores;  // optional per-candidate utilities
  std::vector<double> posterior;         // optional posterior snapshot
};

struct AcquisitionTrace {
  std::vector<TraceStep> steps;
  Prediction final_prediction;
  FeatureIndexSet final_observed;

  RewardBreakdown total_reward() const;
  std::vector<int> acquired_indices() const;

  // Throws if acquisitions repeat, terminate is non-final, or the ordering
  // constraint is violated.
  void validate(const TaskSpec& task) const;

  std::string to_jsonl() const;
};

}  // namespace afa
