#include "afa/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numeric>
#include <sstream>

namespace afa {

StandardizationParams StandardizationParams::identity(int d) {
  StandardizationParams p;
  p.mean = Eigen::VectorXd::Zero(d);
  p.scale = Eigen::VectorXd::Ones(d);
  return p;
}

Eigen::VectorXd StandardizationParams::apply(const Eigen::VectorXd& raw) const {
  return (raw - mean).cwiseQuotient(scale);
}

Eigen::VectorXd StandardizationParams::invert(
    const Eigen::VectorXd& standardized) const {
  return standardized.cwiseProduct(scale) + mean;
}

void StandardizationParams::validate() const {
  if (mean.size() != scale.size())
    throw std::invalid_argument("standardization size mismatch");
  if ((scale.array() <= 0).any())
    throw std::invalid_argument("standardization scale must be > 0");
}

void Dataset::validate() const {
  task.validate();
  if (d() != task.d) throw std::invalid_argument("dataset/task dimension mismatch");
  if (static_cast<int>(targets.size()) != n())
    throw std::invalid_argument("targets/rows mismatch");
  for (const Target& t : targets) {
    switch (task.kind) {
      case TaskKind::kClassification:
        if (!t.is_label() || t.label() >= task.num_classes)
          throw DataError("target is not a valid class label");
        break;
      case TaskKind::kRegression:
        if (!t.is_scalar()) throw DataError("target is not a scalar");
        break;
      case TaskKind::kUnsupervised:
        if (!t.is_none()) throw DataError("unsupervised rows carry no target");
        break;
    }
  }
}

Eigen::VectorXd Dataset::class_frequencies() const {
  if (task.kind != TaskKind::kClassification)
    throw std::logic_error("class frequencies need a classification task");
  Eigen::VectorXd freq = Eigen::VectorXd::Zero(task.num_classes);
  for (const Target& t : targets) freq[t.label()] += 1.0;
  return freq / static_cast<double>(n());
}

Dataset Dataset::subset(const std::vector<int>& rows) const {
  Dataset out;
  out.task = task;
  out.feature_names = feature_names;
  out.features.resize(rows.size(), d());
  out.targets.reserve(rows.size());
  for (std::size_t k = 0; k < rows.size(); ++k) {
    out.features.row(k) = features.row(rows[k]);
    out.targets.push_back(targets[rows[k]]);
  }
  return out;
}

std::pair<Dataset, Dataset> Dataset::split(double fraction,
                                           SplitRng& rng) const {
  if (fraction < 0.0 || fraction > 1.0)
    throw std::invalid_argument("split fraction must be in [0,1]");
  std::vector<int> order(n());
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng.engine());
  int head = static_cast<int>(std::lround(fraction * n()));
  std::vector<int> first(order.begin(), order.begin() + head);
  std::vector<int> second(order.begin() + head, order.end());
  return {subset(first), subset(second)};
}

std::pair<Dataset, StandardizationParams> standardize_dataset(
    const Eigen::MatrixXd& raw, std::vector<Target> targets, TaskSpec task,
    std::vector<std::string> feature_names) {
  const int n = static_cast<int>(raw.rows());
  const int d = static_cast<int>(raw.cols());
  if (n < 2) throw DataError("need at least 2 rows to standardize");
  if (!raw.allFinite()) throw DataError("non-finite feature values");

  StandardizationParams params;
  params.mean = raw.colwise().mean();
  params.scale.resize(d);
  for (int j = 0; j < d; ++j) {
    double var = (raw.col(j).array() - params.mean[j]).square().mean();
    if (var <= 0.0) {
      std::string name = feature_names.empty() ? ("column " + std::to_string(j))
                                               : feature_names[j];
      throw DataError("constant feature: " + name);
    }
    params.scale[j] = std::sqrt(var);
  }

  Dataset data;
  data.task = task;
  data.task.d = d;
  data.targets = std::move(targets);
  data.feature_names = std::move(feature_names);
  data.features.resize(n, d);
  for (int r = 0; r < n; ++r) {
    data.features.row(r) = params.apply(raw.row(r).transpose()).transpose();
  }
  data.validate();
  return {std::move(data), std::move(params)};
}

FeatureIndexSet sample_mask(int d, SplitRng& rng) {
  if (d < 1) throw std::invalid_argument("dimension must be >= 1");
  int k = rng.uniform_int(0, d - 1);
  std::vector<int> pool(d);
  std::iota(pool.begin(), pool.end(), 0);
  std::shuffle(pool.begin(), pool.end(), rng.engine());
  pool.resize(k);
  return FeatureIndexSet(std::move(pool));
}

namespace {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::istringstream in(line);
  while (std::getline(in, cell, ',')) cells.push_back(cell);
  if (!line.empty() && line.back() == ',') cells.push_back("");
  return cells;
}

std::string trim(const std::string& s) {
  auto from = s.find_first_not_of(" \t\r\n");
  if (from == std::string::npos) return "";
  auto to = s.find_last_not_of(" \t\r\n");
  return s.substr(from, to - from + 1);
}

double parse_cell(const std::string& path, int line_no, const std::string& cell) {
  std::string t = trim(cell);
  if (t.empty())
    throw DataError(path + ":" + std::to_string(line_no) + ": missing cell");
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end == t.c_str() || *end != '\0' || !std::isfinite(v))
    throw DataError(path + ":" + std::to_string(line_no) +
                    ": not a finite number: '" + t + "'");
  return v;
}

}  // namespace

RawDataset read_csv(const std::string& path, TaskKind kind) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open file: " + path);

  std::string line;
  if (!std::getline(in, line)) throw DataError(path + ": empty file");
  std::vector<std::string> header = split_line(line);
  for (auto& h : header) h = trim(h);
  const bool has_target = kind != TaskKind::kUnsupervised;
  const int d = static_cast<int>(header.size()) - (has_target ? 1 : 0);
  if (d < 1) throw DataError(path + ": no feature columns");

  std::vector<std::vector<double>> rows;
  std::vector<Target> targets;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    std::vector<std::string> cells = split_line(line);
    if (static_cast<int>(cells.size()) != d + (has_target ? 1 : 0))
      throw DataError(path + ":" + std::to_string(line_no) +
                      ": expected " + std::to_string(d + (has_target ? 1 : 0)) +
                      " cells, got " + std::to_string(cells.size()));
    std::vector<double> row(d);
    for (int j = 0; j < d; ++j) row[j] = parse_cell(path, line_no, cells[j]);
    rows.push_back(std::move(row));
    if (has_target) {
      double y = parse_cell(path, line_no, cells[d]);
      if (kind == TaskKind::kClassification) {
        double rounded = std::round(y);
        if (std::abs(y - rounded) > 1e-9 || rounded < 0)
          throw DataError(path + ":" + std::to_string(line_no) +
                          ": class label must be a nonnegative integer");
        targets.push_back(Target::label(static_cast<int>(rounded)));
      } else {
        targets.push_back(Target::scalar(y));
      }
    } else {
      targets.push_back(Target::none());
    }
  }
  if (rows.empty()) throw DataError(path + ": no data rows");

  RawDataset raw;
  raw.features.resize(rows.size(), d);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int j = 0; j < d; ++j) raw.features(r, j) = rows[r][j];
  }
  raw.targets = std::move(targets);
  raw.feature_names.assign(header.begin(), header.begin() + d);
  for (std::size_t j = 0; j < raw.feature_names.size(); ++j) {
    auto& name = raw.feature_names[j];
    if (name.empty()) name = "f" + std::to_string(j);
    std::replace(name.begin(), name.end(), ' ', '_');
  }
  return raw;
}

void write_csv(const std::string& path, const Dataset& data) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write file: " + path);
  for (int j = 0; j < data.d(); ++j) {
    if (j) out << ",";
    out << (data.feature_names.empty() ? "f" + std::to_string(j)
                                       : data.feature_names[j]);
  }
  if (data.task.supervised()) out << ",target";
  out << "\n";
  out.precision(17);
  for (int r = 0; r < data.n(); ++r) {
    for (int j = 0; j < data.d(); ++j) {
      if (j) out << ",";
      out << data.features(r, j);
    }
    if (data.task.kind == TaskKind::kClassification)
      out << "," << data.targets[r].label();
    else if (data.task.kind == TaskKind::kRegression)
      out << "," << data.targets[r].scalar();
    out << "\n";
  }
}

}  // namespace afa
