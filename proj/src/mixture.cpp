#include "afa/mixture.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numeric>
#include <sstream>

#include "afa/io.hpp"

namespace afa {

namespace {

constexpr double kLog2Pi = 1.8378770664093454836;

Eigen::MatrixXd submatrix(const Eigen::MatrixXd& m, const std::vector<int>& rows,
                          const std::vector<int>& cols) {
  Eigen::MatrixXd out(rows.size(), cols.size());
  for (std::size_t r = 0; r < rows.size(); ++r)
    for (std::size_t c = 0; c < cols.size(); ++c) out(r, c) = m(rows[r], cols[c]);
  return out;
}

Eigen::VectorXd subvector(const Eigen::VectorXd& v, const std::vector<int>& idx) {
  Eigen::VectorXd out(idx.size());
  for (std::size_t k = 0; k < idx.size(); ++k) out[k] = v[idx[k]];
  return out;
}

std::vector<int> complement_positions(int dim, const std::vector<int>& dims) {
  std::vector<int> rest;
  rest.reserve(dim - dims.size());
  std::size_t k = 0;
  for (int i = 0; i < dim; ++i) {
    if (k < dims.size() && dims[k] == i) {
      ++k;
    } else {
      rest.push_back(i);
    }
  }
  return rest;
}

// Cholesky with a regularization retry; throws NumericError if still failing.
Eigen::LLT<Eigen::MatrixXd> robust_llt(Eigen::MatrixXd sigma, double reg) {
  Eigen::LLT<Eigen::MatrixXd> llt(sigma);
  if (llt.info() == Eigen::Success) return llt;
  std::cerr << "afa: warning: ill-conditioned covariance block, regularizing\n";
  sigma.diagonal().array() += reg;
  llt.compute(sigma);
  if (llt.info() == Eigen::Success) return llt;
  throw NumericError("covariance block is not positive definite");
}

double log_normal(const Eigen::VectorXd& delta,
                  const Eigen::LLT<Eigen::MatrixXd>& llt) {
  const int k = static_cast<int>(delta.size());
  Eigen::VectorXd z = llt.matrixL().solve(delta);
  double logdet = 0.0;
  for (int i = 0; i < k; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
  return -0.5 * (k * kLog2Pi + logdet + z.squaredNorm());
}

}  // namespace

double log_sum_exp(const Eigen::VectorXd& v) {
  if (v.size() == 0) throw std::invalid_argument("log_sum_exp of empty vector");
  double m = v.maxCoeff();
  if (!std::isfinite(m)) return m;  // all -inf stays -inf
  return m + std::log((v.array() - m).exp().sum());
}

double categorical_entropy(const Eigen::VectorXd& log_probs) {
  double h = 0.0;
  for (int i = 0; i < log_probs.size(); ++i) {
    double p = std::exp(log_probs[i]);
    if (p > 0.0) h -= p * log_probs[i];
  }
  return std::max(h, 0.0);
}

Mixture::Mixture(std::vector<GaussianComponent> components)
    : components_(std::move(components)) {
  if (components_.empty()) throw std::invalid_argument("empty mixture");
  const int d = static_cast<int>(components_.front().mean.size());
  Eigen::VectorXd lw(components_.size());
  for (std::size_t k = 0; k < components_.size(); ++k) {
    const auto& c = components_[k];
    if (c.mean.size() != d || c.covariance.rows() != d || c.covariance.cols() != d)
      throw std::invalid_argument("mixture component dimension mismatch");
    lw[k] = c.log_weight;
  }
  double norm = log_sum_exp(lw);
  if (!std::isfinite(norm)) throw NumericError("mixture weights do not normalize");
  // skip the subtraction when already normalized so reload is bit-stable
  if (std::abs(norm) > 1e-12) {
    for (auto& c : components_) c.log_weight -= norm;
  }
}

int Mixture::dimension() const {
  if (components_.empty()) return 0;
  return static_cast<int>(components_.front().mean.size());
}

double Mixture::log_density(const Eigen::VectorXd& x) const {
  if (x.size() != dimension())
    throw std::invalid_argument("mixture density dimension mismatch");
  if (dimension() == 0) return 0.0;
  Eigen::VectorXd terms(num_components());
  for (int k = 0; k < num_components(); ++k)
    terms[k] = component_log_density(k, x);
  double out = log_sum_exp(terms);
  if (std::isnan(out)) throw NumericError("non-finite mixture density");
  return out;
}

double Mixture::component_log_density(int k, const Eigen::VectorXd& x) const {
  const auto& c = components_.at(k);
  auto llt = robust_llt(c.covariance, kRegFloor);
  return c.log_weight + log_normal(x - c.mean, llt);
}

Mixture Mixture::marginal(const std::vector<int>& dims) const {
  for (std::size_t k = 0; k < dims.size(); ++k) {
    if (dims[k] < 0 || dims[k] >= dimension())
      throw std::invalid_argument("marginal position out of range");
    if (k > 0 && dims[k] <= dims[k - 1])
      throw std::invalid_argument("marginal positions must be ascending");
  }
  std::vector<GaussianComponent> comps;
  comps.reserve(components_.size());
  for (const auto& c : components_) {
    GaussianComponent out;
    out.mean = subvector(c.mean, dims);
    out.covariance = submatrix(c.covariance, dims, dims);
    out.log_weight = c.log_weight;
    comps.push_back(std::move(out));
  }
  return Mixture(std::move(comps));
}

Mixture Mixture::conditional(const std::vector<int>& obs_dims,
                             const Eigen::VectorXd& obs_values,
                             double reg) const {
  if (obs_dims.size() != static_cast<std::size_t>(obs_values.size()))
    throw std::invalid_argument("conditional dims/values mismatch");
  if (obs_dims.empty()) return *this;
  if (static_cast<int>(obs_dims.size()) >= dimension())
    throw std::invalid_argument("conditioning on every coordinate");

  std::vector<int> rest = complement_positions(dimension(), obs_dims);
  std::vector<GaussianComponent> comps;
  comps.reserve(components_.size());
  for (const auto& c : components_) {
    Eigen::MatrixXd s_oo = submatrix(c.covariance, obs_dims, obs_dims);
    Eigen::MatrixXd s_ro = submatrix(c.covariance, rest, obs_dims);
    Eigen::MatrixXd s_rr = submatrix(c.covariance, rest, rest);
    auto llt = robust_llt(s_oo, reg);
    Eigen::VectorXd delta = obs_values - subvector(c.mean, obs_dims);

    GaussianComponent out;
    // A = Sigma_oo^{-1} Sigma_or, so Sigma_ro A = Schur update
    Eigen::MatrixXd a = llt.solve(s_ro.transpose());
    out.mean = subvector(c.mean, rest) + s_ro * llt.solve(delta);
    out.covariance = s_rr - s_ro * a;
    out.covariance = 0.5 * (out.covariance + out.covariance.transpose()).eval();
    out.log_weight = c.log_weight + log_normal(delta, llt);
    comps.push_back(std::move(out));
  }
  return Mixture(std::move(comps));
}

Eigen::VectorXd Mixture::mean() const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(dimension());
  for (const auto& c : components_) m += std::exp(c.log_weight) * c.mean;
  return m;
}

Eigen::MatrixXd Mixture::covariance() const {
  Eigen::VectorXd m = mean();
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(dimension(), dimension());
  for (const auto& c : components_) {
    double w = std::exp(c.log_weight);
    s += w * (c.covariance + c.mean * c.mean.transpose());
  }
  return s - m * m.transpose();
}

double Mixture::coordinate_variance(int dim) const {
  double m = 0.0, second = 0.0;
  for (const auto& c : components_) {
    double w = std::exp(c.log_weight);
    m += w * c.mean[dim];
    second += w * (c.covariance(dim, dim) + c.mean[dim] * c.mean[dim]);
  }
  return std::max(second - m * m, 0.0);
}

int Mixture::sample_component(SplitRng& rng) const {
  double u = rng.uniform();
  double acc = 0.0;
  for (int k = 0; k < num_components(); ++k) {
    acc += std::exp(components_[k].log_weight);
    if (u <= acc) return k;
  }
  return num_components() - 1;
}

Eigen::VectorXd Mixture::sample(SplitRng& rng) const {
  const auto& c = components_[sample_component(rng)];
  auto llt = robust_llt(c.covariance, kRegFloor);
  Eigen::VectorXd z(dimension());
  for (int i = 0; i < dimension(); ++i) z[i] = rng.gaussian();
  return c.mean + llt.matrixL() * z;
}

Eigen::MatrixXd Mixture::sample(int count, SplitRng& rng) const {
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  std::vector<Eigen::MatrixXd> factors;
  factors.reserve(components_.size());
  for (const auto& c : components_)
    factors.push_back(Eigen::MatrixXd(robust_llt(c.covariance, kRegFloor).matrixL()));
  Eigen::MatrixXd out(count, dimension());
  Eigen::VectorXd z(dimension());
  for (int s = 0; s < count; ++s) {
    int k = sample_component(rng);
    for (int i = 0; i < dimension(); ++i) z[i] = rng.gaussian();
    out.row(s) = (components_[k].mean + factors[k] * z).transpose();
  }
  return out;
}

Eigen::VectorXd Mixture::weights() const {
  Eigen::VectorXd w(num_components());
  for (int k = 0; k < num_components(); ++k)
    w[k] = std::exp(components_[k].log_weight);
  return w;
}

Mixture Mixture::smoothed(double sigma) const {
  if (sigma <= 0.0) throw std::invalid_argument("noise level must be > 0");
  std::vector<GaussianComponent> comps = components_;
  for (auto& c : comps) c.covariance.diagonal().array() += sigma * sigma;
  return Mixture(std::move(comps));
}

Eigen::VectorXd Mixture::score(const Eigen::VectorXd& x) const {
  if (x.size() != dimension())
    throw std::invalid_argument("score dimension mismatch");
  Eigen::VectorXd log_terms(num_components());
  std::vector<Eigen::VectorXd> grads(num_components());
  for (int k = 0; k < num_components(); ++k) {
    const auto& c = components_[k];
    auto llt = robust_llt(c.covariance, kRegFloor);
    Eigen::VectorXd delta = x - c.mean;
    log_terms[k] = c.log_weight + log_normal(delta, llt);
    grads[k] = -llt.solve(delta);
  }
  double norm = log_sum_exp(log_terms);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(dimension());
  for (int k = 0; k < num_components(); ++k)
    out += std::exp(log_terms[k] - norm) * grads[k];
  return out;
}

namespace {

// k-means++ seeding followed by Lloyd iterations.
Eigen::MatrixXd kmeans_centers(const Eigen::MatrixXd& rows, int k, SplitRng& rng,
                               int iterations) {
  const int n = static_cast<int>(rows.rows());
  const int d = static_cast<int>(rows.cols());
  Eigen::MatrixXd centers(k, d);
  centers.row(0) = rows.row(rng.uniform_int(0, n - 1));
  Eigen::VectorXd dist2 =
      (rows.rowwise() - centers.row(0)).rowwise().squaredNorm();
  for (int c = 1; c < k; ++c) {
    double total = dist2.sum();
    int pick = 0;
    if (total > 0.0) {
      double u = rng.uniform() * total;
      double acc = 0.0;
      for (int i = 0; i < n; ++i) {
        acc += dist2[i];
        if (u <= acc) {
          pick = i;
          break;
        }
      }
    } else {
      pick = rng.uniform_int(0, n - 1);
    }
    centers.row(c) = rows.row(pick);
    dist2 = dist2.cwiseMin(
        (rows.rowwise() - centers.row(c)).rowwise().squaredNorm());
  }

  std::vector<int> assign(n, 0);
  for (int it = 0; it < iterations; ++it) {
    bool changed = false;
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double best_d = std::numeric_limits<double>::infinity();
      for (int c = 0; c < k; ++c) {
        double dd = (rows.row(i) - centers.row(c)).squaredNorm();
        if (dd < best_d) {
          best_d = dd;
          best = c;
        }
      }
      if (assign[i] != best) {
        assign[i] = best;
        changed = true;
      }
    }
    Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(k, d);
    Eigen::VectorXd counts = Eigen::VectorXd::Zero(k);
    for (int i = 0; i < n; ++i) {
      sums.row(assign[i]) += rows.row(i);
      counts[assign[i]] += 1.0;
    }
    for (int c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        centers.row(c) = sums.row(c) / counts[c];
      } else {
        // reseed an empty cluster at the farthest point
        int far = 0;
        double far_d = -1.0;
        for (int i = 0; i < n; ++i) {
          double dd = (rows.row(i) - centers.row(assign[i])).squaredNorm();
          if (dd > far_d) {
            far_d = dd;
            far = i;
          }
        }
        centers.row(c) = rows.row(far);
      }
    }
    if (!changed && it > 0) break;
  }
  return centers;
}

}  // namespace

Mixture fit_mixture_em(const Eigen::MatrixXd& rows, int num_components,
                       SplitRng rng, const FitConfig& config,
                       FitReport* report) {
  const int n = static_cast<int>(rows.rows());
  const int d = static_cast<int>(rows.cols());
  if (num_components < 1) throw std::invalid_argument("need >= 1 component");
  if (n < num_components)
    throw std::invalid_argument("need at least as many rows as components");
  if (!rows.allFinite()) throw NumericError("non-finite training data");

  const int k = num_components;
  Eigen::MatrixXd means = kmeans_centers(rows, k, rng, config.kmeans_iterations);
  Eigen::VectorXd global_mean = rows.colwise().mean();
  Eigen::VectorXd global_var =
      (rows.rowwise() - global_mean.transpose()).array().square().colwise().mean();
  std::vector<Eigen::MatrixXd> covs(
      k, Eigen::MatrixXd(global_var.asDiagonal()) +
             config.reg_floor * Eigen::MatrixXd::Identity(d, d));
  Eigen::VectorXd log_w = Eigen::VectorXd::Constant(k, -std::log(double(k)));

  Eigen::MatrixXd log_resp(n, k);
  double prev_ll = -std::numeric_limits<double>::infinity();
  int m_steps = 0;
  for (int it = 0; it < config.max_iterations; ++it) {
    // E-step
    for (int c = 0; c < k; ++c) {
      auto llt = robust_llt(covs[c], config.reg_floor);
      double logdet = 0.0;
      for (int i = 0; i < d; ++i) logdet += 2.0 * std::log(llt.matrixL()(i, i));
      Eigen::MatrixXd centered =
          (rows.rowwise() - means.row(c)).transpose();  // d x n
      llt.matrixL().solveInPlace(centered);
      Eigen::VectorXd quad = centered.colwise().squaredNorm();
      log_resp.col(c) =
          (-0.5 * (d * kLog2Pi + logdet)) - 0.5 * quad.array() + log_w[c];
    }
    double ll = 0.0;
    for (int i = 0; i < n; ++i) {
      double norm = log_sum_exp(log_resp.row(i));
      ll += norm;
      log_resp.row(i).array() -= norm;
    }
    ll /= n;
    if (report) report->log_likelihood.push_back(ll);
    if (it > 0 && ll - prev_ll < config.tolerance * (std::abs(prev_ll) + 1.0)) {
      if (ll < prev_ll - 1e-8 * (std::abs(prev_ll) + 1.0)) {
        std::string msg = "EM log-likelihood decreased beyond tolerance";
        if (report) report->warnings.push_back(msg);
        std::cerr << "afa: warning: " << msg << "\n";
      }
      break;
    }
    prev_ll = ll;

    // M-step
    Eigen::MatrixXd resp = log_resp.array().exp();
    for (int c = 0; c < k; ++c) {
      double nk = resp.col(c).sum();
      if (nk < 1e-10) {
        log_w[c] = std::log(1e-10);
        continue;  // dead component keeps its parameters
      }
      log_w[c] = std::log(nk / n);
      means.row(c) = (resp.col(c).transpose() * rows) / nk;
      Eigen::MatrixXd centered = rows.rowwise() - means.row(c);
      Eigen::MatrixXd cov =
          centered.transpose() * resp.col(c).asDiagonal() * centered / nk;
      cov.diagonal().array() += config.reg_floor;
      covs[c] = 0.5 * (cov + cov.transpose());
    }
    // renormalize weights in case a component died
    double wnorm = log_sum_exp(log_w);
    log_w.array() -= wnorm;
    ++m_steps;
  }
  if (report) report->iterations = m_steps;

  std::vector<GaussianComponent> comps(k);
  for (int c = 0; c < k; ++c) {
    comps[c].mean = means.row(c).transpose();
    comps[c].covariance = covs[c];
    comps[c].log_weight = log_w[c];
  }
  return Mixture(std::move(comps));
}

MixtureSurrogate MixtureSurrogate::classification_model(
    TaskSpec task, std::vector<Mixture> per_class, Eigen::VectorXd log_priors,
    StandardizationParams standardization, std::vector<std::string> names) {
  task.kind = TaskKind::kClassification;
  task.validate();
  if (static_cast<int>(per_class.size()) != task.num_classes ||
      log_priors.size() != task.num_classes)
    throw std::invalid_argument("per-class mixtures/priors size mismatch");
  for (const auto& m : per_class) {
    if (m.dimension() != task.d)
      throw std::invalid_argument("class mixture dimension mismatch");
  }
  MixtureSurrogate s;
  s.task_ = task;
  s.class_mixtures_ = std::move(per_class);
  s.log_priors_ = log_priors.array() - log_sum_exp(log_priors);
  s.standardization_ = standardization.mean.size()
                           ? std::move(standardization)
                           : StandardizationParams::identity(task.d);
  s.feature_names_ = std::move(names);
  s.rebuild_feature_mixture();
  return s;
}

MixtureSurrogate MixtureSurrogate::regression_model(
    TaskSpec task, Mixture joint_with_target,
    StandardizationParams standardization, std::vector<std::string> names) {
  task.kind = TaskKind::kRegression;
  task.validate();
  if (joint_with_target.dimension() != task.d + 1)
    throw std::invalid_argument("regression joint must have d+1 dimensions");
  MixtureSurrogate s;
  s.task_ = task;
  s.joint_ = std::move(joint_with_target);
  s.standardization_ = standardization.mean.size()
                           ? std::move(standardization)
                           : StandardizationParams::identity(task.d);
  s.feature_names_ = std::move(names);
  s.rebuild_feature_mixture();
  return s;
}

MixtureSurrogate MixtureSurrogate::unsupervised_model(
    TaskSpec task, Mixture joint, StandardizationParams standardization,
    std::vector<std::string> names) {
  task.kind = TaskKind::kUnsupervised;
  task.validate();
  if (joint.dimension() != task.d)
    throw std::invalid_argument("joint mixture dimension mismatch");
  MixtureSurrogate s;
  s.task_ = task;
  s.joint_ = std::move(joint);
  s.standardization_ = standardization.mean.size()
                           ? std::move(standardization)
                           : StandardizationParams::identity(task.d);
  s.feature_names_ = std::move(names);
  s.rebuild_feature_mixture();
  return s;
}

void MixtureSurrogate::rebuild_feature_mixture() {
  switch (task_.kind) {
    case TaskKind::kClassification: {
      std::vector<GaussianComponent> comps;
      for (int c = 0; c < task_.num_classes; ++c) {
        for (const auto& comp : class_mixtures_[c].components()) {
          GaussianComponent out = comp;
          out.log_weight += log_priors_[c];
          comps.push_back(std::move(out));
        }
      }
      feature_mixture_ = Mixture(std::move(comps));
      break;
    }
    case TaskKind::kRegression: {
      std::vector<int> dims(task_.d);
      std::iota(dims.begin(), dims.end(), 0);
      feature_mixture_ = joint_.marginal(dims);
      break;
    }
    case TaskKind::kUnsupervised:
      feature_mixture_ = joint_;
      break;
  }
}

MixtureSurrogate MixtureSurrogate::fit_em(const Dataset& data,
                                          int num_components, SplitRng rng,
                                          const FitConfig& config,
                                          FitReport* report) {
  data.validate();
  if (data.n() < num_components)
    throw std::invalid_argument("need at least num_components rows");

  switch (data.task.kind) {
    case TaskKind::kClassification: {
      std::vector<Mixture> per_class;
      Eigen::VectorXd log_priors(data.task.num_classes);
      for (int c = 0; c < data.task.num_classes; ++c) {
        std::vector<int> rows;
        for (int r = 0; r < data.n(); ++r) {
          if (data.targets[r].label() == c) rows.push_back(r);
        }
        if (rows.empty())
          throw DataError("class " + std::to_string(c) + " has no training rows");
        int k = num_components;
        if (static_cast<int>(rows.size()) < k) {
          k = static_cast<int>(rows.size());
          std::string msg = "class " + std::to_string(c) + " has only " +
                            std::to_string(rows.size()) +
                            " rows; fitting " + std::to_string(k) +
                            " components";
          if (report) report->warnings.push_back(msg);
          std::cerr << "afa: warning: " << msg << "\n";
        }
        Eigen::MatrixXd x(rows.size(), data.d());
        for (std::size_t i = 0; i < rows.size(); ++i)
          x.row(i) = data.features.row(rows[i]);
        FitReport class_report;
        per_class.push_back(fit_mixture_em(
            x, k, rng.split("class", c), config, &class_report));
        if (report) {
          report->iterations = std::max(report->iterations, class_report.iterations);
          if (report->log_likelihood.size() < class_report.log_likelihood.size())
            report->log_likelihood = class_report.log_likelihood;
          report->warnings.insert(report->warnings.end(),
                                  class_report.warnings.begin(),
                                  class_report.warnings.end());
        }
        log_priors[c] =
            std::log(static_cast<double>(rows.size()) / data.n());
      }
      StandardizationParams id = StandardizationParams::identity(data.d());
      return classification_model(data.task, std::move(per_class), log_priors,
                                  id, data.feature_names);
    }
    case TaskKind::kRegression: {
      Eigen::MatrixXd x(data.n(), data.d() + 1);
      x.leftCols(data.d()) = data.features;
      for (int r = 0; r < data.n(); ++r) x(r, data.d()) = data.targets[r].scalar();
      Mixture joint =
          fit_mixture_em(x, num_components, rng.split("joint"), config, report);
      return regression_model(data.task, std::move(joint),
                              StandardizationParams::identity(data.d()),
                              data.feature_names);
    }
    case TaskKind::kUnsupervised: {
      Mixture joint = fit_mixture_em(data.features, num_components,
                                     rng.split("joint"), config, report);
      return unsupervised_model(data.task, std::move(joint),
                                StandardizationParams::identity(data.d()),
                                data.feature_names);
    }
  }
  throw std::logic_error("unknown task kind");
}

MixtureSurrogate MixtureSurrogate::with_standardization(
    StandardizationParams params) const {
  params.validate();
  if (params.mean.size() != task_.d)
    throw std::invalid_argument("standardization dimension mismatch");
  MixtureSurrogate out = *this;
  out.standardization_ = std::move(params);
  return out;
}

const Eigen::VectorXd& MixtureSurrogate::class_log_priors() const {
  if (task_.kind != TaskKind::kClassification)
    throw std::logic_error("class priors need a classification task");
  return log_priors_;
}

const Mixture& MixtureSurrogate::class_mixture(int c) const {
  if (task_.kind != TaskKind::kClassification)
    throw std::logic_error("class mixtures need a classification task");
  return class_mixtures_.at(c);
}

double MixtureSurrogate::log_marginal(const PartialInstance& x_o,
                                      std::optional<int> cls) const {
  if (x_o.dimension() != task_.d)
    throw std::invalid_argument("instance dimension mismatch");
  if (x_o.observed().empty()) return 0.0;
  const std::vector<int>& obs = x_o.observed().indices();
  Eigen::VectorXd vals = x_o.observed_values();

  double out;
  if (task_.kind == TaskKind::kClassification) {
    if (cls) {
      out = class_mixtures_.at(*cls).marginal(obs).log_density(vals);
    } else {
      Eigen::VectorXd terms(task_.num_classes);
      for (int c = 0; c < task_.num_classes; ++c)
        terms[c] =
            log_priors_[c] + class_mixtures_[c].marginal(obs).log_density(vals);
      out = log_sum_exp(terms);
    }
  } else {
    if (cls) throw std::invalid_argument("class given for a non-classification task");
    out = feature_mixture_.marginal(obs).log_density(vals);
  }
  if (std::isnan(out)) throw NumericError("non-finite log marginal");
  return out;
}

Mixture MixtureSurrogate::condition(const PartialInstance& x_o,
                                    std::optional<int> cls) const {
  if (x_o.dimension() != task_.d)
    throw std::invalid_argument("instance dimension mismatch");
  if (x_o.observed().size() >= task_.d)
    throw std::invalid_argument("no unobserved features to condition over");
  const std::vector<int>& obs = x_o.observed().indices();
  Eigen::VectorXd vals = x_o.observed_values();

  if (task_.kind == TaskKind::kClassification) {
    if (cls) return class_mixtures_.at(*cls).conditional(obs, vals);
    return feature_mixture_.conditional(obs, vals);
  }
  if (cls) throw std::invalid_argument("class given for a non-classification task");
  if (task_.kind == TaskKind::kUnsupervised)
    return joint_.conditional(obs, vals);
  // regression: condition the (d+1)-joint, then drop the trailing target
  Mixture with_target = joint_.conditional(obs, vals);
  std::vector<int> keep(with_target.dimension() - 1);
  std::iota(keep.begin(), keep.end(), 0);
  return with_target.marginal(keep);
}

Mixture MixtureSurrogate::condition_with_target(const PartialInstance& x_o) const {
  if (task_.kind != TaskKind::kRegression)
    throw std::logic_error("condition_with_target needs a regression task");
  const std::vector<int>& obs = x_o.observed().indices();
  return joint_.conditional(obs, x_o.observed_values());
}

Eigen::VectorXd MixtureSurrogate::class_posterior(const PartialInstance& x_o) const {
  if (task_.kind != TaskKind::kClassification)
    throw std::logic_error("class posterior needs a classification task");
  Eigen::VectorXd logits(task_.num_classes);
  for (int c = 0; c < task_.num_classes; ++c)
    logits[c] = log_priors_[c] + log_marginal(x_o, c);
  return logits.array() - log_sum_exp(logits);
}

std::pair<double, double> MixtureSurrogate::regression_posterior(
    const PartialInstance& x_o) const {
  Mixture cond = condition_with_target(x_o);
  int y_pos = cond.dimension() - 1;  // target is the trailing coordinate
  double mean = 0.0;
  for (const auto& c : cond.components())
    mean += std::exp(c.log_weight) * c.mean[y_pos];
  return {mean, cond.coordinate_variance(y_pos)};
}

Eigen::MatrixXd MixtureSurrogate::sample_conditional(const PartialInstance& x_o,
                                                     int count,
                                                     SplitRng& rng) const {
  if (count < 1) throw std::invalid_argument("sample count must be >= 1");
  return condition(x_o).sample(count, rng);
}

double MixtureSurrogate::conditional_entropy_y(const PartialInstance& x_o) const {
  switch (task_.kind) {
    case TaskKind::kClassification:
      return categorical_entropy(class_posterior(x_o));
    case TaskKind::kRegression: {
      auto [mean, var] = regression_posterior(x_o);
      (void)mean;
      // 0.5 * log(2*pi*e*var)
      return 0.5 * (kLog2Pi + 1.0 + std::log(std::max(var, 1e-300)));
    }
    case TaskKind::kUnsupervised:
      throw std::logic_error("target entropy needs a supervised task");
  }
  throw std::logic_error("unknown task kind");
}

double MixtureSurrogate::heldout_masked_objective(const Dataset& heldout,
                                                  SplitRng& rng) const {
  if (heldout.n() == 0) throw std::invalid_argument("held-out set is empty");
  double acc = 0.0;
  for (int r = 0; r < heldout.n(); ++r) {
    FeatureIndexSet mask = sample_mask(task_.d, rng);
    Eigen::VectorXd row = heldout.features.row(r).transpose();
    PartialInstance x_o = PartialInstance::from(row, mask);
    PartialInstance x_all =
        PartialInstance::from(row, FeatureIndexSet::full(task_.d));
    double term = log_marginal(x_all) - log_marginal(x_o);
    if (task_.kind == TaskKind::kClassification) {
      term += class_posterior(x_o)[heldout.targets[r].label()];
    } else if (task_.kind == TaskKind::kRegression) {
      Mixture cond = condition_with_target(x_o);
      std::vector<int> y_pos{cond.dimension() - 1};
      Eigen::VectorXd y(1);
      y[0] = heldout.targets[r].scalar();
      term += cond.marginal(y_pos).log_density(y);
    }
    acc += term;
  }
  return acc / heldout.n();
}

namespace {

void save_mixture(std::ostream& out, const Mixture& m) {
  out << "components " << m.num_components() << " dim " << m.dimension() << "\n";
  for (const auto& c : m.components()) {
    out << "log_weight " << hex_double(c.log_weight) << "\n";
    out << "mean ";
    write_vector(out, c.mean);
    out << "cov\n";
    write_matrix(out, c.covariance);
  }
}

Mixture load_mixture(std::istream& in) {
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
  return Mixture(std::move(comps));
}

}  // namespace

void MixtureSurrogate::save(std::ostream& out) const {
  out << "afa-surrogate v1\n";
  out << "task " << to_string(task_.kind) << "\n";
  out << "d " << task_.d << "\n";
  out << "num_classes " << task_.num_classes << "\n";
  out << "ordering "
      << (task_.ordering == OrderingConstraint::kChronological ? "chronological"
                                                               : "none")
      << "\n";
  out << "feature_names " << feature_names_.size();
  for (const auto& n : feature_names_) out << " " << n;
  out << "\n";
  out << "standardization_mean ";
  write_vector(out, standardization_.mean);
  out << "standardization_scale ";
  write_vector(out, standardization_.scale);
  if (task_.kind == TaskKind::kClassification) {
    out << "log_priors ";
    write_vector(out, log_priors_);
    for (int c = 0; c < task_.num_classes; ++c) {
      out << "class " << c << "\n";
      save_mixture(out, class_mixtures_[c]);
    }
  } else {
    out << "joint\n";
    save_mixture(out, joint_);
  }
  out << "end\n";
}

void MixtureSurrogate::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file: " + path);
  save(out);
}

MixtureSurrogate MixtureSurrogate::load(std::istream& in) {
  expect_keyword(in, "afa-surrogate");
  std::string version = expect_token(in);
  if (version != "v1") throw DataError("unsupported surrogate version " + version);
  expect_keyword(in, "task");
  TaskSpec task;
  task.kind = task_kind_from_string(expect_token(in));
  expect_keyword(in, "d");
  task.d = read_int(in);
  expect_keyword(in, "num_classes");
  task.num_classes = read_int(in);
  expect_keyword(in, "ordering");
  task.ordering = expect_token(in) == "chronological"
                      ? OrderingConstraint::kChronological
                      : OrderingConstraint::kNone;
  expect_keyword(in, "feature_names");
  int num_names = read_int(in);
  std::vector<std::string> names(num_names);
  for (auto& n : names) n = expect_token(in);
  expect_keyword(in, "standardization_mean");
  StandardizationParams std_params;
  std_params.mean = read_vector(in, task.d);
  expect_keyword(in, "standardization_scale");
  std_params.scale = read_vector(in, task.d);

  MixtureSurrogate s;
  if (task.kind == TaskKind::kClassification) {
    expect_keyword(in, "log_priors");
    Eigen::VectorXd priors = read_vector(in, task.num_classes);
    std::vector<Mixture> per_class;
    for (int c = 0; c < task.num_classes; ++c) {
      expect_keyword(in, "class");
      if (read_int(in) != c) throw DataError("class blocks out of order");
      per_class.push_back(load_mixture(in));
    }
    s = classification_model(task, std::move(per_class), priors, std_params,
                             names);
  } else {
    expect_keyword(in, "joint");
    Mixture joint = load_mixture(in);
    s = task.kind == TaskKind::kRegression
            ? regression_model(task, std::move(joint), std_params, names)
            : unsupervised_model(task, std::move(joint), std_params, names);
  }
  expect_keyword(in, "end");
  return s;
}

MixtureSurrogate MixtureSurrogate::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  return load(in);
}

}  // namespace afa
