#include "afa/ood.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <numeric>

#include "afa/io.hpp"

namespace afa {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
constexpr double kVarianceFloor = 1e-8;
}  // namespace

NoiseSchedule NoiseSchedule::geometric(double sigma_high, double sigma_low,
                                       int levels) {
  if (levels < 1) throw std::invalid_argument("need at least one noise level");
  if (sigma_high <= sigma_low || sigma_low <= 0.0)
    throw std::invalid_argument("need sigma_high > sigma_low > 0");
  NoiseSchedule s;
  s.sigmas.resize(levels);
  if (levels == 1) {
    s.sigmas[0] = sigma_high;
  } else {
    double ratio = std::pow(sigma_low / sigma_high,
                            1.0 / static_cast<double>(levels - 1));
    double sigma = sigma_high;
    for (int i = 0; i < levels; ++i) {
      s.sigmas[i] = sigma;
      sigma *= ratio;
    }
  }
  s.validate();
  return s;
}

void NoiseSchedule::validate() const {
  if (sigmas.empty()) throw std::invalid_argument("empty noise schedule");
  for (std::size_t i = 0; i < sigmas.size(); ++i) {
    if (sigmas[i] <= 0.0)
      throw std::invalid_argument("noise levels must be positive");
    if (i > 0 && sigmas[i] >= sigmas[i - 1])
      throw std::invalid_argument("noise levels must be strictly decreasing");
  }
}

Eigen::VectorXd smoothed_marginal_score(const MixtureSurrogate& surrogate,
                                        const PartialInstance& x_o,
                                        double sigma) {
  if (x_o.observed().empty())
    throw std::invalid_argument("score needs at least one observed dimension");
  if (sigma <= 0.0) throw std::invalid_argument("sigma must be > 0");
  const std::vector<int>& obs = x_o.observed().indices();
  Mixture marginal = surrogate.feature_mixture().marginal(obs);
  return marginal.smoothed(sigma).score(x_o.observed_values());
}

Eigen::VectorXd score_stats(const MixtureSurrogate& surrogate,
                            const NoiseSchedule& schedule,
                            const PartialInstance& x_o) {
  if (x_o.observed().empty())
    throw std::invalid_argument("score stats need a nonempty observed set");
  schedule.validate();
  const std::vector<int>& obs = x_o.observed().indices();
  Mixture marginal = surrogate.feature_mixture().marginal(obs);
  Eigen::VectorXd values = x_o.observed_values();
  Eigen::VectorXd stats(schedule.levels());
  for (int i = 0; i < schedule.levels(); ++i)
    stats[i] = marginal.smoothed(schedule.sigmas[i]).score(values).norm();
  return stats;
}

ScoreStatsModel::ScoreStatsModel(NoiseSchedule schedule,
                                 std::vector<Eigen::VectorXd> coefficients,
                                 Eigen::VectorXd variances)
    : schedule_(std::move(schedule)),
      coefficients_(std::move(coefficients)),
      variances_(std::move(variances)) {
  schedule_.validate();
  const int levels = schedule_.levels();
  if (static_cast<int>(coefficients_.size()) != levels ||
      variances_.size() != levels)
    throw std::invalid_argument("score stats model size mismatch");
  for (int l = 0; l < levels; ++l) {
    if (coefficients_[l].size() != l + 3)
      throw std::invalid_argument("coefficient size mismatch at level " +
                                  std::to_string(l));
    if (variances_[l] <= 0.0)
      throw std::invalid_argument("conditional variances must be > 0");
  }
}

namespace {

Eigen::VectorXd level_features(const Eigen::VectorXd& stats, int level,
                               double fraction, int count) {
  Eigen::VectorXd f(level + 3);
  f[0] = 1.0;
  for (int j = 0; j < level; ++j) f[1 + j] = stats[j];
  f[level + 1] = fraction;
  f[level + 2] = std::log1p(static_cast<double>(count));
  return f;
}

}  // namespace

double ScoreStatsModel::log_density(const Eigen::VectorXd& stats,
                                    double observed_fraction,
                                    int observed_count) const {
  if (stats.size() != schedule_.levels())
    throw std::invalid_argument("stats size mismatch");
  double total = 0.0;
  for (int l = 0; l < schedule_.levels(); ++l) {
    Eigen::VectorXd f =
        level_features(stats, l, observed_fraction, observed_count);
    double mean = coefficients_[l].dot(f);
    double err = stats[l] - mean;
    total += -0.5 * (kLog2Pi + std::log(variances_[l]) +
                     err * err / variances_[l]);
  }
  return total;
}

MaskSampler default_nonempty_mask_sampler() {
  return [](int d, SplitRng& rng) {
    FeatureIndexSet mask = sample_mask(d, rng);
    while (mask.empty()) mask = sample_mask(d, rng);
    return mask;
  };
}

ScoreStatsModel fit_dose(const MixtureSurrogate& surrogate, const Dataset& data,
                         const NoiseSchedule& schedule,
                         const MaskSampler& mask_sampler, SplitRng rng,
                         bool mask_conditioning) {
  schedule.validate();
  if (data.n() < schedule.levels() + 4)
    throw std::invalid_argument("too few rows to fit the density of states");
  const int n = data.n();
  const int levels = schedule.levels();

  Eigen::MatrixXd stats(n, levels);
  Eigen::VectorXd fractions(n);
  Eigen::VectorXi counts(n);
  SplitRng mask_rng = rng.split("masks");
  for (int r = 0; r < n; ++r) {
    FeatureIndexSet mask = mask_sampler(data.d(), mask_rng);
    if (mask.empty()) throw std::invalid_argument("mask sampler produced an empty mask");
    PartialInstance x_o =
        PartialInstance::from(data.features.row(r).transpose(), mask);
    stats.row(r) = score_stats(surrogate, schedule, x_o).transpose();
    fractions[r] = static_cast<double>(mask.size()) / data.d();
    counts[r] = mask.size();
  }

  std::vector<Eigen::VectorXd> coefficients(levels);
  Eigen::VectorXd variances(levels);
  for (int l = 0; l < levels; ++l) {
    const int ncol = mask_conditioning ? l + 3 : l + 1;
    Eigen::MatrixXd design(n, ncol);
    for (int r = 0; r < n; ++r) {
      Eigen::VectorXd f =
          level_features(stats.row(r).transpose(), l, fractions[r], counts[r]);
      design.row(r) = f.head(ncol).transpose();
    }
    Eigen::VectorXd target = stats.col(l);
    Eigen::VectorXd beta = design.colPivHouseholderQr().solve(target);
    coefficients[l] = Eigen::VectorXd::Zero(l + 3);
    coefficients[l].head(ncol) = beta;
    double rss = (design * beta - target).squaredNorm();
    double var = rss / n;
    if (var < kVarianceFloor) {
      std::cerr << "afa: warning: degenerate score-stat variance at level "
                << l << ", flooring\n";
      var = kVarianceFloor;
    }
    variances[l] = var;
  }
  return ScoreStatsModel(schedule, std::move(coefficients), std::move(variances));
}

double ood_score(const ScoreStatsModel& model, const MixtureSurrogate& surrogate,
                 const PartialInstance& x_o) {
  Eigen::VectorXd stats = score_stats(surrogate, model.schedule(), x_o);
  double fraction =
      static_cast<double>(x_o.observed().size()) / x_o.dimension();
  return -model.log_density(stats, fraction, x_o.observed().size());
}

double ood_reward(const ScoreStatsModel& model, const MixtureSurrogate& surrogate,
                  const PartialInstance& x_o, double weight, bool enabled) {
  if (!enabled) return 0.0;
  return weight * ood_score(model, surrogate, x_o);
}

double auroc(const std::vector<double>& in_scores,
             const std::vector<double>& out_scores) {
  if (in_scores.empty() || out_scores.empty())
    throw std::invalid_argument("auroc needs nonempty score lists");
  struct Entry {
    double score;
    bool out;
  };
  std::vector<Entry> all;
  all.reserve(in_scores.size() + out_scores.size());
  for (double s : in_scores) all.push_back({s, false});
  for (double s : out_scores) all.push_back({s, true});
  std::sort(all.begin(), all.end(),
            [](const Entry& a, const Entry& b) { return a.score < b.score; });

  // midranks over ties
  double rank_sum_out = 0.0;
  std::size_t i = 0;
  while (i < all.size()) {
    std::size_t j = i;
    while (j < all.size() && all[j].score == all[i].score) ++j;
    double midrank = 0.5 * (i + 1 + j);  // ranks are 1-based
    for (std::size_t k = i; k < j; ++k) {
      if (all[k].out) rank_sum_out += midrank;
    }
    i = j;
  }
  double n_out = static_cast<double>(out_scores.size());
  double n_in = static_cast<double>(in_scores.size());
  double u = rank_sum_out - n_out * (n_out + 1.0) / 2.0;
  return u / (n_out * n_in);
}

void ScoreStatsModel::save(std::ostream& out) const {
  out << "afa-dose v1\n";
  out << "levels " << schedule_.levels() << "\n";
  out << "sigmas ";
  Eigen::VectorXd s(schedule_.levels());
  for (int i = 0; i < schedule_.levels(); ++i) s[i] = schedule_.sigmas[i];
  write_vector(out, s);
  for (int l = 0; l < schedule_.levels(); ++l) {
    out << "level " << l << " ncoef " << coefficients_[l].size() << "\n";
    write_vector(out, coefficients_[l]);
    out << "variance " << hex_double(variances_[l]) << "\n";
  }
  out << "end\n";
}

void ScoreStatsModel::save(const std::string& path) const {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write model file: " + path);
  save(out);
}

ScoreStatsModel ScoreStatsModel::load(std::istream& in) {
  expect_keyword(in, "afa-dose");
  std::string version = expect_token(in);
  if (version != "v1") throw DataError("unsupported dose version " + version);
  expect_keyword(in, "levels");
  int levels = read_int(in);
  expect_keyword(in, "sigmas");
  Eigen::VectorXd sig = read_vector(in, levels);
  NoiseSchedule schedule;
  schedule.sigmas.assign(sig.data(), sig.data() + levels);
  std::vector<Eigen::VectorXd> coefficients(levels);
  Eigen::VectorXd variances(levels);
  for (int l = 0; l < levels; ++l) {
    expect_keyword(in, "level");
    if (read_int(in) != l) throw DataError("level blocks out of order");
    expect_keyword(in, "ncoef");
    int ncoef = read_int(in);
    coefficients[l] = read_vector(in, ncoef);
    expect_keyword(in, "variance");
    variances[l] = parse_hex_double(expect_token(in));
  }
  expect_keyword(in, "end");
  return ScoreStatsModel(std::move(schedule), std::move(coefficients),
                         std::move(variances));
}

ScoreStatsModel ScoreStatsModel::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open model file: " + path);
  return load(in);
}

}  // namespace afa
