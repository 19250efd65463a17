#pragma once

// Closed-form results for poisoning linear classifiers: the 1-D squared-loss
// problem with its two candidate optima, fractional poisoning, and the
// two-Gaussian toy.

#include <numeric>
#include <optional>

#include "pacd/diffnet.hpp"
#include "pacd/smoothing.hpp"

namespace pacd::analytic {

class SingularityError : public NumericalError {
 public:
  using NumericalError::NumericalError;
};

struct Linear1DInstance {
  std::vector<double> x_pos;
  std::vector<double> x_neg;
  double eps = 0.1;

  std::size_t n() const { return x_pos.size(); }
  double sum_pos() const { return std::accumulate(x_pos.begin(), x_pos.end(), 0.0); }
  double sum_neg() const { return std::accumulate(x_neg.begin(), x_neg.end(), 0.0); }

  void validate() const {
    require(!x_pos.empty() && x_pos.size() == x_neg.size(), "Linear1DInstance: classes need equal, nonzero size");
    require(sum_neg() < sum_pos(), "Linear1DInstance: need sum(x_neg) < sum(x_pos)");
    require(eps >= 0.0, "Linear1DInstance: eps must be nonnegative");
  }
};

struct LinearFit {
  double w = 0.0;
  double b = 0.0;
  double t = 0.0;  // decision threshold -b / w
};

/// Least-squares fit of w x + b to +1 on x_pos and -1 on u (equal counts).
inline LinearFit least_squares_linear_1d(const std::vector<double>& x_pos, const std::vector<double>& u) {
  require(!x_pos.empty() && x_pos.size() == u.size(), "least_squares_linear_1d: classes need equal, nonzero size");
  const double n2 = 2.0 * static_cast<double>(x_pos.size());
  double mean = 0.0;
  for (double x : x_pos) mean += x;
  for (double x : u) mean += x;
  mean /= n2;
  double sxx = 0.0, sxy = 0.0;
  for (double x : x_pos) {
    sxx += (x - mean) * (x - mean);
    sxy += (x - mean);
  }
  for (double x : u) {
    sxx += (x - mean) * (x - mean);
    sxy -= (x - mean);
  }
  if (!(sxx > 0.0)) throw SingularityError("least_squares_linear_1d: all points coincide");
  LinearFit fit;
  fit.w = sxy / sxx;
  fit.b = -fit.w * mean;
  if (fit.w == 0.0) throw SingularityError("least_squares_linear_1d: zero slope, threshold undefined");
  fit.t = mean;
  return fit;
}

/// Mean over the sample of max(orientation * (t - x), 0): the distance to
/// the threshold of correctly classified negatives, zero otherwise.
inline double margin_cost(double t, int orientation, const std::vector<double>& neg_sample) {
  require(!neg_sample.empty(), "margin_cost: empty sample");
  require(orientation == 1 || orientation == -1, "margin_cost: orientation must be +1 or -1");
  double total = 0.0;
  for (double x : neg_sample) total += std::max(orientation * (t - x), 0.0);
  return total / static_cast<double>(neg_sample.size());
}

enum class OptimumCase { Case1, Case2 };

struct Linear1DOptima {
  std::vector<double> case1;                 // x_neg - eps
  std::optional<std::vector<double>> case2;  // x_neg + eps, when feasible
  double t_case1 = 0.0;
  std::optional<double> t_case2;
  double eps_threshold = 0.0;  // (sum x_pos - sum x_neg) / n
  double cost_case1 = 0.0;
  std::optional<double> cost_case2;
  OptimumCase global = OptimumCase::Case1;

  const std::vector<double>& global_u() const { return global == OptimumCase::Case1 ? case1 : *case2; }
};

/// Both candidate optima of the squared-loss poisoning problem. Case 2
/// exists only when eps >= (sum x_pos - sum x_neg) / n; the global optimum
/// is whichever has the lower upper cost on x_neg (Case 1 on ties).
inline Linear1DOptima linear1d_optima(const Linear1DInstance& inst) {
  inst.validate();
  const double n = static_cast<double>(inst.n());
  Linear1DOptima out;
  out.eps_threshold = (inst.sum_pos() - inst.sum_neg()) / n;
  out.case1 = inst.x_neg;
  for (double& u : out.case1) u -= inst.eps;
  out.t_case1 = (inst.sum_pos() + inst.sum_neg()) / (2.0 * n) - 0.5 * inst.eps;
  out.cost_case1 = margin_cost(out.t_case1, 1, inst.x_neg);
  if (inst.eps >= out.eps_threshold) {
    std::vector<double> u2 = inst.x_neg;
    for (double& u : u2) u += inst.eps;
    out.case2 = std::move(u2);
    out.t_case2 = (inst.sum_pos() + inst.sum_neg()) / (2.0 * n) + 0.5 * inst.eps;
    out.cost_case2 = margin_cost(*out.t_case2, -1, inst.x_neg);
    if (*out.cost_case2 < out.cost_case1) out.global = OptimumCase::Case2;
  }
  return out;
}

/// Threshold after shifting the first ceil(alpha * n) negatives by
/// -eps_tilde and refitting.
inline double fractional_threshold(const Linear1DInstance& inst, double alpha_frac, double eps_tilde) {
  inst.validate();
  require(alpha_frac >= 0.0 && alpha_frac <= 1.0, "fractional_threshold: alpha must lie in [0,1]");
  const auto m = static_cast<std::size_t>(std::ceil(alpha_frac * static_cast<double>(inst.n()) - 1e-12));
  std::vector<double> u = inst.x_neg;
  for (std::size_t i = 0; i < m; ++i) u[i] -= eps_tilde;
  return least_squares_linear_1d(inst.x_pos, u).t;
}

struct GaussToyConfig {
  Vector mu_neg = Vector::Constant(2, 0.2);
  Vector mu_pos = Vector::Constant(2, 0.8);
  double sigma_data = 0.3;
  double eps = 0.1;
  int n_per_class = 500;
  double sigma_smooth = 0.25;

  void validate() const {
    require(mu_neg.size() == mu_pos.size() && mu_neg.size() > 0, "GaussToyConfig: mean dimensions differ");
    require((mu_neg - mu_pos).norm() > 0.0, "GaussToyConfig: means must differ");
    require(sigma_data > 0.0 && eps >= 0.0 && n_per_class >= 1, "GaussToyConfig: invalid parameters");
  }
};

struct GaussToyOracle {
  double clean_acr_analytic = 0.0;     // distance from mu_neg to the clean bisector
  double poisoned_acr_analytic = 0.0;  // distance from mu_neg to the poisoned bisector
  double drop = 0.0;
  // Expected positive-part distance over the negative-class distribution,
  // i.e. the mean certified radius of a perfect linear smoothed classifier.
  double clean_expected_radius = 0.0;
  double poisoned_expected_radius = 0.0;
  double clean_accuracy = 0.0;
  double poisoned_accuracy = 0.0;
};

// E[max(D + s Z, 0)] for standard normal Z.
inline double expected_positive_part(double mean, double sd) {
  const double z = mean / sd;
  return mean * normal_cdf(z) + sd * normal_pdf(z);
}

/// Boundary geometry of the two-Gaussian toy. Poisoning moves every
/// negative-class coordinate by eps away from the positive mean; the test
/// distribution stays put, so the radius of its mean drops by the shift of
/// the perpendicular bisector.
inline GaussToyOracle gauss_toy_oracle(const GaussToyConfig& cfg) {
  cfg.validate();
  auto distance_to_bisector = [&](const Vector& a, const Vector& b) {
    const Vector normal = (b - a).normalized();
    return normal.dot(0.5 * (a + b) - cfg.mu_neg);
  };
  const Vector shift = (cfg.mu_pos - cfg.mu_neg).unaryExpr([](double d) { return d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0; });
  const Vector mu_poisoned = cfg.mu_neg - cfg.eps * shift;
  GaussToyOracle out;
  out.clean_acr_analytic = distance_to_bisector(cfg.mu_neg, cfg.mu_pos);
  out.poisoned_acr_analytic = distance_to_bisector(mu_poisoned, cfg.mu_pos);
  out.drop = out.clean_acr_analytic - out.poisoned_acr_analytic;
  out.clean_expected_radius = expected_positive_part(out.clean_acr_analytic, cfg.sigma_data);
  out.poisoned_expected_radius = expected_positive_part(out.poisoned_acr_analytic, cfg.sigma_data);
  out.clean_accuracy = normal_cdf(out.clean_acr_analytic / cfg.sigma_data);
  out.poisoned_accuracy = normal_cdf(out.poisoned_acr_analytic / cfg.sigma_data);
  return out;
}

/// n_per_class draws from each isotropic Gaussian; label 0 for mu_neg,
/// label 1 for mu_pos, negatives first.
inline Batch gauss_toy_sample(const GaussToyConfig& cfg, Rng& rng) {
  cfg.validate();
  const Eigen::Index d = cfg.mu_neg.size();
  const Eigen::Index n = cfg.n_per_class;
  Batch out{cfg.sigma_data * rng.normal_matrix(2 * n, d), Labels(static_cast<std::size_t>(2 * n), 0)};
  for (Eigen::Index i = 0; i < n; ++i) out.x.row(i) += cfg.mu_neg.transpose();
  for (Eigen::Index i = n; i < 2 * n; ++i) {
    out.x.row(i) += cfg.mu_pos.transpose();
    out.y[static_cast<std::size_t>(i)] = 1;
  }
  return out;
}

}  // namespace pacd::analytic
