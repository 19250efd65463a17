#pragma once

// Randomized smoothing: Gaussian quantiles, Clopper-Pearson bounds, the
// Monte-Carlo CERTIFY procedure and its soft (differentiable) counterpart.

#include <concepts>
#include <numbers>
#include <optional>
#include <vector>

#include <boost/math/special_functions/beta.hpp>

#include "pacd/diffnet.hpp"

namespace pacd {

struct SmoothingConfig {
  double sigma = 0.25;
  int k = 16;
  double alpha_temp = 16.0;
  std::uint64_t seed = 0;

  void validate() const {
    require(sigma > 0.0, "SmoothingConfig: sigma must be positive");
    require(k >= 1, "SmoothingConfig: k must be at least 1");
    require(alpha_temp > 0.0, "SmoothingConfig: inverse temperature must be positive");
  }
};

struct CertifyConfig {
  int n0 = 100;
  int n = 100000;
  double alpha_fail = 0.001;
  int batch = 1000;

  void validate() const {
    require(n0 >= 1 && n >= n0, "CertifyConfig: need n >= n0 >= 1");
    require(alpha_fail > 0.0 && alpha_fail < 1.0, "CertifyConfig: alpha must lie in (0,1)");
    require(batch >= 1, "CertifyConfig: batch must be positive");
  }
};

struct CertificationResult {
  std::optional<int> predicted;  // empty means abstain
  double radius = 0.0;
  double pa_lower = 0.0;

  bool abstained() const { return !predicted.has_value(); }
};

struct RadiusReport {
  struct Row {
    Eigen::Index index;
    int true_label;
    CertificationResult result;
    double counted_radius;
  };
  std::vector<Row> per_point;
  double acr = 0.0;
  double aca = 0.0;
};

inline double normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

inline double normal_pdf(double x) { return std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi); }

/// Inverse standard normal CDF. Acklam's rational approximation followed by
/// one Halley step against the erfc-based CDF; the upper half is mirrored
/// from the lower half so the result is exactly antisymmetric.
inline double std_normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) throw DomainError("std_normal_quantile: p must lie in (0,1)");
  if (p > 0.5) return -std_normal_quantile(1.0 - p);
  if (p == 0.5) return 0.0;

  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
                                 1.383577518672690e+02,  -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
                                 6.680131188771972e+01,  -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
                                 -2.549732539343734e+00, 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
                                 3.754408661907416e+00};
  double x;
  if (p < 0.02425) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) * q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }
  const double e = normal_cdf(x) - p;
  const double u = e * std::sqrt(2.0 * std::numbers::pi) * std::exp(0.5 * x * x);
  return x - u / (1.0 + 0.5 * x * u);
}

/// One-sided (1 - alpha) lower confidence bound on a binomial proportion:
/// the alpha quantile of Beta(successes, trials - successes + 1).
inline double clopper_pearson_lower(long successes, long trials, double alpha_fail) {
  require(trials >= 1, "clopper_pearson_lower: need at least one trial");
  require(successes >= 0 && successes <= trials, "clopper_pearson_lower: successes out of range");
  require(alpha_fail > 0.0 && alpha_fail < 1.0, "clopper_pearson_lower: alpha must lie in (0,1)");
  if (successes == 0) return 0.0;
  return boost::math::ibeta_inv(static_cast<double>(successes), static_cast<double>(trials - successes + 1),
                                alpha_fail);
}

// sigma/2 * (Phi^-1(pA) - Phi^-1(pB)).
inline double two_sided_radius(double pa, double pb, double sigma) {
  return 0.5 * sigma * (std_normal_quantile(pa) - std_normal_quantile(pb));
}

/// Certified radius from a class histogram, taking p_B = 1 - lower(p_A) so
/// the radius is sigma * Phi^-1(lower(p_A)). Abstains unless the bound
/// exceeds one half.
inline CertificationResult radius_from_counts(int top_class, const std::vector<long>& counts, long n, double sigma,
                                              double alpha_fail) {
  require(top_class >= 0 && static_cast<std::size_t>(top_class) < counts.size(),
          "radius_from_counts: top class out of range");
  long total = 0;
  for (long c : counts) total += c;
  require(total == n, "radius_from_counts: counts must sum to n");
  CertificationResult out;
  out.pa_lower = clopper_pearson_lower(counts[static_cast<std::size_t>(top_class)], n, alpha_fail);
  if (out.pa_lower > 0.5) {
    out.predicted = top_class;
    out.radius = sigma * std_normal_quantile(out.pa_lower);
  }
  return out;
}

template <class C>
concept BaseClassifier = requires(const C& c, const Matrix& x) {
  { c.predict(x) } -> std::same_as<Labels>;
  { c.num_classes() } -> std::convertible_to<int>;
};

// Hard argmax classifier backed by a network.
class NetworkClassifier {
 public:
  explicit NetworkClassifier(const ModelParams& params) : params_(&params) {}

  Labels predict(const Matrix& x) const {
    const Matrix logits = forward_logits(*params_, x);
    Labels out(static_cast<std::size_t>(logits.rows()));
    for (Eigen::Index r = 0; r < logits.rows(); ++r) out[static_cast<std::size_t>(r)] = argmax(logits.row(r));
    return out;
  }
  int num_classes() const { return params_->spec.num_classes(); }

 private:
  const ModelParams* params_;
};

/// Histogram of hard predictions on `num` Gaussian corruptions of x, drawn in
/// chunks. Chunk c uses the child stream rng.split(stage, c), so the counts
/// do not depend on how chunks are scheduled.
template <BaseClassifier C>
std::vector<long> sample_counts(const C& f, const Vector& x, double sigma, long num, int chunk, const Rng& rng,
                                std::uint64_t stage) {
  std::vector<long> counts(static_cast<std::size_t>(f.num_classes()), 0);
  const long chunks = (num + chunk - 1) / chunk;
  for (long c = 0; c < chunks; ++c) {
    const long rows = std::min<long>(chunk, num - c * chunk);
    Rng child = rng.split(stage, static_cast<std::uint64_t>(c));
    Matrix noisy = sigma * child.normal_matrix(rows, x.size());
    noisy.rowwise() += x.transpose();
    for (int label : f.predict(noisy)) ++counts[static_cast<std::size_t>(label)];
  }
  return counts;
}

/// CERTIFY: select the top class from n0 draws, then bound its probability
/// from n fresh draws.
template <BaseClassifier C>
CertificationResult certify(const C& f, const Vector& x, const SmoothingConfig& smoothing, const CertifyConfig& cert,
                            const Rng& rng) {
  smoothing.validate();
  cert.validate();
  const std::vector<long> selection = sample_counts(f, x, smoothing.sigma, cert.n0, cert.batch, rng, 0);
  int top = 0;
  for (std::size_t c = 1; c < selection.size(); ++c)
    if (selection[c] > selection[static_cast<std::size_t>(top)]) top = static_cast<int>(c);
  const std::vector<long> counts = sample_counts(f, x, smoothing.sigma, cert.n, cert.batch, rng, 1);
  return radius_from_counts(top, counts, cert.n, smoothing.sigma, cert.alpha_fail);
}

inline CertificationResult certify(const ModelParams& params, const Vector& x, const SmoothingConfig& smoothing,
                                   const CertifyConfig& cert, const Rng& rng) {
  return certify(NetworkClassifier(params), x, smoothing, cert, rng);
}

/// Mean over k Gaussian draws of the tempered softmax. With sigma = 0 this is
/// the tempered softmax at x itself.
inline Vector soft_smooth_output(const ModelParams& params, const Vector& x, const SmoothingConfig& smoothing,
                                 Rng& rng) {
  require(smoothing.sigma >= 0.0 && smoothing.k >= 1, "soft_smooth_output: invalid smoothing config");
  if (smoothing.sigma == 0.0) return tempered_softmax(forward_logits(params, x.transpose()).row(0).transpose(),
                                                      smoothing.alpha_temp);
  Matrix noisy = smoothing.sigma * rng.normal_matrix(smoothing.k, x.size());
  noisy.rowwise() += x.transpose();
  return tempered_softmax_rows(forward_logits(params, noisy), smoothing.alpha_temp).colwise().mean().transpose();
}

inline constexpr double kProbClamp = 1e-6;

// Phi^-1 of p clamped to [1e-6, 1 - 1e-6], and its derivative (zero when
// the clamp binds).
inline std::pair<double, double> clamped_quantile(double p) {
  if (p <= kProbClamp) return {std_normal_quantile(kProbClamp), 0.0};
  if (p >= 1.0 - kProbClamp) return {std_normal_quantile(1.0 - kProbClamp), 0.0};
  const double z = std_normal_quantile(p);
  return {z, 1.0 / normal_pdf(z)};
}

// Largest entry other than `label`; ties go to the smallest index.
inline int runner_up(const Vector& probs, int label) {
  int best = -1;
  for (Eigen::Index c = 0; c < probs.size(); ++c) {
    if (c == label) continue;
    if (best < 0 || probs(c) > probs(best)) best = static_cast<int>(c);
  }
  return best;
}

/// Soft certified radius sigma/2 [Phi^-1(p_y) - Phi^-1(max_{c != y} p_c)],
/// zero when argmax(probs) is not the label. If `grad` is given it receives
/// d radius / d probs.
inline double soft_radius(const Vector& probs, int true_label, double sigma, Vector* grad = nullptr) {
  require(true_label >= 0 && true_label < probs.size(), "soft_radius: label out of range");
  if (grad) grad->setZero(probs.size());
  if (argmax(probs) != true_label) return 0.0;
  const int other = runner_up(probs, true_label);
  const auto [za, da] = clamped_quantile(probs(true_label));
  const auto [zb, db] = clamped_quantile(probs(other));
  if (grad) {
    (*grad)(true_label) = 0.5 * sigma * da;
    (*grad)(other) = -0.5 * sigma * db;
  }
  return 0.5 * sigma * (za - zb);
}

/// Certifies every point (child stream rng.split(i) for point i) and
/// aggregates ACR and ACA. Wrong or abstained predictions count as radius 0.
template <BaseClassifier C>
RadiusReport acr_aca(const C& f, const Batch& points, const SmoothingConfig& smoothing, const CertifyConfig& cert,
                     const Rng& rng) {
  require(!points.empty(), "acr_aca: no points");
  RadiusReport report;
  double radius_sum = 0.0;
  long positive = 0;
  for (Eigen::Index i = 0; i < points.size(); ++i) {
    const int label = points.y[static_cast<std::size_t>(i)];
    CertificationResult res =
        certify(f, points.x.row(i).transpose(), smoothing, cert, rng.split(static_cast<std::uint64_t>(i)));
    const double counted = res.predicted == label ? res.radius : 0.0;
    radius_sum += counted;
    if (counted > 0.0) ++positive;
    report.per_point.push_back({i, label, res, counted});
  }
  report.acr = radius_sum / static_cast<double>(points.size());
  report.aca = static_cast<double>(positive) / static_cast<double>(points.size());
  return report;
}

inline RadiusReport acr_aca(const ModelParams& params, const Batch& points, const SmoothingConfig& smoothing,
                            const CertifyConfig& cert, const Rng& rng) {
  return acr_aca(NetworkClassifier(params), points, smoothing, cert, rng);
}

}  // namespace pacd
