#pragma once

// Clean-label poisoning against certified training: the bilevel problem
// that lowers the soft certified radius of a target class, the standard
// accuracy-poisoning variant, the watermark baseline and pool selection.

#include <set>
#include <variant>

#include "pacd/analytic.hpp"
#include "pacd/bilevel.hpp"
#include "pacd/training.hpp"

namespace pacd {

struct PoisonSet {
  Matrix base_x;
  Labels labels;
  Matrix delta;
  double eps = 0.0;

  Matrix composite() const { return base_x + delta; }
  Batch as_batch() const { return {composite(), labels}; }

  void validate(const Box& box = {}) const {
    require(base_x.rows() == static_cast<Eigen::Index>(labels.size()) && delta.rows() == base_x.rows() &&
                delta.cols() == base_x.cols(),
            "PoisonSet: shape mismatch");
    constexpr double kSlack = 1e-12;
    require(delta.size() == 0 || delta.cwiseAbs().maxCoeff() <= eps + kSlack, "PoisonSet: perturbation exceeds eps");
    const Matrix u = composite();
    require(u.size() == 0 || (u.minCoeff() >= box.lo - kSlack && u.maxCoeff() <= box.hi + kSlack),
            "PoisonSet: poison outside the feasible box");
  }
};

struct ClassWide {};
struct Fraction {
  double alpha = 1.0;
};
struct TargetPoints {
  Matrix targets;  // test points whose radius the attacker wants to shrink
  int pool_size = 1;
};
using PoisonMode = std::variant<ClassWide, Fraction, TargetPoints>;

enum class UpperObjective { SoftRadius, NegValidationLoss };

struct AttackConfig {
  int target_class = 0;
  TrainMethod lower_method = TrainMethod::GaussAug;
  NetworkSpec network;
  SmoothingConfig smoothing;
  BilevelConfig bilevel;
  int clean_batch = 1000;  // lower-level batch size, poison rows included
  int poison_batch = 100;
  int val_batch = 100;
  PoisonMode mode = ClassWide{};
  double eps = 0.1;
  Box box;
  double weight_decay = 0.0;
  MacerParams macer{2, 1.0, 8.0};
  SmoothAdvParams smoothadv;
  UpperObjective upper = UpperObjective::SoftRadius;

  void validate() const {
    network.validate();
    smoothing.validate();
    bilevel.validate();
    require(clean_batch >= 1 && poison_batch >= 1 && val_batch >= 1, "AttackConfig: batch sizes must be positive");
    require(poison_batch <= clean_batch, "AttackConfig: poison batch exceeds lower-level batch");
    require(eps >= 0.0, "AttackConfig: eps must be nonnegative");
    require(target_class >= 0 && target_class < network.num_classes(), "AttackConfig: target class out of range");
  }

  TrainConfig lower_train_config() const {
    TrainConfig t;
    t.method = lower_method;
    t.smoothing = smoothing;
    t.weight_decay = weight_decay;
    t.macer = macer;
    t.smoothadv = smoothadv;
    t.box = box;
    return t;
  }
};

struct AttackReport {
  PoisonSet poison;
  std::vector<double> upper_history;  // xi per outer iteration
  std::vector<BilevelHistoryRow> history;
  AttackConfig config;
};

namespace detail {

// Sampling without replacement; reshuffles when a pass is exhausted.
class Cursor {
 public:
  explicit Cursor(Eigen::Index n = 0) : order_(static_cast<std::size_t>(n)) {
    std::iota(order_.begin(), order_.end(), Eigen::Index{0});
    pos_ = order_.size();
  }

  std::vector<Eigen::Index> take(std::size_t count, Rng& rng) {
    std::vector<Eigen::Index> out;
    count = std::min(count, order_.size());
    while (out.size() < count) {
      if (pos_ == order_.size()) {
        rng.shuffle(order_);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<Eigen::Index> order_;
  std::size_t pos_ = 0;
};

}  // namespace detail

/// Bilevel poisoning problem. u holds all poison inputs (row-major, one row
/// per base point), v the network parameters. Each outer iteration draws a
/// lower-level mini-batch of clean and poison rows plus a validation batch,
/// and freezes all noise for that iteration.
class PoisonProblem : public BilevelProblem {
 public:
  PoisonProblem(Batch clean, Batch base, Batch val, AttackConfig cfg)
      : clean_(std::move(clean)), base_(std::move(base)), val_(std::move(val)), cfg_(std::move(cfg)) {
    cfg_.validate();
    require(!base_.empty(), "PoisonProblem: no base points");
    require(!val_.empty(), "PoisonProblem: no validation points");
    const int c = cfg_.network.num_classes();
    clean_.validate(c);
    base_.validate(c);
    val_.validate(c);
    clean_cursor_ = detail::Cursor(clean_.size());
    poison_cursor_ = detail::Cursor(base_.size());
    val_cursor_ = detail::Cursor(val_.size());
  }

  Eigen::Index dim() const { return base_.x.cols(); }
  const Batch& base() const { return base_; }

  Vector initial_u() const override { return flatten(base_.x); }

  Vector initial_v(Rng& rng) const override { return init_params(cfg_.network, rng.split(7).seed()).flat; }

  PoisonConstraint constraint() const override { return {flatten(base_.x), cfg_.eps, cfg_.box}; }

  void begin_iteration(int /*iter*/, const Vector& u, const Vector& v, Rng& rng) override {
    Rng sampler = rng.split(0);
    const auto n_poison = static_cast<std::size_t>(std::min<Eigen::Index>(cfg_.poison_batch, base_.size()));
    const std::size_t n_clean =
        clean_.empty() ? 0 : static_cast<std::size_t>(cfg_.clean_batch) - static_cast<std::size_t>(cfg_.poison_batch);
    clean_rows_ = clean_cursor_.take(n_clean, sampler);
    poison_rows_ = poison_cursor_.take(n_poison, sampler);
    const auto val_rows = val_cursor_.take(static_cast<std::size_t>(cfg_.val_batch), sampler);
    val_batch_ = val_.rows(val_rows);

    labels_.clear();
    for (Eigen::Index r : clean_rows_) labels_.push_back(clean_.y[static_cast<std::size_t>(r)]);
    for (Eigen::Index r : poison_rows_) labels_.push_back(base_.y[static_cast<std::size_t>(r)]);

    Rng lower_noise = rng.split(1);
    lower_loss_ = RobustLoss::draw(cfg_.lower_train_config(), labels_, dim(), lower_noise);
    lower_loss_.refresh_adversarial(params(v), assemble(u));
    Rng val_noise = rng.split(2);
    val_noise_ = val_noise.normal_matrix(val_batch_.size() * cfg_.smoothing.k, dim());
  }

  Vector lower_grad_v(const Vector& u, const Vector& v) const override {
    return lower_loss_(params(v), assemble(u)).grad_params;
  }

  Vector lower_grad_u(const Vector& u, const Vector& v) const override {
    const LossGrad lg = lower_loss_(params(v), assemble(u));
    Vector g = Vector::Zero(u.size());
    const Eigen::Index offset = static_cast<Eigen::Index>(clean_rows_.size());
    for (std::size_t i = 0; i < poison_rows_.size(); ++i)
      g.segment(poison_rows_[i] * dim(), dim()) = lg.grad_inputs.row(offset + static_cast<Eigen::Index>(i));
    return g;
  }

  UpperEval upper(const Vector& u, const Vector& v) const override {
    const ModelParams p = params(v);
    UpperEval out;
    out.grad_u = Vector::Zero(u.size());
    if (cfg_.upper == UpperObjective::NegValidationLoss) {
      const LossGrad lg = loss_grad(p, val_batch_);
      out.value = -lg.loss;
      out.grad_v = -lg.grad_params;
      return out;
    }
    const int k = cfg_.smoothing.k;
    const NoisyForward fwd =
        noisy_forward(p, val_batch_.x, val_noise_, cfg_.smoothing.sigma, k, cfg_.smoothing.alpha_temp);
    const auto n = static_cast<double>(val_batch_.size());
    Matrix dmean = Matrix::Zero(fwd.mean_probs.rows(), fwd.mean_probs.cols());
    Vector g;
    for (Eigen::Index i = 0; i < val_batch_.size(); ++i) {
      const Vector z = fwd.mean_probs.row(i).transpose();
      out.value += soft_radius(z, val_batch_.y[static_cast<std::size_t>(i)], cfg_.smoothing.sigma, &g) / n;
      dmean.row(i) = g.transpose() / n;
    }
    out.grad_v = noisy_backward(p, fwd, dmean).grad_params;
    return out;
  }

 private:
  ModelParams params(const Vector& v) const { return {v, cfg_.network}; }

  // Lower-level inputs: sampled clean rows, then the current poison rows.
  Matrix assemble(const Vector& u) const {
    Matrix x(static_cast<Eigen::Index>(clean_rows_.size() + poison_rows_.size()), dim());
    Eigen::Index r = 0;
    for (Eigen::Index i : clean_rows_) x.row(r++) = clean_.x.row(i);
    for (Eigen::Index i : poison_rows_) x.row(r++) = u.segment(i * dim(), dim()).transpose();
    return x;
  }

  Batch clean_, base_, val_;
  AttackConfig cfg_;
  detail::Cursor clean_cursor_, poison_cursor_, val_cursor_;
  std::vector<Eigen::Index> clean_rows_, poison_rows_;
  Labels labels_;
  Batch val_batch_;
  RobustLoss lower_loss_;
  Matrix val_noise_;
};

inline AttackReport run_poison_problem(const Batch& clean, const Batch& base, const Batch& val,
                                       const AttackConfig& cfg, const Rng& rng) {
  PoisonProblem problem(clean, base, val, cfg);
  BilevelResult res = solve(problem, cfg.bilevel, rng);
  AttackReport report;
  report.config = cfg;
  report.history = res.history;
  for (const auto& row : res.history) report.upper_history.push_back(row.xi);
  report.poison.base_x = base.x;
  report.poison.labels = base.y;
  report.poison.eps = cfg.eps;
  report.poison.delta = unflatten(res.state.u, base.size(), base.x.cols()) - base.x;
  return report;
}

/// Poisons `base` so that a model trained (with cfg.lower_method) on clean
/// plus poison has a small soft certified radius on the target class.
inline AttackReport pacd_attack(const Batch& clean, const Batch& base, const Batch& val, AttackConfig cfg,
                                const Rng& rng) {
  require(cfg.lower_method != TrainMethod::Standard, "pacd_attack: lower level must be a robust training method");
  for (int label : base.y) require(label == cfg.target_class, "pacd_attack: base points must be target-class");
  for (int label : val.y) require(label == cfg.target_class, "pacd_attack: validation points must be target-class");
  cfg.upper = UpperObjective::SoftRadius;
  return run_poison_problem(clean, base, val, cfg, rng);
}

/// Accuracy poisoning: standard training below, maximize validation
/// cross-entropy above.
inline AttackReport standard_poison(const Batch& clean, const Batch& base, const Batch& val, AttackConfig cfg,
                                    const Rng& rng) {
  cfg.lower_method = TrainMethod::Standard;
  cfg.upper = UpperObjective::NegValidationLoss;
  return run_poison_problem(clean, base, val, cfg, rng);
}

/// Blends a random non-target row into each base row at the given opacity
/// and clips the result to the eps ball and the box.
inline PoisonSet watermark_baseline(const Batch& base, const Batch& others, double opacity, double eps, Rng& rng,
                                    const Box& box = {}) {
  require(!others.empty(), "watermark_baseline: no non-target points to blend");
  require(opacity >= 0.0 && opacity <= 1.0, "watermark_baseline: opacity must lie in [0,1]");
  require(others.x.cols() == base.x.cols(), "watermark_baseline: dimension mismatch");
  PoisonSet out{base.x, base.y, Matrix::Zero(base.x.rows(), base.x.cols()), eps};
  for (Eigen::Index i = 0; i < base.size(); ++i) {
    const auto other = static_cast<Eigen::Index>(rng.below(static_cast<std::size_t>(others.size())));
    for (Eigen::Index j = 0; j < base.x.cols(); ++j) {
      const double b = base.x(i, j);
      const double blend = opacity * others.x(other, j) + (1.0 - opacity) * b;
      const double u = std::clamp(blend, std::max(b - eps, box.lo), std::min(b + eps, box.hi));
      out.delta(i, j) = u - b;
    }
  }
  return out;
}

struct AttackSplit {
  Batch clean;  // unalterable training points
  Batch base;   // target-class points the attacker perturbs
  std::vector<Eigen::Index> base_indices;
};

/// Splits a training set into the clean part and the poison pool. ClassWide
/// takes every target-class point; Fraction a uniform ceil(alpha n) subset;
/// TargetPoints the pool_size nearest target-class points to each target.
inline AttackSplit split_for_attack(const Batch& train, int target_class, const PoisonMode& mode, Rng& rng) {
  std::vector<Eigen::Index> target_idx;
  for (std::size_t i = 0; i < train.y.size(); ++i)
    if (train.y[i] == target_class) target_idx.push_back(static_cast<Eigen::Index>(i));
  require(!target_idx.empty(), "select_poison_pool: target class absent from training data");

  std::vector<Eigen::Index> chosen;
  if (std::holds_alternative<ClassWide>(mode)) {
    chosen = target_idx;
  } else if (const auto* f = std::get_if<Fraction>(&mode)) {
    require(f->alpha >= 0.0 && f->alpha <= 1.0, "select_poison_pool: fraction must lie in [0,1]");
    const auto m = static_cast<std::size_t>(std::ceil(f->alpha * static_cast<double>(target_idx.size()) - 1e-12));
    std::vector<Eigen::Index> shuffled = target_idx;
    if (m < shuffled.size()) rng.shuffle(shuffled);
    chosen.assign(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(m));
    std::sort(chosen.begin(), chosen.end());
  } else {
    const auto& tp = std::get<TargetPoints>(mode);
    require(tp.pool_size >= 1, "select_poison_pool: pool size must be positive");
    require(tp.targets.cols() == train.x.cols(), "select_poison_pool: target dimension mismatch");
    std::set<Eigen::Index> pool;
    for (Eigen::Index t = 0; t < tp.targets.rows(); ++t) {
      std::vector<std::pair<double, Eigen::Index>> dist;
      for (Eigen::Index i : target_idx) dist.push_back({(train.x.row(i) - tp.targets.row(t)).squaredNorm(), i});
      const auto keep = std::min<std::size_t>(static_cast<std::size_t>(tp.pool_size), dist.size());
      std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(keep), dist.end());
      for (std::size_t j = 0; j < keep; ++j) pool.insert(dist[j].second);
    }
    chosen.assign(pool.begin(), pool.end());
  }
  require(!chosen.empty(), "select_poison_pool: empty selection");

  std::vector<Eigen::Index> rest;
  std::size_t c = 0;
  for (Eigen::Index i = 0; i < train.size(); ++i) {
    if (c < chosen.size() && chosen[c] == i) {
      ++c;
      continue;
    }
    rest.push_back(i);
  }
  return {train.rows(rest), train.rows(chosen), chosen};
}

inline Batch select_poison_pool(const Batch& train, int target_class, const PoisonMode& mode, Rng& rng) {
  return split_for_attack(train, target_class, mode, rng).base;
}

/// The 1-D squared-loss poisoning program: v = (w, b) fit to +1 on x_pos and
/// -1 on the negatives; the first `poisoned` negatives are free within eps;
/// the upper cost is the mean distance-to-threshold of correctly classified
/// points of `neg_sample`.
class Linear1DPoisonProblem : public BilevelProblem {
 public:
  Linear1DPoisonProblem(analytic::Linear1DInstance inst, std::size_t poisoned, std::vector<double> neg_sample)
      : inst_(std::move(inst)), poisoned_(poisoned), sample_(std::move(neg_sample)) {
    inst_.validate();
    require(poisoned_ >= 1 && poisoned_ <= inst_.n(), "Linear1DPoisonProblem: invalid poisoned count");
    require(!sample_.empty(), "Linear1DPoisonProblem: empty upper-level sample");
  }

  Vector initial_u() const override {
    return Eigen::Map<const Vector>(inst_.x_neg.data(), static_cast<Eigen::Index>(poisoned_));
  }

  // Starts from the clean least-squares fit.
  Vector initial_v(Rng& /*rng*/) const override {
    const auto fit = analytic::least_squares_linear_1d(inst_.x_pos, inst_.x_neg);
    return Eigen::Vector2d(fit.w, fit.b);
  }

  PoisonConstraint constraint() const override { return {initial_u(), inst_.eps, Box::unbounded()}; }

  Vector lower_grad_v(const Vector& u, const Vector& v) const override {
    const double n = static_cast<double>(inst_.n());
    Vector g = Vector::Zero(2);
    auto add = [&](double x, double y) {
      const double r = v(0) * x + v(1) - y;
      g(0) += r * x / n;
      g(1) += r / n;
    };
    for (double x : inst_.x_pos) add(x, 1.0);
    for (std::size_t i = 0; i < inst_.n(); ++i) add(negative(u, i), -1.0);
    return g;
  }

  Vector lower_grad_u(const Vector& u, const Vector& v) const override {
    const double n = static_cast<double>(inst_.n());
    Vector g(u.size());
    for (Eigen::Index i = 0; i < u.size(); ++i) g(i) = (v(0) * u(i) + v(1) + 1.0) * v(0) / n;
    return g;
  }

  UpperEval upper(const Vector& u, const Vector& v) const override {
    UpperEval out;
    out.grad_u = Vector::Zero(u.size());
    out.grad_v = Vector::Zero(2);
    const double w = v(0), b = v(1);
    if (w == 0.0) return out;
    const double t = -b / w;
    const int orient = w > 0 ? 1 : -1;
    out.value = analytic::margin_cost(t, orient, sample_);
    double frac = 0.0;
    for (double x : sample_) frac += orient * (t - x) > 0.0 ? 1.0 : 0.0;
    const double dxi_dt = orient * frac / static_cast<double>(sample_.size());
    out.grad_v(0) = dxi_dt * b / (w * w);
    out.grad_v(1) = -dxi_dt / w;
    return out;
  }

 private:
  double negative(const Vector& u, std::size_t i) const {
    return i < poisoned_ ? u(static_cast<Eigen::Index>(i)) : inst_.x_neg[i];
  }

  analytic::Linear1DInstance inst_;
  std::size_t poisoned_;
  std::vector<double> sample_;
};

}  // namespace pacd
