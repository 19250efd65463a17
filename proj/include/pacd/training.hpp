#pragma once

// Lower-level and retraining objectives: standard cross-entropy, Gaussian
// augmentation, MACER and an approximate SmoothAdv, plus PGD against the
// noise-averaged classifier and an Adam-based trainer.

#include <algorithm>
#include <numeric>

#include "pacd/smoothing.hpp"

namespace pacd {

enum class TrainMethod { Standard, GaussAug, Macer, SmoothAdv };

inline const char* to_string(TrainMethod m) {
  switch (m) {
    case TrainMethod::Standard: return "standard";
    case TrainMethod::GaussAug: return "gaussaug";
    case TrainMethod::Macer: return "macer";
    case TrainMethod::SmoothAdv: return "smoothadv";
  }
  return "?";
}

inline TrainMethod parse_train_method(const std::string& s) {
  if (s == "standard") return TrainMethod::Standard;
  if (s == "gaussaug" || s == "ga") return TrainMethod::GaussAug;
  if (s == "macer") return TrainMethod::Macer;
  if (s == "smoothadv") return TrainMethod::SmoothAdv;
  throw ContractError("unknown training method: " + s);
}

struct MacerParams {
  int k = 16;
  double lam = 16.0;
  double gamma = 8.0;
};

struct SmoothAdvParams {
  double adv_l2 = 0.25;
  int pgd_steps = 2;
  int k_noise = 1;
};

struct TrainConfig {
  TrainMethod method = TrainMethod::GaussAug;
  double lr = 0.001;
  int epochs = 100;
  int batch_size = 100;
  double weight_decay = 0.0;
  std::uint64_t seed = 0;
  SmoothingConfig smoothing;
  MacerParams macer;
  SmoothAdvParams smoothadv;
  Box box;

  void validate() const {
    require(lr > 0.0, "TrainConfig: learning rate must be positive");
    require(epochs >= 1, "TrainConfig: epochs must be positive");
    require(batch_size >= 1, "TrainConfig: batch size must be positive");
    require(weight_decay >= 0.0, "TrainConfig: weight decay must be nonnegative");
    require(smoothing.sigma >= 0.0, "TrainConfig: sigma must be nonnegative");
    require(macer.k >= 1, "TrainConfig: MACER k must be at least 1");
    require(smoothadv.pgd_steps >= 1 && smoothadv.k_noise >= 1, "TrainConfig: invalid SmoothAdv parameters");
  }
};

// Forward pass over `copies` noisy versions of each row of x. Row
// i * copies + j of the stacked input is x_i + sigma * noise_{i*copies+j}.
struct NoisyForward {
  ForwardCache cache;
  Matrix copy_probs;  // tempered softmax per copy
  Matrix mean_probs;  // rows x C, average over copies
  int copies = 1;
  double alpha_temp = 1.0;
};

inline Matrix stack_noisy(const Matrix& x, const Matrix& noise, double sigma, int copies) {
  require(noise.rows() == x.rows() * copies && noise.cols() == x.cols(), "stack_noisy: noise shape mismatch");
  Matrix stacked(noise.rows(), noise.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    for (int j = 0; j < copies; ++j) {
      const Eigen::Index r = i * copies + j;
      stacked.row(r) = x.row(i) + sigma * noise.row(r);
    }
  return stacked;
}

inline NoisyForward noisy_forward(const ModelParams& params, const Matrix& x, const Matrix& noise, double sigma,
                                  int copies, double alpha_temp) {
  NoisyForward out;
  out.copies = copies;
  out.alpha_temp = alpha_temp;
  out.cache = forward(params, stack_noisy(x, noise, sigma, copies));
  out.copy_probs = tempered_softmax_rows(out.cache.logits(), alpha_temp);
  out.mean_probs = Matrix::Zero(x.rows(), out.copy_probs.cols());
  for (Eigen::Index i = 0; i < x.rows(); ++i)
    out.mean_probs.row(i) = out.copy_probs.middleRows(i * copies, copies).colwise().mean();
  return out;
}

// Pulls dL/d(mean_probs) back to the parameters and to the clean rows of x
// (input gradients of all copies of a row are summed).
inline Backward noisy_backward(const ModelParams& params, const NoisyForward& fwd, const Matrix& dmean) {
  const int k = fwd.copies;
  Matrix dlogits(fwd.copy_probs.rows(), fwd.copy_probs.cols());
  for (Eigen::Index r = 0; r < dlogits.rows(); ++r) {
    const auto p = fwd.copy_probs.row(r);
    const auto g = dmean.row(r / k);
    const double gp = g.dot(p);
    dlogits.row(r) = (fwd.alpha_temp / k) * (p.array() * (g.array() - gp)).matrix();
  }
  Backward b = backward(params, fwd.cache, dlogits);
  Matrix per_row = Matrix::Zero(dmean.rows(), b.grad_inputs.cols());
  for (Eigen::Index i = 0; i < per_row.rows(); ++i)
    per_row.row(i) = b.grad_inputs.middleRows(i * k, k).colwise().sum();
  b.grad_inputs = std::move(per_row);
  return b;
}

/// Per-sample MACER objective on noise-averaged probabilities:
/// -log z_y + (lam * sigma / 2) * max(gamma - xi, 0) * [argmax z == y],
/// xi = Phi^-1(z_y) - Phi^-1(z_runner_up). The indicator is a constant for
/// differentiation. Returns the mean and fills dL/dz (already divided by n).
inline double macer_objective(const Matrix& mean_probs, const Labels& y, const MacerParams& macer, double sigma,
                              Matrix* dmean, double* robust_term = nullptr) {
  const Eigen::Index n = mean_probs.rows();
  dmean->setZero(n, mean_probs.cols());
  double total = 0.0;
  double robust = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int label = y[static_cast<std::size_t>(i)];
    const Vector z = mean_probs.row(i).transpose();
    constexpr double kLogFloor = 1e-12;
    if (z(label) > kLogFloor) {
      total -= std::log(z(label));
      (*dmean)(i, label) -= 1.0 / z(label);
    } else {
      total -= std::log(kLogFloor);
    }
    if (argmax(z) != label) continue;
    const int other = runner_up(z, label);
    const auto [za, da] = clamped_quantile(z(label));
    const auto [zb, db] = clamped_quantile(z(other));
    const double hinge = macer.gamma - (za - zb);
    if (hinge <= 0.0) continue;
    const double scale = 0.5 * macer.lam * sigma;
    robust += scale * hinge;
    (*dmean)(i, label) -= scale * da;
    (*dmean)(i, other) += scale * db;
  }
  *dmean /= static_cast<double>(n);
  if (robust_term) *robust_term = robust / static_cast<double>(n);
  return (total + robust) / static_cast<double>(n);
}

/// PGD ascent on -log(mean_j softmax(alpha * z(x' + sigma eta_j))_y) for every
/// row of x, with frozen noise (rows * k_noise standard normal rows). Steps
/// are l2-normalized with size 2 * adv_l2 / steps; each iterate is projected
/// onto the l2 ball around x and onto the box. The best iterate per row
/// (the start included) is returned.
inline Matrix pgd_smoothed_batch(const ModelParams& params, const Matrix& x, const Labels& y, double adv_l2,
                                 int steps, const Matrix& noise, int k_noise, double sigma, double alpha_temp,
                                 const Box& box = {}) {
  require(steps >= 1, "pgd_smoothed: steps must be positive");
  require(adv_l2 >= 0.0, "pgd_smoothed: radius must be nonnegative");
  const double step = 2.0 * adv_l2 / steps;
  Matrix current = x;
  Matrix best = x;
  Vector best_obj = Vector::Constant(x.rows(), -std::numeric_limits<double>::infinity());
  for (int it = 0; it <= steps; ++it) {
    NoisyForward fwd = noisy_forward(params, current, noise, sigma, k_noise, alpha_temp);
    Matrix dmean = Matrix::Zero(x.rows(), fwd.mean_probs.cols());
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const int label = y[static_cast<std::size_t>(i)];
      const double p = std::max(fwd.mean_probs(i, label), 1e-300);
      const double obj = -std::log(p);
      if (obj > best_obj(i)) {
        best_obj(i) = obj;
        best.row(i) = current.row(i);
      }
      dmean(i, label) = -1.0 / p;
    }
    if (it == steps || step == 0.0) break;
    const Matrix g = noisy_backward(params, fwd, dmean).grad_inputs;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      const double gn = g.row(i).norm();
      if (!(gn > 0.0) || !std::isfinite(gn)) continue;
      Eigen::RowVectorXd delta = current.row(i) + (step / gn) * g.row(i) - x.row(i);
      const double dn = delta.norm();
      if (dn > adv_l2) delta *= adv_l2 / dn;
      current.row(i) = (x.row(i) + delta).cwiseMax(box.lo).cwiseMin(box.hi);
    }
  }
  return best;
}

inline Vector pgd_smoothed(const ModelParams& params, const Vector& x, int y, double adv_l2, int steps, int k_noise,
                           double sigma, double alpha_temp, Rng& rng, const Box& box = {}) {
  const Matrix noise = rng.normal_matrix(k_noise, x.size());
  return pgd_smoothed_batch(params, x.transpose(), Labels{y}, adv_l2, steps, noise, k_noise, sigma, alpha_temp, box)
      .row(0)
      .transpose();
}

/// A robust training loss with its randomness frozen: the noise draws (and,
/// for SmoothAdv, the adversarial offsets) are fixed at construction or by
/// refresh_adversarial, so repeated evaluations at different parameters or
/// inputs are deterministic. Gradients are returned with respect to the
/// parameters and the clean input rows.
class RobustLoss {
 public:
  static RobustLoss draw(const TrainConfig& cfg, const Labels& y, Eigen::Index dim, Rng& rng) {
    RobustLoss l;
    l.method_ = cfg.method;
    l.sigma_ = cfg.smoothing.sigma;
    l.alpha_temp_ = cfg.smoothing.alpha_temp;
    l.weight_decay_ = cfg.weight_decay;
    l.macer_ = cfg.macer;
    l.smoothadv_ = cfg.smoothadv;
    l.box_ = cfg.box;
    l.y_ = y;
    const auto rows = static_cast<Eigen::Index>(y.size());
    switch (cfg.method) {
      case TrainMethod::Standard: l.copies_ = 1; break;
      case TrainMethod::GaussAug: l.copies_ = 1; break;
      case TrainMethod::Macer: l.copies_ = cfg.macer.k; break;
      case TrainMethod::SmoothAdv: l.copies_ = cfg.smoothadv.k_noise; break;
    }
    if (cfg.method != TrainMethod::Standard) l.noise_ = rng.normal_matrix(rows * l.copies_, dim);
    l.offset_ = Matrix::Zero(rows, dim);
    return l;
  }

  TrainMethod method() const { return method_; }
  const Matrix& noise() const { return noise_; }
  const Matrix& adversarial_offset() const { return offset_; }

  // Recomputes SmoothAdv adversarial points against `params`; the offsets
  // x_adv - x stay fixed until the next refresh.
  void refresh_adversarial(const ModelParams& params, const Matrix& x) {
    if (method_ != TrainMethod::SmoothAdv || smoothadv_.adv_l2 == 0.0) return;
    const Matrix adv = pgd_smoothed_batch(params, x, y_, smoothadv_.adv_l2, smoothadv_.pgd_steps, noise_, copies_,
                                          sigma_, 1.0, box_);
    offset_ = adv - x;
  }

  LossGrad operator()(const ModelParams& params, const Matrix& x) const {
    require(x.rows() == static_cast<Eigen::Index>(y_.size()), "RobustLoss: row count differs from labels");
    require(x.rows() > 0, "RobustLoss: empty batch");
    LossGrad out;
    if (method_ == TrainMethod::Macer) {
      NoisyForward fwd = noisy_forward(params, x, noise_, sigma_, copies_, alpha_temp_);
      Matrix dmean;
      out.loss = macer_objective(fwd.mean_probs, y_, macer_, sigma_, &dmean);
      Backward b = noisy_backward(params, fwd, dmean);
      out.grad_params = std::move(b.grad_params);
      out.grad_inputs = std::move(b.grad_inputs);
    } else {
      Matrix inputs;
      Labels labels;
      if (method_ == TrainMethod::Standard) {
        inputs = x;
        labels = y_;
      } else {
        inputs = stack_noisy(x + offset_, noise_, sigma_, copies_);
        labels.reserve(y_.size() * static_cast<std::size_t>(copies_));
        for (int label : y_)
          for (int j = 0; j < copies_; ++j) labels.push_back(label);
      }
      const ForwardCache cache = forward(params, inputs);
      Matrix dlogits;
      out.loss = cross_entropy_with_grad(cache.logits(), labels, &dlogits);
      Backward b = backward(params, cache, dlogits);
      out.grad_params = std::move(b.grad_params);
      if (copies_ == 1) {
        out.grad_inputs = std::move(b.grad_inputs);
      } else {
        out.grad_inputs = Matrix::Zero(x.rows(), x.cols());
        for (Eigen::Index i = 0; i < x.rows(); ++i)
          out.grad_inputs.row(i) = b.grad_inputs.middleRows(i * copies_, copies_).colwise().sum();
      }
    }
    out.loss += weight_penalty(params, weight_decay_, &out.grad_params);
    return out;
  }

 private:
  TrainMethod method_ = TrainMethod::Standard;
  double sigma_ = 0.0;
  double alpha_temp_ = 1.0;
  double weight_decay_ = 0.0;
  MacerParams macer_;
  SmoothAdvParams smoothadv_;
  Box box_;
  Labels y_;
  int copies_ = 1;
  Matrix noise_;
  Matrix offset_;
};

/// Cross-entropy on x + eta with one fresh draw per sample, plus decay.
inline LossGrad gauss_aug_loss(const ModelParams& params, const Batch& batch, double sigma, double weight_decay,
                               Rng& rng) {
  require(sigma >= 0.0, "gauss_aug_loss: sigma must be nonnegative");
  TrainConfig cfg;
  cfg.method = TrainMethod::GaussAug;
  cfg.smoothing.sigma = sigma;
  cfg.weight_decay = weight_decay;
  return RobustLoss::draw(cfg, batch.y, batch.x.cols(), rng)(params, batch.x);
}

inline LossGrad macer_loss(const ModelParams& params, const Batch& batch, const MacerParams& macer, double sigma,
                           double alpha_temp, double weight_decay, Rng& rng) {
  require(macer.k >= 1, "macer_loss: k must be at least 1");
  TrainConfig cfg;
  cfg.method = TrainMethod::Macer;
  cfg.macer = macer;
  cfg.smoothing.sigma = sigma;
  cfg.smoothing.alpha_temp = alpha_temp;
  cfg.weight_decay = weight_decay;
  return RobustLoss::draw(cfg, batch.y, batch.x.cols(), rng)(params, batch.x);
}

/// Replaces each point by its PGD adversarial example against the current
/// parameters, then applies Gaussian augmentation with the same noise draws.
inline LossGrad smoothadv_loss(const ModelParams& params, const Batch& batch, const SmoothAdvParams& sa,
                               double sigma, double weight_decay, Rng& rng, const Box& box = {}) {
  TrainConfig cfg;
  cfg.method = TrainMethod::SmoothAdv;
  cfg.smoothadv = sa;
  cfg.smoothing.sigma = sigma;
  cfg.weight_decay = weight_decay;
  cfg.box = box;
  RobustLoss loss = RobustLoss::draw(cfg, batch.y, batch.x.cols(), rng);
  loss.refresh_adversarial(params, batch.x);
  return loss(params, batch.x);
}

struct Adam {
  double lr = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  Vector m, v;
  long t = 0;

  void step(Vector& params, const Vector& grad) {
    if (m.size() != params.size()) {
      m = Vector::Zero(params.size());
      v = Vector::Zero(params.size());
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * grad;
    v = beta2 * v + (1.0 - beta2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    params.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
  }
};

struct TrainResult {
  ModelParams params;
  std::vector<double> epoch_loss;  // mean mini-batch loss per epoch
};

/// Adam on the selected robust loss over shuffled mini-batches. Everything
/// random (initialization, shuffling, noise) derives from cfg.seed.
inline TrainResult train(const Batch& data, const NetworkSpec& spec, const TrainConfig& cfg) {
  cfg.validate();
  require(!data.empty(), "train: empty dataset");
  data.validate(spec.num_classes());
  require(data.x.cols() == spec.input_dim(), "train: feature dimension differs from network input");
  const Rng root(cfg.seed);
  TrainResult out{init_params(spec, root.split(1).seed()), {}};
  Adam adam;
  adam.lr = cfg.lr;
  std::vector<Eigen::Index> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng shuffler = root.split(2, static_cast<std::uint64_t>(epoch));
    shuffler.shuffle(order);
    double sum = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      const Batch mb = data.rows({order.begin() + static_cast<std::ptrdiff_t>(start),
                                  order.begin() + static_cast<std::ptrdiff_t>(end)});
      Rng noise = root.split(3 + static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(batches));
      RobustLoss loss = RobustLoss::draw(cfg, mb.y, mb.x.cols(), noise);
      loss.refresh_adversarial(out.params, mb.x);
      const LossGrad lg = loss(out.params, mb.x);
      if (!std::isfinite(lg.loss) || !lg.grad_params.allFinite())
        throw NumericalError("train: non-finite loss at epoch " + std::to_string(epoch));
      adam.step(out.params.flat, lg.grad_params);
      sum += lg.loss;
      ++batches;
    }
    out.epoch_loss.push_back(sum / batches);
  }
  return out;
}

inline double accuracy(const ModelParams& params, const Batch& batch) {
  require(!batch.empty(), "accuracy: empty batch");
  const Labels pred = NetworkClassifier(params).predict(batch.x);
  long correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == batch.y[i];
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace pacd
