#pragma once

// Small dense networks with hand-written backpropagation.
//
// Parameters live in one flat vector, layer by layer: the weight matrix
// (fan_out x fan_in, row-major) followed by the bias vector. The hidden
// activation is applied to every layer except the last, whose outputs are
// the logits.

#include <functional>
#include <string>
#include <vector>

#include "pacd/core.hpp"

namespace pacd {

enum class Activation { ReLU, Identity };

struct NetworkSpec {
  std::vector<int> layer_sizes;
  Activation activation = Activation::ReLU;
  std::uint64_t init_seed = 0;

  int input_dim() const { return layer_sizes.front(); }
  int num_classes() const { return layer_sizes.back(); }
  int num_layers() const { return static_cast<int>(layer_sizes.size()) - 1; }

  Eigen::Index param_count() const {
    Eigen::Index n = 0;
    for (int l = 0; l < num_layers(); ++l)
      n += static_cast<Eigen::Index>(layer_sizes[l]) * layer_sizes[l + 1] + layer_sizes[l + 1];
    return n;
  }

  // Offset of layer l's weight block inside the flat vector.
  Eigen::Index weight_offset(int l) const {
    Eigen::Index n = 0;
    for (int k = 0; k < l; ++k)
      n += static_cast<Eigen::Index>(layer_sizes[k]) * layer_sizes[k + 1] + layer_sizes[k + 1];
    return n;
  }

  void validate() const {
    require(layer_sizes.size() >= 2, "NetworkSpec: need at least input and output sizes");
    for (int s : layer_sizes) require(s > 0, "NetworkSpec: layer sizes must be positive");
    require(num_classes() >= 2, "NetworkSpec: need at least two classes");
  }
};

struct ModelParams {
  Vector flat;
  NetworkSpec spec;

  void validate() const {
    spec.validate();
    require(flat.size() == spec.param_count(), "ModelParams: flat length does not match spec");
    require(flat.allFinite(), "ModelParams: non-finite parameter");
  }
};

struct Batch {
  Matrix x;
  Labels y;

  Eigen::Index size() const { return x.rows(); }
  bool empty() const { return x.rows() == 0; }

  void validate(int num_classes = -1) const {
    require(static_cast<std::size_t>(x.rows()) == y.size(), "Batch: row count differs from label count");
    require(x.allFinite(), "Batch: non-finite feature");
    if (num_classes > 0)
      for (int label : y) require(label >= 0 && label < num_classes, "Batch: label out of range");
  }

  Batch rows(const std::vector<Eigen::Index>& idx) const {
    Batch out{Matrix(static_cast<Eigen::Index>(idx.size()), x.cols()), Labels(idx.size())};
    for (std::size_t i = 0; i < idx.size(); ++i) {
      out.x.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
      out.y[i] = y[static_cast<std::size_t>(idx[i])];
    }
    return out;
  }

  Batch with_label(int label) const {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] == label) idx.push_back(static_cast<Eigen::Index>(i));
    return rows(idx);
  }

  Batch without_label(int label) const {
    std::vector<Eigen::Index> idx;
    for (std::size_t i = 0; i < y.size(); ++i)
      if (y[i] != label) idx.push_back(static_cast<Eigen::Index>(i));
    return rows(idx);
  }
};

inline Batch concat(const Batch& a, const Batch& b) {
  if (a.empty()) return b;
  if (b.empty()) return a;
  require(a.x.cols() == b.x.cols(), "concat: feature dimension mismatch");
  Batch out{Matrix(a.size() + b.size(), a.x.cols()), a.y};
  out.x << a.x, b.x;
  out.y.insert(out.y.end(), b.y.begin(), b.y.end());
  return out;
}

/// He-style normal initialization for ReLU layers (variance 2/fan_in),
/// Glorot-like 1/fan_in for identity layers; biases start at zero.
inline ModelParams init_params(const NetworkSpec& spec, std::uint64_t seed) {
  spec.validate();
  ModelParams p{Vector::Zero(spec.param_count()), spec};
  Rng rng(seed);
  for (int l = 0; l < spec.num_layers(); ++l) {
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    const double gain = spec.activation == Activation::ReLU && l + 1 < spec.num_layers() ? 2.0 : 1.0;
    const double scale = std::sqrt(gain / fan_in);
    const Eigen::Index off = spec.weight_offset(l);
    for (Eigen::Index i = 0; i < static_cast<Eigen::Index>(fan_in) * fan_out; ++i)
      p.flat(off + i) = scale * rng.normal();
  }
  return p;
}

inline ModelParams init_params(const NetworkSpec& spec) { return init_params(spec, spec.init_seed); }

namespace detail {

inline Eigen::Map<const Matrix> weights(const ModelParams& p, int l) {
  const auto& s = p.spec.layer_sizes;
  return {p.flat.data() + p.spec.weight_offset(l), s[l + 1], s[l]};
}

inline Eigen::Map<const Vector> bias(const ModelParams& p, int l) {
  const auto& s = p.spec.layer_sizes;
  return {p.flat.data() + p.spec.weight_offset(l) + static_cast<Eigen::Index>(s[l]) * s[l + 1], s[l + 1]};
}

}  // namespace detail

// Layer outputs kept for the backward pass: outputs[0] is the input,
// outputs[L] the logits.
struct ForwardCache {
  std::vector<Matrix> outputs;
  const Matrix& logits() const { return outputs.back(); }
};

inline ForwardCache forward(const ModelParams& params, const Matrix& x) {
  require(x.cols() == params.spec.input_dim(), "forward: input dimension mismatch");
  require(params.flat.size() == params.spec.param_count(), "forward: parameter length mismatch");
  const int layers = params.spec.num_layers();
  ForwardCache cache;
  cache.outputs.reserve(static_cast<std::size_t>(layers) + 1);
  cache.outputs.push_back(x);
  for (int l = 0; l < layers; ++l) {
    Matrix z = cache.outputs.back() * detail::weights(params, l).transpose();
    z.rowwise() += detail::bias(params, l).transpose();
    if (l + 1 < layers && params.spec.activation == Activation::ReLU) z = z.cwiseMax(0.0);
    cache.outputs.push_back(std::move(z));
  }
  return cache;
}

inline Matrix forward_logits(const ModelParams& params, const Matrix& x) {
  return std::move(forward(params, x).outputs.back());
}

struct Backward {
  Vector grad_params;
  Matrix grad_inputs;
};

// Backpropagates dL/dlogits through the cached forward pass.
inline Backward backward(const ModelParams& params, const ForwardCache& cache, const Matrix& dlogits) {
  const auto& spec = params.spec;
  const int layers = spec.num_layers();
  Backward out{Vector::Zero(params.flat.size()), Matrix()};
  Matrix delta = dlogits;
  for (int l = layers - 1; l >= 0; --l) {
    const Matrix& input = cache.outputs[static_cast<std::size_t>(l)];
    const Eigen::Index off = spec.weight_offset(l);
    const int fan_in = spec.layer_sizes[l];
    const int fan_out = spec.layer_sizes[l + 1];
    Eigen::Map<Matrix>(out.grad_params.data() + off, fan_out, fan_in).noalias() = delta.transpose() * input;
    out.grad_params.segment(off + static_cast<Eigen::Index>(fan_in) * fan_out, fan_out) =
        delta.colwise().sum().transpose();
    Matrix upstream = delta * detail::weights(params, l);
    if (l > 0 && spec.activation == Activation::ReLU)
      upstream = (input.array() > 0.0).select(upstream, 0.0);
    delta = std::move(upstream);
  }
  out.grad_inputs = std::move(delta);
  return out;
}

/// Softmax of alpha * logits, computed with max subtraction.
inline Vector tempered_softmax(const Vector& logits, double alpha_temp) {
  require(alpha_temp > 0.0, "tempered_softmax: inverse temperature must be positive");
  require(logits.allFinite(), "tempered_softmax: non-finite logits");
  Vector e = (alpha_temp * (logits.array() - logits.maxCoeff())).exp().matrix();
  return e / e.sum();
}

inline Matrix tempered_softmax_rows(const Matrix& logits, double alpha_temp) {
  require(alpha_temp > 0.0, "tempered_softmax: inverse temperature must be positive");
  require(logits.allFinite(), "tempered_softmax: non-finite logits");
  Matrix p = logits;
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    auto row = p.row(r);
    row = (alpha_temp * (row.array() - row.maxCoeff())).exp().matrix();
    row /= row.sum();
  }
  return p;
}

// Squared norm of weight entries (biases excluded) and its gradient.
inline double weight_penalty(const ModelParams& params, double weight_decay, Vector* grad) {
  if (weight_decay == 0.0) return 0.0;
  double total = 0.0;
  const auto& s = params.spec.layer_sizes;
  for (int l = 0; l < params.spec.num_layers(); ++l) {
    const Eigen::Index off = params.spec.weight_offset(l);
    const Eigen::Index n = static_cast<Eigen::Index>(s[l]) * s[l + 1];
    auto w = params.flat.segment(off, n);
    total += w.squaredNorm();
    if (grad) grad->segment(off, n) += 2.0 * weight_decay * w;
  }
  return weight_decay * total;
}

enum class LossKind { CrossEntropy };

struct LossGrad {
  double loss = 0.0;
  Vector grad_params;
  Matrix grad_inputs;
};

// Mean cross-entropy of softmax(logits) against labels plus dL/dlogits.
inline double cross_entropy_with_grad(const Matrix& logits, const Labels& y, Matrix* dlogits) {
  const Eigen::Index n = logits.rows();
  double total = 0.0;
  if (dlogits) dlogits->resize(n, logits.cols());
  for (Eigen::Index r = 0; r < n; ++r) {
    const auto row = logits.row(r);
    const double m = row.maxCoeff();
    const double lse = m + std::log((row.array() - m).exp().sum());
    const int label = y[static_cast<std::size_t>(r)];
    total += lse - row(label);
    if (dlogits) {
      dlogits->row(r) = (row.array() - lse).exp().matrix() / static_cast<double>(n);
      (*dlogits)(r, label) -= 1.0 / static_cast<double>(n);
    }
  }
  return total / static_cast<double>(n);
}

/// Mean cross-entropy over the batch plus weight_decay * ||W||^2, with the
/// gradients with respect to the parameters and to every input row.
inline LossGrad loss_grad(const ModelParams& params, const Batch& batch, LossKind kind = LossKind::CrossEntropy,
                          double weight_decay = 0.0) {
  require(kind == LossKind::CrossEntropy, "loss_grad: unsupported loss");
  require(!batch.empty(), "loss_grad: empty batch");
  require(weight_decay >= 0.0, "loss_grad: negative weight decay");
  batch.validate(params.spec.num_classes());
  const ForwardCache cache = forward(params, batch.x);
  Matrix dlogits;
  LossGrad out;
  out.loss = cross_entropy_with_grad(cache.logits(), batch.y, &dlogits);
  Backward b = backward(params, cache, dlogits);
  out.loss += weight_penalty(params, weight_decay, &b.grad_params);
  out.grad_params = std::move(b.grad_params);
  out.grad_inputs = std::move(b.grad_inputs);
  return out;
}

// Gradients of one scalar objective with respect to parameters and the
// (flattened) inputs it depends on, at a given parameter vector.
struct Gradients {
  Vector wrt_params;
  Vector wrt_inputs;
};

using GradientOracle = std::function<Gradients(const Vector& params)>;

enum class HvpDirection { VV, UV };

inline double default_fd_step(const Vector& v) { return 1e-4 * (1.0 + v.norm()); }

/// Hessian-vector product by central differences of the gradient oracle
/// along q/||q||. VV differentiates the parameter gradient, UV the input
/// gradient; both return zero exactly when q is zero.
inline Vector hvp(const GradientOracle& oracle, const Vector& v, const Vector& q, HvpDirection direction,
                  double fd_step) {
  require(q.size() == v.size(), "hvp: direction length must equal parameter length");
  require(fd_step > 0.0, "hvp: finite-difference step must be positive");
  const double qn = q.norm();
  if (qn == 0.0) {
    if (direction == HvpDirection::VV) return Vector::Zero(v.size());
    return Vector::Zero(oracle(v).wrt_inputs.size());
  }
  const Vector step = (fd_step / qn) * q;
  Gradients plus = oracle(v + step);
  Gradients minus = oracle(v - step);
  const double scale = qn / (2.0 * fd_step);
  if (direction == HvpDirection::VV) return scale * (plus.wrt_params - minus.wrt_params);
  return scale * (plus.wrt_inputs - minus.wrt_inputs);
}

}  // namespace pacd
