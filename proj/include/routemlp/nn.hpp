#pragma once

// Dense feed-forward networks: forward/backward passes, softmax cross-entropy,
// Adam, and a central-difference gradient oracle. Everything is templated on
// the scalar type; the rest of the library instantiates it with double.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "routemlp/errors.hpp"
#include "routemlp/rng.hpp"

namespace routemlp::nn {

using Eigen::Index;

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

enum class Mode { kTrain, kInfer };

/// One affine layer, weight is [out x in].
template <typename Scalar>
struct Dense {
  Matrix<Scalar> weight;
  Vector<Scalar> bias;

  Index in() const { return weight.cols(); }
  Index out() const { return weight.rows(); }

  static Dense zeros_like(const Dense& other) {
    return {Matrix<Scalar>::Zero(other.out(), other.in()), Vector<Scalar>::Zero(other.out())};
  }
  bool operator==(const Dense& o) const {
    return weight.rows() == o.weight.rows() && weight.cols() == o.weight.cols() &&
           weight == o.weight && bias == o.bias;
  }
};

/// Layer stack. Hidden layers use ReLU; the final layer emits logits.
template <typename Scalar>
struct Mlp {
  std::vector<Dense<Scalar>> layers;

  Index input_dim() const { return layers.empty() ? 0 : layers.front().in(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().out(); }
  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
    return n;
  }
  bool operator==(const Mlp& o) const { return layers == o.layers; }
};

template <typename Scalar>
std::size_t parameter_count(std::span<const Dense<Scalar>> layers) {
  std::size_t n = 0;
  for (const auto& l : layers) n += static_cast<std::size_t>(l.weight.size() + l.bias.size());
  return n;
}

/// Non-owning ordered view over layers that may live in different objects
/// (a shared trunk followed by one head).
template <typename Scalar>
using LayerChain = std::vector<const Dense<Scalar>*>;

template <typename Scalar>
LayerChain<Scalar> chain(std::span<const Dense<Scalar>> first,
                         std::span<const Dense<Scalar>> second = {}) {
  LayerChain<Scalar> out;
  out.reserve(first.size() + second.size());
  for (const auto& l : first) out.push_back(&l);
  for (const auto& l : second) out.push_back(&l);
  return out;
}

template <typename Scalar>
LayerChain<Scalar> chain(const Mlp<Scalar>& mlp) {
  return chain<Scalar>(std::span<const Dense<Scalar>>(mlp.layers));
}

/// Extra input added to the first layer: Z0 += input * weight^T.
/// Equivalent to concatenating `input` onto the batch columns.
template <typename Scalar>
struct SideInput {
  const Matrix<Scalar>* input = nullptr;   // [n x side_dim]
  const Matrix<Scalar>* weight = nullptr;  // [out0 x side_dim]
  bool active() const { return input != nullptr && weight != nullptr; }
};

template <typename Scalar>
struct ForwardCache {
  Mode mode = Mode::kInfer;
  std::vector<Matrix<Scalar>> inputs;  // input seen by each layer
  std::vector<Matrix<Scalar>> pre;     // hidden pre-activations
  std::vector<Matrix<Scalar>> masks;   // scaled dropout masks, empty when not applied
  std::vector<std::pair<Index, Index>> shapes;
  Index side_dim = 0;
};

template <typename Scalar>
struct ForwardResult {
  Matrix<Scalar> logits;
  ForwardCache<Scalar> cache;
};

template <typename Scalar>
ForwardResult<Scalar> forward(const LayerChain<Scalar>& layers, const Matrix<Scalar>& batch,
                              Mode mode, double dropout_rate, Rng& rng,
                              SideInput<Scalar> side = {}) {
  if (layers.empty()) throw ShapeError("forward: network has no layers");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw ValidationError("forward: dropout rate must lie in [0, 1)");
  }
  ForwardResult<Scalar> result;
  auto& cache = result.cache;
  cache.mode = mode;
  const bool apply_dropout = mode == Mode::kTrain && dropout_rate > 0.0;
  const Scalar keep_scale = Scalar(1) / Scalar(1.0 - dropout_rate);

  Matrix<Scalar> activ = batch;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const Dense<Scalar>& layer = *layers[l];
    if (activ.cols() != layer.in()) {
      throw ShapeError("forward: layer " + std::to_string(l) + " expects " +
                       std::to_string(layer.in()) + " inputs, got " +
                       std::to_string(activ.cols()));
    }
    if (layer.bias.size() != layer.out()) {
      throw ShapeError("forward: layer " + std::to_string(l) + " bias size mismatch");
    }
    cache.shapes.emplace_back(layer.out(), layer.in());
    Matrix<Scalar> z = activ * layer.weight.transpose();
    if (l == 0 && side.active()) {
      if (side.input->rows() != batch.rows() || side.weight->rows() != layer.out() ||
          side.weight->cols() != side.input->cols()) {
        throw ShapeError("forward: side input does not match layer 0");
      }
      z += (*side.input) * side.weight->transpose();
      cache.side_dim = side.input->cols();
    }
    z.rowwise() += layer.bias.transpose();
    cache.inputs.push_back(std::move(activ));

    if (l + 1 == layers.size()) {
      result.logits = std::move(z);
      break;
    }
    activ = z.cwiseMax(Scalar(0));
    Matrix<Scalar> mask;
    if (apply_dropout) {
      mask.resize(activ.rows(), activ.cols());
      for (Index i = 0; i < mask.rows(); ++i) {
        for (Index j = 0; j < mask.cols(); ++j) {
          mask(i, j) = rng.uniform() < dropout_rate ? Scalar(0) : keep_scale;
        }
      }
      activ = activ.cwiseProduct(mask);
    }
    cache.pre.push_back(std::move(z));
    cache.masks.push_back(std::move(mask));
  }
  return result;
}

template <typename Scalar>
ForwardResult<Scalar> forward(const Mlp<Scalar>& params, const Matrix<Scalar>& batch, Mode mode,
                              double dropout_rate, Rng& rng) {
  return forward(chain(params), batch, mode, dropout_rate, rng);
}

/// Inference-mode logits; no randomness is consumed.
template <typename Scalar>
Matrix<Scalar> logits(const LayerChain<Scalar>& layers, const Matrix<Scalar>& batch,
                      SideInput<Scalar> side = {}) {
  Rng unused(0);
  return forward(layers, batch, Mode::kInfer, 0.0, unused, side).logits;
}

template <typename Scalar>
struct LossResult {
  Vector<Scalar> per_sample;
  Matrix<Scalar> probs;
};

template <typename Scalar>
void check_labels(std::span<const int> labels, Index classes) {
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] < 0 || labels[i] >= classes) {
      throw ValidationError("label at row " + std::to_string(i) + " is " +
                            std::to_string(labels[i]) + ", expected 0 or 1");
    }
  }
}

/// Row-wise softmax and loss_i = -ln p(true class), computed through log-sum-exp.
template <typename Scalar>
LossResult<Scalar> softmax_cross_entropy(const Matrix<Scalar>& logits,
                                         std::span<const int> labels) {
  if (logits.rows() < 1) throw ValidationError("softmax_cross_entropy: empty batch");
  if (static_cast<Index>(labels.size()) != logits.rows()) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                     " labels for " + std::to_string(logits.rows()) + " rows");
  }
  check_labels<Scalar>(labels, logits.cols());
  LossResult<Scalar> out;
  out.per_sample.resize(logits.rows());
  out.probs.resize(logits.rows(), logits.cols());
  for (Index i = 0; i < logits.rows(); ++i) {
    const Scalar mx = logits.row(i).maxCoeff();
    Scalar sum(0);
    for (Index j = 0; j < logits.cols(); ++j) sum += std::exp(logits(i, j) - mx);
    const Scalar lse = mx + std::log(sum);
    for (Index j = 0; j < logits.cols(); ++j) out.probs(i, j) = std::exp(logits(i, j) - lse);
    out.per_sample(i) = lse - logits(i, labels[i]);
  }
  if (!out.per_sample.allFinite()) throw NumericError("softmax_cross_entropy: non-finite loss");
  return out;
}

template <typename Scalar>
struct Gradients {
  std::vector<Dense<Scalar>> layers;
  Matrix<Scalar> side_weight;  // empty without side input
  Matrix<Scalar> side_input;   // d(loss)/d(side input rows)

  Scalar squared_norm() const {
    Scalar s(0);
    for (const auto& l : layers) s += l.weight.squaredNorm() + l.bias.squaredNorm();
    return s + side_weight.squaredNorm();
  }
};

/// Gradients of the batch-mean cross-entropy with respect to every layer.
template <typename Scalar>
Gradients<Scalar> backward(const LayerChain<Scalar>& layers, const ForwardCache<Scalar>& cache,
                           const Matrix<Scalar>& probs, std::span<const int> labels,
                           SideInput<Scalar> side = {}) {
  if (cache.shapes.size() != layers.size() || cache.inputs.size() != layers.size()) {
    throw ContractError("backward: cache was produced by a network with a different depth");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (cache.shapes[l] != std::make_pair(layers[l]->out(), layers[l]->in())) {
      throw ContractError("backward: cache shape mismatch at layer " + std::to_string(l));
    }
  }
  const Index n = probs.rows();
  if (n < 1 || cache.inputs.front().rows() != n || static_cast<Index>(labels.size()) != n) {
    throw ContractError("backward: cache, probabilities and labels disagree on batch size");
  }
  if ((cache.side_dim > 0) != side.active()) {
    throw ContractError("backward: side input presence differs from the forward pass");
  }
  check_labels<Scalar>(labels, probs.cols());

  Gradients<Scalar> grads;
  grads.layers.resize(layers.size());
  Matrix<Scalar> dz = probs;
  for (Index i = 0; i < n; ++i) dz(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
  dz /= static_cast<Scalar>(n);

  for (std::size_t l = layers.size(); l-- > 0;) {
    grads.layers[l].weight = dz.transpose() * cache.inputs[l];
    grads.layers[l].bias = dz.colwise().sum().transpose();
    if (l == 0) {
      if (side.active()) {
        grads.side_weight = dz.transpose() * (*side.input);
        grads.side_input = dz * (*side.weight);
      }
      break;
    }
    Matrix<Scalar> da = dz * layers[l]->weight;
    if (cache.masks[l - 1].size() > 0) da = da.cwiseProduct(cache.masks[l - 1]);
    dz = da.cwiseProduct(
        (cache.pre[l - 1].array() > Scalar(0)).template cast<Scalar>().matrix());
  }
  return grads;
}

/// Mean cross-entropy of a chain in inference mode.
template <typename Scalar>
Scalar mean_loss(const LayerChain<Scalar>& layers, const Matrix<Scalar>& batch,
                 std::span<const int> labels) {
  return softmax_cross_entropy(logits(layers, batch), labels).per_sample.mean();
}

/// Central difference (f(x+h) - f(x-h)) / 2h for a scalar function.
template <typename Scalar, typename F>
Scalar central_difference(F&& f, Scalar x, Scalar h) {
  if (!(h > Scalar(0))) throw ValidationError("central_difference: step must be positive");
  return (f(x + h) - f(x - h)) / (Scalar(2) * h);
}

/// Central-difference gradient of an arbitrary loss over every parameter of `params`.
template <typename Scalar, typename LossFn>
std::vector<Dense<Scalar>> finite_diff_grad(Mlp<Scalar> params, LossFn&& loss, Scalar h) {
  if (!(h > Scalar(0))) throw ValidationError("finite_diff_grad: step must be positive");
  std::vector<Dense<Scalar>> grads;
  for (const auto& l : params.layers) grads.push_back(Dense<Scalar>::zeros_like(l));
  auto probe = [&](Scalar& slot) {
    const Scalar saved = slot;
    slot = saved + h;
    const Scalar up = loss(std::as_const(params));
    slot = saved - h;
    const Scalar down = loss(std::as_const(params));
    slot = saved;
    return (up - down) / (Scalar(2) * h);
  };
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    auto& layer = params.layers[l];
    for (Index i = 0; i < layer.weight.rows(); ++i) {
      for (Index j = 0; j < layer.weight.cols(); ++j) {
        grads[l].weight(i, j) = probe(layer.weight(i, j));
      }
    }
    for (Index i = 0; i < layer.bias.size(); ++i) grads[l].bias(i) = probe(layer.bias(i));
  }
  return grads;
}

/// Oracle for `backward`: gradient of the inference-mode (dropout-free) mean loss.
template <typename Scalar>
std::vector<Dense<Scalar>> finite_diff_grad(const Mlp<Scalar>& params, const Matrix<Scalar>& batch,
                                            std::span<const int> labels, Scalar h) {
  if (batch.cols() != params.input_dim()) {
    throw ShapeError("finite_diff_grad: batch width does not match the first layer");
  }
  return finite_diff_grad(
      params, [&](const Mlp<Scalar>& p) { return mean_loss(chain(p), batch, labels); }, h);
}

/// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias, drawn layer by
/// layer in row-major order.
template <typename Scalar>
Dense<Scalar> init_dense(Index in, Index out, Rng& rng) {
  Dense<Scalar> d{Matrix<Scalar>(out, in), Vector<Scalar>::Zero(out)};
  const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
  for (Index i = 0; i < out; ++i) {
    for (Index j = 0; j < in; ++j) d.weight(i, j) = Scalar(rng.uniform(-limit, limit));
  }
  return d;
}

/// Network with layer widths dims[0] -> dims[1] -> ... -> dims.back().
template <typename Scalar>
Mlp<Scalar> init_mlp(std::span<const Index> dims, Rng& rng) {
  if (dims.size() < 2) throw ValidationError("init_mlp: need at least input and output widths");
  Mlp<Scalar> mlp;
  for (std::size_t i = 0; i + 1 < dims.size(); ++i) {
    if (dims[i] < 1 || dims[i + 1] < 1) throw ValidationError("init_mlp: widths must be >= 1");
    mlp.layers.push_back(init_dense<Scalar>(dims[i], dims[i + 1], rng));
  }
  return mlp;
}

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// First/second moments for one tensor block plus its own step counter.
template <typename Scalar>
struct TensorAdam {
  Matrix<Scalar> m;
  Matrix<Scalar> v;
  std::int64_t t = 0;
};

namespace detail {

template <typename P, typename G, typename M>
void adam_apply(P& param, const G& grad, M& m, M& v, std::int64_t t, const AdamConfig& cfg) {
  using Scalar = typename P::Scalar;
  const Scalar b1 = Scalar(cfg.beta1);
  const Scalar b2 = Scalar(cfg.beta2);
  const Scalar c1 = Scalar(1) - std::pow(b1, Scalar(t));
  const Scalar c2 = Scalar(1) - std::pow(b2, Scalar(t));
  m = b1 * m + (Scalar(1) - b1) * grad;
  v = b2 * v + (Scalar(1) - b2) * grad.cwiseProduct(grad);
  const Scalar lr = Scalar(cfg.learning_rate);
  const Scalar eps = Scalar(cfg.epsilon);
  param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
}

}  // namespace detail

/// Adam state mirroring a layer list.
template <typename Scalar>
struct AdamState {
  std::vector<Dense<Scalar>> m;
  std::vector<Dense<Scalar>> v;
  std::int64_t t = 0;

  static AdamState for_layers(std::span<const Dense<Scalar>> layers) {
    AdamState s;
    for (const auto& l : layers) {
      s.m.push_back(Dense<Scalar>::zeros_like(l));
      s.v.push_back(Dense<Scalar>::zeros_like(l));
    }
    return s;
  }
  static AdamState for_mlp(const Mlp<Scalar>& mlp) {
    return for_layers(std::span<const Dense<Scalar>>(mlp.layers));
  }
  bool operator==(const AdamState& o) const { return t == o.t && m == o.m && v == o.v; }
};

/// One bias-corrected Adam update of `layers`. The step counter advances
/// before the update; gradients are checked for finiteness first.
template <typename Scalar>
void adam_step(std::span<Dense<Scalar>> layers, std::span<const Dense<Scalar>> grads,
               AdamState<Scalar>& state, const AdamConfig& cfg,
               const std::string& path = "layers") {
  if (layers.size() != grads.size() || layers.size() != state.m.size()) {
    throw ShapeError("adam_step: parameter, gradient and state layer counts differ");
  }
  for (std::size_t l = 0; l < layers.size(); ++l) {
    if (grads[l].weight.rows() != layers[l].out() || grads[l].weight.cols() != layers[l].in() ||
        grads[l].bias.size() != layers[l].out()) {
      throw ShapeError("adam_step: gradient shape mismatch at " + path + "[" +
                       std::to_string(l) + "]");
    }
    if (!grads[l].weight.allFinite()) {
      throw NumericError("adam_step: non-finite gradient at " + path + "[" + std::to_string(l) +
                         "].weight");
    }
    if (!grads[l].bias.allFinite()) {
      throw NumericError("adam_step: non-finite gradient at " + path + "[" + std::to_string(l) +
                         "].bias");
    }
  }
  ++state.t;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    detail::adam_apply(layers[l].weight, grads[l].weight, state.m[l].weight, state.v[l].weight,
                       state.t, cfg);
    detail::adam_apply(layers[l].bias, grads[l].bias, state.m[l].bias, state.v[l].bias, state.t,
                       cfg);
  }
}

template <typename Scalar>
void adam_step(Mlp<Scalar>& params, std::span<const Dense<Scalar>> grads, AdamState<Scalar>& state,
               const AdamConfig& cfg) {
  adam_step(std::span<Dense<Scalar>>(params.layers), grads, state, cfg);
}

/// Adam update for a free-standing tensor (embedding table, side weight).
template <typename Scalar>
void adam_step(Matrix<Scalar>& param, const Matrix<Scalar>& grad, TensorAdam<Scalar>& state,
               const AdamConfig& cfg, const std::string& path) {
  if (grad.rows() != param.rows() || grad.cols() != param.cols()) {
    throw ShapeError("adam_step: gradient shape mismatch at " + path);
  }
  if (!grad.allFinite()) throw NumericError("adam_step: non-finite gradient at " + path);
  if (state.m.size() == 0) {
    state.m = Matrix<Scalar>::Zero(param.rows(), param.cols());
    state.v = Matrix<Scalar>::Zero(param.rows(), param.cols());
  }
  ++state.t;
  detail::adam_apply(param, grad, state.m, state.v, state.t, cfg);
}

/// Predicted class per row: argmax of logits, ties go to class 0.
template <typename Scalar>
std::vector<int> argmax_labels(const Matrix<Scalar>& logits) {
  std::vector<int> out(static_cast<std::size_t>(logits.rows()), 0);
  for (Index i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (Index j = 1; j < logits.cols(); ++j) {
      if (logits(i, j) > logits(i, best)) best = static_cast<int>(j);
    }
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace routemlp::nn
