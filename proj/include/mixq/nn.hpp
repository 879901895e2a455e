#pragma once
// Small layer-wise reverse-mode engine: dense, conv2d (stride 1), relu, PACT,
// flatten and a softmax cross-entropy head.
//
// Layout conventions (row-major everywhere):
//   dense   weight [out, in], input [B, in], output [B, out]; y = W x + b
//   conv2d  weight [oc, ic, kh, kw], input [B, ic, h, w], output [B, oc, oh, ow]
//
// In Mode::Quantized every dense/conv layer carrying a QuantScheme multiplies
// by its effective (fake-quantized) weights and PACT layers emit 4-bit codes.
// Mode::Fp32 bypasses every quantizer; PACT then only clips.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "mixq/quantize.hpp"
#include "mixq/tensor.hpp"

namespace mixq {

enum class LayerKind : std::uint8_t { Dense, Conv2d, Relu, Pact, Flatten, SoftmaxXent };
enum class Padding : std::uint8_t { Valid, Same };
enum class GradEstimator : std::uint8_t { Ste, Tanh };
enum class Mode : std::uint8_t { Fp32, Quantized };

inline std::string_view to_string(LayerKind k) noexcept {
  switch (k) {
    case LayerKind::Dense: return "dense";
    case LayerKind::Conv2d: return "conv2d";
    case LayerKind::Relu: return "relu";
    case LayerKind::Pact: return "pact";
    case LayerKind::Flatten: return "flatten";
    case LayerKind::SoftmaxXent: return "softmax_xent";
  }
  return "?";
}

inline LayerKind parse_layer_kind(std::string_view s) {
  for (LayerKind k : {LayerKind::Dense, LayerKind::Conv2d, LayerKind::Relu, LayerKind::Pact,
                      LayerKind::Flatten, LayerKind::SoftmaxXent})
    if (to_string(k) == s) return k;
  throw DataError("unknown layer kind '" + std::string(s) + "'");
}

inline std::string_view to_string(GradEstimator g) noexcept { return g == GradEstimator::Ste ? "ste" : "tanh"; }

inline GradEstimator parse_estimator(std::string_view s) {
  if (s == "ste") return GradEstimator::Ste;
  if (s == "tanh") return GradEstimator::Tanh;
  throw UsageError("unknown gradient estimator '" + std::string(s) + "'");
}

struct Layer {
  std::string name;
  LayerKind kind = LayerKind::Dense;
  Tensor weight;
  Tensor bias;
  std::optional<QuantScheme> scheme;  // dense / conv2d only
  Padding padding = Padding::Valid;   // conv2d only
  PactParams pact{};                  // pact only

  bool has_weights() const noexcept { return kind == LayerKind::Dense || kind == LayerKind::Conv2d; }
  std::size_t weight_count() const noexcept { return has_weights() ? weight.size() : 0; }
};

struct Model {
  Shape input_shape;  // per sample
  std::vector<Layer> layers;
  GradEstimator fixp_estimator = GradEstimator::Ste;
  GradEstimator posit_estimator = GradEstimator::Tanh;
  std::map<std::string, std::string> provenance;  // free-form metadata carried in the manifest
  // Bumped on every parameter mutation; caches remember it.
  std::uint64_t revision = 0;

  void touch() noexcept { ++revision; }

  const Layer& layer(std::string_view name) const {
    for (const auto& l : layers)
      if (l.name == name) return l;
    throw ContractError("no layer named '" + std::string(name) + "'");
  }
  Layer& layer(std::string_view name) {
    return const_cast<Layer&>(static_cast<const Model&>(*this).layer(name));
  }

  std::size_t weight_count() const noexcept {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight_count();
    return n;
  }
};

// Indices of dense/conv layers eligible for quantization. With
// quantize_first_last = false the first and last such layers are excluded.
inline std::vector<std::size_t> quantizable_layers(const Model& m, bool quantize_first_last = true) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < m.layers.size(); ++i)
    if (m.layers[i].has_weights()) idx.push_back(i);
  if (!quantize_first_last && !idx.empty()) {
    idx.erase(idx.begin());
    if (!idx.empty()) idx.pop_back();
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Effective weights

struct EffectiveWeights {
  Tensor values;    // weights actually multiplied
  Tensor backward;  // d(values)/d(shadow weights), elementwise
};

// Surrogate gradient on a uniform grid (normalized units), same shape as the
// Posit tanh estimator: peak 10/step^2 at each threshold.
inline double uniform_tanh_grad(double x, const FixPParams& p) noexcept {
  if (x < p.low || x > p.high) return 0.0;
  const double step = p.step();
  double k = std::floor((x - p.low) / step);
  k = std::min(k, static_cast<double>(p.levels() - 1));
  const double mid = p.low + (k + 0.5) * step;
  const double s = 1.0 / std::cosh((5.0 / step) * (x - mid));
  return (10.0 / (step * step)) * s * s;
}

inline EffectiveWeights effective_weights(const Layer& l, const Model& m, Mode mode) {
  EffectiveWeights out{l.weight, Tensor(l.weight.shape(), 1.0)};
  if (mode == Mode::Fp32 || !l.scheme) return out;
  if (const auto* fp = std::get_if<FixPParams>(&*l.scheme)) {
    double scale = fp->scale;
    if (!(scale > 0.0)) scale = fixp_compute_scale(l.weight.span(), fp->n);
    if (!(scale > 0.0)) return out;  // all-zero tensor stays as is
    for (std::size_t i = 0; i < l.weight.size(); ++i) {
      const double z = l.weight[i] / scale;
      out.values[i] = scale * fixp_level_value(fixp_level(z, *fp), *fp);
      out.backward[i] = m.fixp_estimator == GradEstimator::Ste ? ste_grad(z, fp->low, fp->high)
                                                               : uniform_tanh_grad(z, *fp);
    }
  } else {
    const auto variant = std::get<PositScheme>(*l.scheme).variant;
    const PositGrid grid(variant);
    for (std::size_t i = 0; i < l.weight.size(); ++i) {
      const double w = l.weight[i];
      out.values[i] = posit_round(w, variant);
      out.backward[i] = m.posit_estimator == GradEstimator::Tanh ? posit_grad(w, grid)
                                                                 : ste_grad(w, grid.min(), grid.max());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Forward / backward

struct LayerCache {
  Tensor input;
  Tensor output;
  EffectiveWeights eff;              // dense / conv2d
  std::vector<std::uint8_t> codes;   // pact in quantized mode
};

struct ForwardCache {
  std::uint64_t revision = 0;
  const Model* model = nullptr;
  Mode mode = Mode::Fp32;
  std::vector<LayerCache> layers;
};

struct ForwardResult {
  Tensor logits;
  ForwardCache cache;
};

struct LayerGrad {
  Tensor weight;
  Tensor bias;
  double alpha = 0.0;
};

struct Gradients {
  std::vector<LayerGrad> layers;
};

namespace detail {

inline void check_finite(const Tensor& t, const Layer& l) {
  if (!t.all_finite())
    throw NumericError("non-finite value produced by layer '" + l.name + "' (" +
                       std::string(to_string(l.kind)) + ")");
}

inline Tensor dense_forward(const Tensor& x, const Tensor& w, const Tensor& b) {
  if (x.rank() != 2) throw ContractError("dense expects [batch, features] input, got " + shape_string(x.shape()));
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  if (w.dim(1) != in)
    throw ContractError("dense weight " + shape_string(w.shape()) + " does not match input " + shape_string(x.shape()));
  Tensor y(Shape{batch, out});
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = &x[n * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double* wr = &w[o * in];
      double s = b[o];
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * xr[i];
      y[n * out + o] = s;
    }
  }
  return y;
}

inline Tensor dense_backward(const Tensor& x, const Tensor& w, const Tensor& dy, LayerGrad& g) {
  const std::size_t batch = x.dim(0), in = x.dim(1), out = w.dim(0);
  g.weight = Tensor(w.shape());
  g.bias = Tensor(Shape{out});
  Tensor dx(x.shape());
  for (std::size_t n = 0; n < batch; ++n) {
    const double* xr = &x[n * in];
    double* dxr = &dx[n * in];
    for (std::size_t o = 0; o < out; ++o) {
      const double d = dy[n * out + o];
      if (d == 0.0) continue;
      g.bias[o] += d;
      double* gw = &g.weight[o * in];
      const double* wr = &w[o * in];
      for (std::size_t i = 0; i < in; ++i) {
        gw[i] += d * xr[i];
        dxr[i] += d * wr[i];
      }
    }
  }
  return dx;
}

struct ConvGeometry {
  std::size_t batch, ic, h, w, oc, kh, kw, oh, ow;
  std::ptrdiff_t pad_h, pad_w;
};

inline ConvGeometry conv_geometry(const Shape& xs, const Tensor& w, Padding pad) {
  if (xs.size() != 4) throw ContractError("conv2d expects [batch, c, h, w] input, got " + shape_string(xs));
  if (w.rank() != 4 || w.dim(1) != xs[1])
    throw ContractError("conv2d weight " + shape_string(w.shape()) + " does not match input " + shape_string(xs));
  ConvGeometry g{xs[0], xs[1], xs[2], xs[3], w.dim(0), w.dim(2), w.dim(3), 0, 0, 0, 0};
  if (pad == Padding::Same) {
    if (g.kh % 2 == 0 || g.kw % 2 == 0) throw ContractError("same padding needs odd kernel sizes");
    g.pad_h = static_cast<std::ptrdiff_t>(g.kh / 2);
    g.pad_w = static_cast<std::ptrdiff_t>(g.kw / 2);
    g.oh = g.h;
    g.ow = g.w;
  } else {
    if (g.kh > g.h || g.kw > g.w) throw ContractError("conv2d kernel larger than input");
    g.oh = g.h - g.kh + 1;
    g.ow = g.w - g.kw + 1;
  }
  return g;
}

inline Tensor conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, Padding pad) {
  const auto g = conv_geometry(x.shape(), w, pad);
  Tensor y(Shape{g.batch, g.oc, g.oh, g.ow});
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.oc; ++o)
      for (std::size_t r = 0; r < g.oh; ++r)
        for (std::size_t c = 0; c < g.ow; ++c) {
          double s = b[o];
          for (std::size_t i = 0; i < g.ic; ++i)
            for (std::size_t u = 0; u < g.kh; ++u) {
              const auto ir = static_cast<std::ptrdiff_t>(r + u) - g.pad_h;
              if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t v = 0; v < g.kw; ++v) {
                const auto icol = static_cast<std::ptrdiff_t>(c + v) - g.pad_w;
                if (icol < 0 || icol >= static_cast<std::ptrdiff_t>(g.w)) continue;
                s += w[((o * g.ic + i) * g.kh + u) * g.kw + v] *
                     x[((n * g.ic + i) * g.h + static_cast<std::size_t>(ir)) * g.w + static_cast<std::size_t>(icol)];
              }
            }
          y[((n * g.oc + o) * g.oh + r) * g.ow + c] = s;
        }
  return y;
}

inline Tensor conv_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Padding pad, LayerGrad& lg) {
  const auto g = conv_geometry(x.shape(), w, pad);
  lg.weight = Tensor(w.shape());
  lg.bias = Tensor(Shape{g.oc});
  Tensor dx(x.shape());
  for (std::size_t n = 0; n < g.batch; ++n)
    for (std::size_t o = 0; o < g.oc; ++o)
      for (std::size_t r = 0; r < g.oh; ++r)
        for (std::size_t c = 0; c < g.ow; ++c) {
          const double d = dy[((n * g.oc + o) * g.oh + r) * g.ow + c];
          if (d == 0.0) continue;
          lg.bias[o] += d;
          for (std::size_t i = 0; i < g.ic; ++i)
            for (std::size_t u = 0; u < g.kh; ++u) {
              const auto ir = static_cast<std::ptrdiff_t>(r + u) - g.pad_h;
              if (ir < 0 || ir >= static_cast<std::ptrdiff_t>(g.h)) continue;
              for (std::size_t v = 0; v < g.kw; ++v) {
                const auto icol = static_cast<std::ptrdiff_t>(c + v) - g.pad_w;
                if (icol < 0 || icol >= static_cast<std::ptrdiff_t>(g.w)) continue;
                const std::size_t wi = ((o * g.ic + i) * g.kh + u) * g.kw + v;
                const std::size_t xi =
                    ((n * g.ic + i) * g.h + static_cast<std::size_t>(ir)) * g.w + static_cast<std::size_t>(icol);
                lg.weight[wi] += d * x[xi];
                dx[xi] += d * w[wi];
              }
            }
        }
  return dx;
}

}  // namespace detail

// Runs the model on a batch [B, input_shape...]. The cache holds what
// backward() needs and is tied to the model's current revision.
inline ForwardResult forward(const Model& model, const Tensor& batch, Mode mode) {
  if (batch.rank() != model.input_shape.size() + 1 ||
      !std::equal(model.input_shape.begin(), model.input_shape.end(), batch.shape().begin() + 1))
    throw ContractError("batch shape " + shape_string(batch.shape()) + " does not match model input " +
                        shape_string(model.input_shape));
  ForwardResult res;
  res.cache.revision = model.revision;
  res.cache.model = &model;
  res.cache.mode = mode;
  res.cache.layers.resize(model.layers.size());
  Tensor x = batch;
  for (std::size_t li = 0; li < model.layers.size(); ++li) {
    const Layer& l = model.layers[li];
    LayerCache& lc = res.cache.layers[li];
    lc.input = x;
    switch (l.kind) {
      case LayerKind::Dense:
        lc.eff = effective_weights(l, model, mode);
        x = detail::dense_forward(x, lc.eff.values, l.bias);
        break;
      case LayerKind::Conv2d:
        lc.eff = effective_weights(l, model, mode);
        x = detail::conv_forward(x, lc.eff.values, l.bias, l.padding);
        break;
      case LayerKind::Relu:
        for (double& v : x.data()) v = std::max(v, 0.0);
        break;
      case LayerKind::Pact:
        l.pact.validate();
        if (mode == Mode::Quantized) {
          lc.codes.resize(x.size());
          for (std::size_t i = 0; i < x.size(); ++i) {
            lc.codes[i] = pact_code(pact_forward(x[i], l.pact), l.pact);
            x[i] = pact_code_value(lc.codes[i], l.pact);
          }
        } else {
          for (double& v : x.data()) v = pact_forward(v, l.pact);
        }
        break;
      case LayerKind::Flatten: {
        const std::size_t b = x.dim(0);
        x = std::move(x).reshaped(Shape{b, x.size() / std::max<std::size_t>(b, 1)});
        break;
      }
      case LayerKind::SoftmaxXent:
        if (li + 1 != model.layers.size()) throw ContractError("softmax_xent must be the last layer");
        break;
    }
    detail::check_finite(x, l);
    lc.output = x;
  }
  res.logits = std::move(x);
  return res;
}

// Reverse pass from dL/dlogits. Weight-quantizer layers scale the gradient of
// the effective weights by the estimator factor (STE indicator or tanh
// surrogate derivative).
inline Gradients backward(const Model& model, const ForwardCache& cache, const Tensor& loss_grad) {
  if (cache.model != &model || cache.revision != model.revision || cache.layers.size() != model.layers.size())
    throw ContractError("backward: cache is stale or belongs to another model");
  Gradients grads;
  grads.layers.resize(model.layers.size());
  Tensor dy = loss_grad;
  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const Layer& l = model.layers[li];
    const LayerCache& lc = cache.layers[li];
    LayerGrad& g = grads.layers[li];
    switch (l.kind) {
      case LayerKind::Dense:
        dy = detail::dense_backward(lc.input, lc.eff.values, dy, g);
        for (std::size_t i = 0; i < g.weight.size(); ++i) g.weight[i] *= lc.eff.backward[i];
        break;
      case LayerKind::Conv2d:
        dy = detail::conv_backward(lc.input, lc.eff.values, dy, l.padding, g);
        for (std::size_t i = 0; i < g.weight.size(); ++i) g.weight[i] *= lc.eff.backward[i];
        break;
      case LayerKind::Relu:
        for (std::size_t i = 0; i < dy.size(); ++i)
          if (!(lc.input[i] > 0.0)) dy[i] = 0.0;
        break;
      case LayerKind::Pact:
        // dy/dx = 1 on (0, alpha); dy/dalpha = 1 where x >= alpha.
        for (std::size_t i = 0; i < dy.size(); ++i) {
          const double x = lc.input[i];
          if (x >= l.pact.alpha) {
            g.alpha += dy[i];
            dy[i] = 0.0;
          } else if (!(x > 0.0)) {
            dy[i] = 0.0;
          }
        }
        break;
      case LayerKind::Flatten:
        dy = std::move(dy).reshaped(lc.input.shape());
        break;
      case LayerKind::SoftmaxXent:
        break;
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------
// Loss

struct LossResult {
  double loss = 0.0;        // mean over the batch
  Tensor grad;              // d(loss)/d(logits)
  std::size_t correct = 0;  // argmax hits
};

inline std::size_t argmax_row(const Tensor& logits, std::size_t row) {
  const std::size_t k = logits.dim(1);
  std::size_t best = 0;
  for (std::size_t j = 1; j < k; ++j)
    if (logits[row * k + j] > logits[row * k + best]) best = j;
  return best;
}

inline LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) != labels.size())
    throw ContractError("softmax_cross_entropy: logits/labels mismatch");
  const std::size_t batch = logits.dim(0), k = logits.dim(1);
  LossResult r{0.0, Tensor(logits.shape()), 0};
  if (batch == 0) return r;
  for (std::size_t n = 0; n < batch; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw DataError("label out of range");
    double mx = logits[n * k];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, logits[n * k + j]);
    double z = 0.0;
    for (std::size_t j = 0; j < k; ++j) z += std::exp(logits[n * k + j] - mx);
    const double logz = mx + std::log(z);
    r.loss += logz - logits[n * k + static_cast<std::size_t>(y)];
    for (std::size_t j = 0; j < k; ++j) {
      const double p = std::exp(logits[n * k + j] - logz);
      r.grad[n * k + j] = (p - (j == static_cast<std::size_t>(y) ? 1.0 : 0.0)) / static_cast<double>(batch);
    }
    if (argmax_row(logits, n) == static_cast<std::size_t>(y)) ++r.correct;
  }
  r.loss /= static_cast<double>(batch);
  return r;
}

// ---------------------------------------------------------------------------
// Construction helpers

inline Layer make_dense(std::string name, std::size_t in, std::size_t out, std::mt19937_64& rng) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Dense;
  l.weight = Tensor(Shape{out, in});
  l.bias = Tensor(Shape{out});
  const double limit = std::sqrt(6.0 / static_cast<double>(in));
  std::uniform_real_distribution<double> ud(-limit, limit);
  for (double& v : l.weight.data()) v = ud(rng);
  return l;
}

inline Layer make_conv(std::string name, std::size_t ic, std::size_t oc, std::size_t k, Padding pad,
                       std::mt19937_64& rng) {
  Layer l;
  l.name = std::move(name);
  l.kind = LayerKind::Conv2d;
  l.padding = pad;
  l.weight = Tensor(Shape{oc, ic, k, k});
  l.bias = Tensor(Shape{oc});
  const double limit = std::sqrt(6.0 / static_cast<double>(ic * k * k));
  std::uniform_real_distribution<double> ud(-limit, limit);
  for (double& v : l.weight.data()) v = ud(rng);
  return l;
}

inline Layer make_simple(std::string name, LayerKind kind) {
  Layer l;
  l.name = std::move(name);
  l.kind = kind;
  return l;
}

// dense -> relu -> ... -> dense -> softmax_xent
inline Model make_mlp(std::size_t input_dim, const std::vector<std::size_t>& hidden, std::size_t classes,
                      std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  Model m;
  m.input_shape = {input_dim};
  std::size_t prev = input_dim;
  for (std::size_t i = 0; i < hidden.size(); ++i) {
    m.layers.push_back(make_dense("fc" + std::to_string(i + 1), prev, hidden[i], rng));
    m.layers.push_back(make_simple("act" + std::to_string(i + 1), LayerKind::Relu));
    prev = hidden[i];
  }
  m.layers.push_back(make_dense("fc" + std::to_string(hidden.size() + 1), prev, classes, rng));
  m.layers.push_back(make_simple("loss", LayerKind::SoftmaxXent));
  return m;
}

// Swaps ReLU activations for PACT (the quantized activation path) and
// attaches the given scheme to every listed layer. Layers not listed keep
// full-precision weights.
inline void attach_schemes(Model& m, const std::vector<std::pair<std::string, QuantScheme>>& schemes,
                           double pact_alpha_init = 10.0, int act_bits = 4) {
  for (auto& l : m.layers) {
    if (l.kind == LayerKind::Relu) {
      l.kind = LayerKind::Pact;
      l.pact = PactParams{pact_alpha_init, act_bits};
    }
    if (l.has_weights()) l.scheme.reset();
  }
  for (const auto& [name, scheme] : schemes) {
    Layer& l = m.layer(name);
    if (!l.has_weights()) throw ContractError("scheme attached to non-weight layer '" + name + "'");
    l.scheme = scheme;
  }
  m.touch();
}

// Per-tensor FixP scales from the current shadow weights.
inline void refresh_fixp_scales(Model& m) {
  for (auto& l : m.layers) {
    if (!l.scheme) continue;
    if (auto* fp = std::get_if<FixPParams>(&*l.scheme)) fp->scale = fixp_compute_scale(l.weight.span(), fp->n);
  }
  m.touch();
}

// Rounds every parameter to single precision (the storage format).
inline void round_to_storage(Model& m) {
  auto r = [](Tensor& t) {
    for (double& v : t.data()) v = static_cast<double>(static_cast<float>(v));
  };
  for (auto& l : m.layers) {
    r(l.weight);
    r(l.bias);
    if (l.kind == LayerKind::Pact) l.pact.alpha = static_cast<double>(static_cast<float>(l.pact.alpha));
  }
  m.touch();
}

// Replaces shadow weights by their quantized values (inference export).
inline void snap_weights(Model& m) {
  for (auto& l : m.layers) {
    if (!l.has_weights() || !l.scheme) continue;
    if (auto* fp = std::get_if<FixPParams>(&*l.scheme); fp && !(fp->scale > 0.0))
      fp->scale = fixp_compute_scale(l.weight.span(), fp->n);
    l.weight = effective_weights(l, m, Mode::Quantized).values;
  }
  round_to_storage(m);
}

}  // namespace mixq
