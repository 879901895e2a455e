#pragma once
// Adam + cosine schedule training loop, evaluation and calibration gradients.

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "mixq/dataset.hpp"
#include "mixq/nn.hpp"

namespace mixq {

struct TrainConfig {
  int epochs = 30;
  std::size_t batch_size = 128;
  double lr_max = 1e-3;
  double lr_min = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;  // L2 on weights and PACT alpha
  std::uint64_t seed = 1;
  Mode mode = Mode::Fp32;
  GradEstimator fixp_estimator = GradEstimator::Ste;
  GradEstimator posit_estimator = GradEstimator::Tanh;

  void validate() const {
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 1) throw UsageError("batch size must be >= 1");
    if (!(lr_min >= 0.0) || !(lr_min <= lr_max)) throw UsageError("learning rates need 0 <= lr_min <= lr_max");
    if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1)) throw UsageError("Adam betas must be in [0, 1)");
    if (!(eps > 0)) throw UsageError("Adam eps must be > 0");
    if (!(weight_decay >= 0)) throw UsageError("weight decay must be >= 0");
  }
};

// lr(t) = lr_min + 0.5 (lr_max - lr_min)(1 + cos(pi t / T))
inline double cosine_lr(std::size_t t, std::size_t total, double lr_max, double lr_min) noexcept {
  if (total == 0) return lr_max;
  const double frac = static_cast<double>(t) / static_cast<double>(total);
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * frac));
}

inline constexpr double kMinPactAlpha = 1e-3;

class Adam {
 public:
  Adam(const Model& m, const TrainConfig& cfg) : cfg_(cfg) {
    for (const auto& l : m.layers) {
      Slot s;
      s.mw.assign(l.weight.size(), 0.0);
      s.vw.assign(l.weight.size(), 0.0);
      s.mb.assign(l.bias.size(), 0.0);
      s.vb.assign(l.bias.size(), 0.0);
      slots_.push_back(std::move(s));
    }
  }

  void step(Model& m, const Gradients& g, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    auto update = [&](double& p, double grad, double& mom, double& vel) {
      mom = cfg_.beta1 * mom + (1.0 - cfg_.beta1) * grad;
      vel = cfg_.beta2 * vel + (1.0 - cfg_.beta2) * grad * grad;
      p -= lr * (mom / c1) / (std::sqrt(vel / c2) + cfg_.eps);
    };
    for (std::size_t li = 0; li < m.layers.size(); ++li) {
      Layer& l = m.layers[li];
      const LayerGrad& lg = g.layers[li];
      Slot& s = slots_[li];
      if (l.has_weights()) {
        for (std::size_t i = 0; i < l.weight.size(); ++i)
          update(l.weight[i], lg.weight[i] + cfg_.weight_decay * l.weight[i], s.mw[i], s.vw[i]);
        for (std::size_t i = 0; i < l.bias.size(); ++i) update(l.bias[i], lg.bias[i], s.mb[i], s.vb[i]);
      } else if (l.kind == LayerKind::Pact) {
        update(l.pact.alpha, lg.alpha + cfg_.weight_decay * l.pact.alpha, s.ma, s.va);
        l.pact.alpha = std::max(l.pact.alpha, kMinPactAlpha);
      }
    }
    m.touch();
  }

 private:
  struct Slot {
    std::vector<double> mw, vw, mb, vb;
    double ma = 0.0, va = 0.0;
  };
  TrainConfig cfg_;
  std::vector<Slot> slots_;
  std::uint64_t t_ = 0;
};

struct EpochMetrics {
  int epoch = 0;
  double lr = 0.0;
  double train_loss = 0.0;
  double train_acc = 0.0;
  double val_acc = 0.0;
  friend bool operator==(const EpochMetrics&, const EpochMetrics&) = default;
};

struct TrainHistory {
  std::vector<EpochMetrics> epochs;
};

inline double evaluate(const Model& m, const Dataset& d, Mode mode, std::size_t batch_size = 256) {
  if (d.empty()) return 0.0;
  const auto order = d.identity_order();
  std::size_t correct = 0;
  for (std::size_t b = 0; b < d.size(); b += batch_size) {
    const std::size_t e = std::min(d.size(), b + batch_size);
    auto [x, y] = d.gather(order, b, e);
    const auto res = forward(m, x, mode);
    for (std::size_t n = 0; n < y.size(); ++n)
      if (argmax_row(res.logits, n) == static_cast<std::size_t>(y[n])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.size());
}

inline double evaluate_loss(const Model& m, const Dataset& d, Mode mode, std::size_t batch_size = 256) {
  if (d.empty()) return 0.0;
  const auto order = d.identity_order();
  double total = 0.0;
  for (std::size_t b = 0; b < d.size(); b += batch_size) {
    const std::size_t e = std::min(d.size(), b + batch_size);
    auto [x, y] = d.gather(order, b, e);
    total += softmax_cross_entropy(forward(m, x, mode).logits, y).loss * static_cast<double>(e - b);
  }
  return total / static_cast<double>(d.size());
}

// Gradient of the mean loss over the first max_batches batches of d (all
// batches when max_batches == 0), in dataset order.
inline Gradients mean_gradient(const Model& m, const Dataset& d, Mode mode, std::size_t batch_size = 128,
                               std::size_t max_batches = 0) {
  if (d.empty()) throw DataError("calibration set is empty");
  const auto order = d.identity_order();
  Gradients acc;
  std::size_t seen = 0, batches = 0;
  for (std::size_t b = 0; b < d.size(); b += batch_size) {
    if (max_batches && batches == max_batches) break;
    const std::size_t e = std::min(d.size(), b + batch_size);
    auto [x, y] = d.gather(order, b, e);
    const auto res = forward(m, x, mode);
    const auto loss = softmax_cross_entropy(res.logits, y);
    auto g = backward(m, res.cache, loss.grad);
    const double w = static_cast<double>(e - b);
    if (acc.layers.empty()) {
      acc = std::move(g);
      for (auto& lg : acc.layers) {
        for (double& v : lg.weight.data()) v *= w;
        for (double& v : lg.bias.data()) v *= w;
        lg.alpha *= w;
      }
    } else {
      for (std::size_t li = 0; li < acc.layers.size(); ++li) {
        for (std::size_t i = 0; i < g.layers[li].weight.size(); ++i) acc.layers[li].weight[i] += w * g.layers[li].weight[i];
        for (std::size_t i = 0; i < g.layers[li].bias.size(); ++i) acc.layers[li].bias[i] += w * g.layers[li].bias[i];
        acc.layers[li].alpha += w * g.layers[li].alpha;
      }
    }
    seen += e - b;
    ++batches;
  }
  const double inv = 1.0 / static_cast<double>(seen);
  for (auto& lg : acc.layers) {
    for (double& v : lg.weight.data()) v *= inv;
    for (double& v : lg.bias.data()) v *= inv;
    lg.alpha *= inv;
  }
  return acc;
}

// Mini-batch Adam with a per-step cosine schedule. In quantized mode the FixP
// scales are recomputed from the shadow weights at the start of every epoch.
inline TrainHistory train(Model& m, const Dataset& train_set, const Dataset* val_set, const TrainConfig& cfg) {
  cfg.validate();
  if (train_set.empty()) throw DataError("training set is empty");
  m.fixp_estimator = cfg.fixp_estimator;
  m.posit_estimator = cfg.posit_estimator;
  std::mt19937_64 rng(cfg.seed);
  Adam opt(m, cfg);
  auto order = train_set.identity_order();
  const std::size_t steps_per_epoch = (train_set.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total = steps_per_epoch * static_cast<std::size_t>(cfg.epochs);
  std::size_t t = 0;
  TrainHistory hist;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    if (cfg.mode == Mode::Quantized) refresh_fixp_scales(m);
    std::shuffle(order.begin(), order.end(), rng);
    EpochMetrics em;
    em.epoch = epoch;
    em.lr = cosine_lr(t, total, cfg.lr_max, cfg.lr_min);
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < train_set.size(); b += cfg.batch_size) {
      const std::size_t e = std::min(train_set.size(), b + cfg.batch_size);
      auto [x, y] = train_set.gather(order, b, e);
      const auto res = forward(m, x, cfg.mode);
      const auto loss = softmax_cross_entropy(res.logits, y);
      if (!std::isfinite(loss.loss))
        throw NumericError("training diverged: loss is not finite at epoch " + std::to_string(epoch));
      const auto g = backward(m, res.cache, loss.grad);
      opt.step(m, g, cosine_lr(t, total, cfg.lr_max, cfg.lr_min));
      ++t;
      loss_sum += loss.loss * static_cast<double>(e - b);
      correct += loss.correct;
    }
    em.train_loss = loss_sum / static_cast<double>(train_set.size());
    em.train_acc = static_cast<double>(correct) / static_cast<double>(train_set.size());
    em.val_acc = val_set ? evaluate(m, *val_set, cfg.mode) : 0.0;
    hist.epochs.push_back(em);
  }
  if (cfg.mode == Mode::Quantized) refresh_fixp_scales(m);
  return hist;
}

}  // namespace mixq
