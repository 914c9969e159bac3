#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "spssl/errors.hpp"
#include "spssl/nets.hpp"
#include "spssl/ops.hpp"
#include "spssl/schedules.hpp"
#include "spssl/tensor.hpp"

namespace spssl::losses {

enum class UncertaintyMethod { DaeL2, Entropy, None };
enum class WeightScheme { ExpWeight, ThresholdMask, Uniform };

/// Per-voxel nonnegative uncertainty [B,H,W] and the number of forward
/// passes spent producing it.
template <typename T>
struct UncertaintyMap {
  Tensor<T> values;
  UncertaintyMethod method = UncertaintyMethod::None;
  int inference_count = 0;
};

/// Per-voxel consistency weights [B,H,W] in [0,1].
template <typename T>
struct ConsistencyWeights {
  Tensor<T> values;
  WeightScheme scheme = WeightScheme::Uniform;
};

template <typename T>
Tensor<T> combine_supervised(const Tensor<T>& ce, const Tensor<T>& dice);
template <typename T>
UncertaintyMap<T> uncertainty_from_reconstruction(const Tensor<T>& recon, const Tensor<T>& p_fg);
template <typename T>
Tensor<T> entropy_of(const Tensor<T>& prob);

/// Class-id map [B,H,W] -> one-hot [B,C,H,W].
template <typename T>
Tensor<T> one_hot(const Tensor<T>& labels, std::size_t num_classes) {
  if (labels.rank() != 3) throw ShapeError("one_hot: labels must be [B,H,W]");
  const std::size_t B = labels.dim(0), S = labels.dim(1) * labels.dim(2);
  auto out = Tensor<T>::zeros({B, num_classes, labels.dim(1), labels.dim(2)});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      const T v = labels[b * S + s];
      const auto c = static_cast<long long>(std::llround(static_cast<double>(v)));
      if (std::abs(static_cast<double>(v) - static_cast<double>(c)) > 1e-6 || c < 0 ||
          c >= static_cast<long long>(num_classes)) {
        throw DomainError("invalid class id " + std::to_string(static_cast<double>(v)));
      }
      out[(b * num_classes + static_cast<std::size_t>(c)) * S + s] = T(1);
    }
  return out;
}

/// Soft Dice loss on the foreground channel, averaged over the batch.
template <typename T>
Tensor<T> dice_loss(const Tensor<T>& prob, const Tensor<T>& target_one_hot, double smooth = 1e-5) {
  if (prob.shape() != target_one_hot.shape() || prob.rank() != 4 || prob.dim(1) < 2) {
    throw ShapeError("dice_loss: prob and target must both be [B,C,H,W] with C >= 2");
  }
  const auto eps = static_cast<T>(smooth);
  auto p = ops::select_channel(prob, 1);
  auto q = ops::select_channel(target_one_hot, 1).detach();
  auto inter = ops::sum_per_sample(ops::mul(p, q));
  auto denom = ops::add(ops::affine(ops::sum_per_sample(p), T(1), eps), ops::sum_per_sample(q));
  auto ratio = ops::div(ops::affine(inter, T(2), eps), denom);
  return ops::affine(ops::mean(ratio), T(-1), T(1));
}

/// Mean cross-entropy over voxels; labels are class ids [B,H,W].
template <typename T>
Tensor<T> ce_loss(const Tensor<T>& logits, const Tensor<T>& labels) {
  if (logits.rank() != 4 || labels.rank() != 3 || labels.dim(0) != logits.dim(0) ||
      labels.dim(1) != logits.dim(2) || labels.dim(2) != logits.dim(3)) {
    throw ShapeError("ce_loss: expected logits [B,C,H,W] and labels [B,H,W]");
  }
  auto target = one_hot(labels, logits.dim(1));
  const auto voxels = static_cast<T>(labels.numel());
  return ops::affine(ops::sum(ops::mul(ops::log_softmax_channel(logits), target)), T(-1) / voxels);
}

template <typename T>
struct SupervisedLoss {
  Tensor<T> total, ce, dice;
};

/// 0.5 * cross-entropy + 0.5 * soft Dice.
template <typename T>
SupervisedLoss<T> supervised_loss(const Tensor<T>& logits, const Tensor<T>& labels) {
  auto ce = ce_loss(logits, labels);
  auto dice = dice_loss(ops::softmax_channel(logits), one_hot(labels, logits.dim(1)));
  return {combine_supervised(ce, dice), ce, dice};
}

template <typename T>
Tensor<T> combine_supervised(const Tensor<T>& ce, const Tensor<T>& dice) {
  return ops::affine(ops::add(ce, dice), T(0.5));
}

/// Mean squared reconstruction error over all voxels.
template <typename T>
Tensor<T> dae_recon_loss(const Tensor<T>& recon, const Tensor<T>& clean) {
  if (recon.shape() != clean.shape()) throw ShapeError("dae_recon_loss: shape mismatch");
  return ops::mean(ops::square(ops::sub(recon, clean.detach())));
}

/// U = (f_d(f_e(p)) - p)^2 from a single DAE pass. No graph is recorded.
template <typename T>
UncertaintyMap<T> dae_uncertainty(const DaeConfig& cfg, const ModelParams<T>& dae, const Tensor<T>& p_fg) {
  NoGradGuard no_grad;
  auto input = p_fg.detach();
  auto recon = dae_forward(cfg, dae, input);
  return uncertainty_from_reconstruction(recon, input);
}

/// (recon - p)^2 reshaped to [B,H,W].
template <typename T>
UncertaintyMap<T> uncertainty_from_reconstruction(const Tensor<T>& recon, const Tensor<T>& p_fg) {
  if (recon.shape() != p_fg.shape() || p_fg.rank() != 4 || p_fg.dim(1) != 1) {
    throw ShapeError("dae_uncertainty: expected matching [B,1,H,W] maps");
  }
  std::vector<T> u(p_fg.numel());
  for (std::size_t i = 0; i < u.size(); ++i) {
    const T d = recon[i] - p_fg[i];
    u[i] = d * d;
  }
  return {Tensor<T>::from({p_fg.dim(0), p_fg.dim(2), p_fg.dim(3)}, std::move(u)), UncertaintyMethod::DaeL2, 1};
}

/// Predictive entropy of the mean softmax over K MC-dropout passes.
template <typename T>
UncertaintyMap<T> entropy_uncertainty(const SegNetConfig& cfg, const ModelParams<T>& seg, const Tensor<T>& image,
                                      int K, Rng& rng) {
  if (K < 2) throw ConfigError("entropy_uncertainty: K must be >= 2, got " + std::to_string(K));
  NoGradGuard no_grad;
  std::vector<T> mean_prob;
  Shape shape;
  for (int k = 0; k < K; ++k) {
    auto p = ops::softmax_channel(seg_forward(cfg, seg, image, ForwardMode::McDropout, &rng));
    if (mean_prob.empty()) {
      mean_prob.assign(p.numel(), T(0));
      shape = p.shape();
    }
    for (std::size_t i = 0; i < mean_prob.size(); ++i) mean_prob[i] += p[i];
  }
  for (auto& v : mean_prob) v /= static_cast<T>(K);
  auto u = entropy_of(Tensor<T>::from(shape, std::move(mean_prob)));
  return {u, UncertaintyMethod::Entropy, K};
}

/// -sum_c p_c ln p_c over axis 1 of [B,C,H,W] -> [B,H,W].
template <typename T>
Tensor<T> entropy_of(const Tensor<T>& prob) {
  const std::size_t B = prob.dim(0), C = prob.dim(1), S = prob.numel() / (B * C);
  std::vector<T> u(B * S, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t s = 0; s < S; ++s) {
        const T p = prob[(b * C + c) * S + s];
        if (p > T(0)) u[b * S + s] -= p * std::log(p);
      }
  for (auto& v : u) v = std::max(v, T(0));
  return Tensor<T>::from({B, prob.dim(2), prob.dim(3)}, std::move(u));
}

/// exp(-gamma * U).
template <typename T>
ConsistencyWeights<T> reliability_weights(const UncertaintyMap<T>& U, double gamma) {
  if (!(gamma > 0)) throw ConfigError("reliability_weights: gamma must be > 0");
  auto w = U.values.clone(false);
  for (auto& v : w.data()) v = static_cast<T>(std::exp(-gamma * static_cast<double>(v)));
  return {w, WeightScheme::ExpWeight};
}

/// Binary mask U < u_max * (0.75 + 0.25 exp(-5 (1 - t/t_max)^2)).
template <typename T>
ConsistencyWeights<T> threshold_weights(const UncertaintyMap<T>& U, std::int64_t t, std::int64_t t_max, double u_max) {
  const double h = schedules::uncertainty_threshold(t, t_max, u_max);
  auto w = U.values.clone(false);
  for (auto& v : w.data()) v = static_cast<double>(v) < h ? T(1) : T(0);
  return {w, WeightScheme::ThresholdMask};
}

template <typename T>
ConsistencyWeights<T> uniform_weights(const Shape& shape) {
  return {Tensor<T>::full(shape, T(1)), WeightScheme::Uniform};
}

/// Reliability-weighted consistency between student and teacher maps.
///
/// Per sample i: sum_v w_v ||ps_v - pt_v||^2 / sum_v w_v, with the squared
/// difference summed over the channels given. Samples whose weights are all
/// zero are left out of the batch mean. Only p_s receives gradient.
template <typename T>
Tensor<T> consistency_loss(const Tensor<T>& p_s, const Tensor<T>& p_t, const ConsistencyWeights<T>& weights) {
  if (p_s.shape() != p_t.shape() || p_s.rank() != 4) throw ShapeError("consistency_loss: p_s/p_t shape mismatch");
  const std::size_t B = p_s.dim(0), C = p_s.dim(1), S = p_s.dim(2) * p_s.dim(3);
  const auto& w = weights.values;
  if (w.rank() != 3 || w.dim(0) != B || w.dim(1) != p_s.dim(2) || w.dim(2) != p_s.dim(3)) {
    throw ShapeError("consistency_loss: weights must be [B,H,W]");
  }
  std::vector<T> wsum(B, T(0));
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t s = 0; s < S; ++s) {
      const T v = w[b * S + s];
      if (!(v >= T(0))) throw DomainError("consistency_loss: negative or NaN weight");
      wsum[b] += v;
    }
  std::size_t valid = 0;
  for (T v : wsum) valid += v > T(0) ? 1 : 0;
  if (valid == 0) throw DegenerateWeightError("consistency_loss: all weights are zero");

  std::vector<T> wrep(B * C * S);
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t c = 0; c < C; ++c)
      std::copy_n(w.ptr() + b * S, S, wrep.data() + (b * C + c) * S);
  std::vector<T> coef(B);
  for (std::size_t b = 0; b < B; ++b) coef[b] = wsum[b] > T(0) ? T(1) / (wsum[b] * static_cast<T>(valid)) : T(0);

  auto diff = ops::square(ops::sub(p_s, p_t.detach()));
  auto per_sample = ops::sum_per_sample(ops::mul(diff, Tensor<T>::from(p_s.shape(), std::move(wrep))));
  return ops::sum(ops::mul(per_sample, Tensor<T>::from({B}, std::move(coef))));
}

}  // namespace spssl::losses
