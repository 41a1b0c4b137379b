#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <utility>
#include <vector>

#include "lesionforge/error.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

inline constexpr double kDiceSmoothing = 1e-5;
inline constexpr double kProbabilityClamp = 1e-7;

/// Soft predictions in [0, 1].
class ProbGrid : public Grid<double> {
 public:
  ProbGrid() = default;
  ProbGrid(Dims dims, std::vector<double> values) : Grid(dims, std::move(values)) {
    for (double v : data_)
      if (!(v >= 0.0 && v <= 1.0)) throw ArgumentError("probabilities must lie in [0, 1]");
  }
  explicit ProbGrid(const BinaryMask& hard) : Grid(hard.dims()) {
    for (std::size_t i = 0; i < hard.size(); ++i) data_[i] = hard.test(i) ? 1.0 : 0.0;
  }
};

struct LossWithGradient {
  double loss = 0.0;
  std::vector<double> gradient;  // d loss / d p, one entry per voxel
};

/// 1 - (2 |s ∩ p| + δ) / (|s| + |p| + δ) with soft cardinalities.
inline LossWithGradient soft_dice_loss(const BinaryMask& s, const ProbGrid& p) {
  require_same_dims(s.dims(), p.dims(), "soft_dice_loss");
  double inter = 0.0, total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double si = s.test(i) ? 1.0 : 0.0;
    inter += si * p[i];
    total += si + p[i];
  }
  const double num = 2.0 * inter + kDiceSmoothing;
  const double den = total + kDiceSmoothing;
  LossWithGradient r{1.0 - num / den, std::vector<double>(p.size())};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double si = s.test(i) ? 1.0 : 0.0;
    r.gradient[i] = -(2.0 * si * den - num) / (den * den);
  }
  return r;
}

/// Mean binary cross entropy, probabilities clamped to [1e-7, 1 - 1e-7].
/// The gradient is zero where the clamp is active.
inline LossWithGradient cross_entropy_loss(const BinaryMask& s, const ProbGrid& p) {
  require_same_dims(s.dims(), p.dims(), "cross_entropy_loss");
  const double n = static_cast<double>(p.size());
  LossWithGradient r{0.0, std::vector<double>(p.size())};
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double q = std::clamp(p[i], kProbabilityClamp, 1.0 - kProbabilityClamp);
    const bool clamped = q != p[i];
    if (s.test(i)) {
      r.loss -= std::log(q);
      r.gradient[i] = clamped ? 0.0 : -1.0 / (q * n);
    } else {
      r.loss -= std::log1p(-q);
      r.gradient[i] = clamped ? 0.0 : 1.0 / ((1.0 - q) * n);
    }
  }
  r.loss /= n;
  return r;
}

/// λ1 · dice + λ2 · cross entropy; both terms are non-negative penalties.
inline double seg_loss(const BinaryMask& s, const ProbGrid& p, double lambda1, double lambda2) {
  if (!(lambda1 >= 0.0) || !(lambda2 >= 0.0)) throw ArgumentError("seg_loss: lambdas must be >= 0");
  return lambda1 * soft_dice_loss(s, p).loss + lambda2 * cross_entropy_loss(s, p).loss;
}

/// Anomaly term plus the class-averaged structure term.
inline double total_seg_loss(const BinaryMask& s_a, const ProbGrid& p_a,
                             const std::vector<std::pair<BinaryMask, ProbGrid>>& structure_classes, double lambda1,
                             double lambda2) {
  if (structure_classes.empty()) throw ArgumentError("total_seg_loss: empty structure class list");
  double structures = 0.0;
  for (const auto& [s, p] : structure_classes) structures += seg_loss(s, p, lambda1, lambda2);
  structures /= static_cast<double>(structure_classes.size());
  return seg_loss(s_a, p_a, lambda1, lambda2) + structures;
}

/// Per-step next-token distributions, N rows of V probabilities.
class TokenDistribution {
 public:
  TokenDistribution(std::size_t steps, std::size_t vocab, std::vector<double> probs)
      : steps_(steps), vocab_(vocab), probs_(std::move(probs)) {
    if (vocab == 0) throw ArgumentError("token distribution needs a non-empty vocabulary");
    if (probs_.size() != steps * vocab) throw ArgumentError("token distribution size mismatch");
    for (std::size_t i = 0; i < steps; ++i) {
      double sum = 0.0;
      for (std::size_t v = 0; v < vocab; ++v) {
        const double q = probs_[i * vocab + v];
        if (!(q >= 0.0 && q <= 1.0)) throw ArgumentError("token probabilities must lie in [0, 1]");
        sum += q;
      }
      if (std::fabs(sum - 1.0) > 1e-6)
        throw ArgumentError("token distribution row " + std::to_string(i) + " sums to " + std::to_string(sum));
    }
  }

  std::size_t steps() const { return steps_; }
  std::size_t vocab() const { return vocab_; }
  double prob(std::size_t step, std::size_t token) const { return probs_[step * vocab_ + token]; }

 private:
  std::size_t steps_;
  std::size_t vocab_;
  std::vector<double> probs_;
};

/// -Σ_i log P(T_i | T_<i).
inline double autoregressive_nll(const TokenDistribution& dist, const std::vector<std::size_t>& targets) {
  if (targets.size() != dist.steps())
    throw ArgumentError("autoregressive_nll: " + std::to_string(targets.size()) + " targets for " +
                        std::to_string(dist.steps()) + " steps");
  double loss = 0.0;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i] >= dist.vocab())
      throw ArgumentError("autoregressive_nll: target id " + std::to_string(targets[i]) + " outside vocabulary");
    const double q = dist.prob(i, targets[i]);
    if (q <= 0.0) throw ArgumentError("autoregressive_nll: target token at step " + std::to_string(i) + " has probability 0");
    loss -= std::log(q);
  }
  return loss;
}

}  // namespace lesionforge
