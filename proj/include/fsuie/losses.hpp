#pragma once

// Boundary losses over start/end logit vectors: per-position sigmoid BCE,
// KL(target || softmax(logits)) against fuzzy targets, and their weighted sum.
// Every loss returns its exact gradient with respect to the logits.

#include "fsuie/boundary_dist.hpp"
#include "fsuie/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

namespace fsuie {

struct LossConfig {
  double lambda = 0.01;
  double epsilon_floor = 1e-12;

  void validate() const {
    require(lambda >= 0.0, "LossConfig: lambda must be non-negative");
    require(epsilon_floor > 0.0 && epsilon_floor <= 1e-4,
            "LossConfig: epsilon_floor must lie in (0, 1e-4]");
  }
};

struct BoundaryLogits {
  Vec start;
  Vec end;

  Eigen::Index size() const { return start.size(); }

  static BoundaryLogits zeros(Eigen::Index n) { return {Vec::Zero(n), Vec::Zero(n)}; }
};

struct LossValue {
  double value = 0.0;
  BoundaryLogits grad;
};

struct TotalLoss {
  double value = 0.0;
  double bce = 0.0;
  double kl = 0.0;
  BoundaryLogits grad;
};

using TargetPair = std::pair<BoundaryDistribution, BoundaryDistribution>;

namespace detail {

// max(z,0) - z*y + log(1 + exp(-|z|)), stable for large |z|.
inline double bce_term(double z, double y) {
  return std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
}

// Accumulates KL(q || softmax(z)) into grad, returns the divergence.
// Positions whose probability falls below the floor contribute a constant
// log term, so they carry no gradient.
inline double kl_one(const Vec& z, const std::vector<double>& q, double floor, double scale,
                     Vec& grad) {
  const Vec p = softmax(z);
  double kl = 0.0;
  double live_mass = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double qi = q[static_cast<std::size_t>(i)];
    if (qi <= 0.0) continue;  // 0 log 0 := 0
    const bool floored = p[i] < floor;
    kl += qi * (std::log(qi) - std::log(floored ? floor : p[i]));
    if (!floored) live_mass += qi;
  }
  for (Eigen::Index j = 0; j < z.size(); ++j) {
    const double qj = q[static_cast<std::size_t>(j)];
    const double own = (p[j] >= floor) ? qj : 0.0;
    grad[j] += scale * (p[j] * live_mass - own);
  }
  return kl;
}

}  // namespace detail

/// Mean sigmoid BCE over every position of both logit vectors. Labels are 1 at
/// each gold start (resp. end) position and 0 elsewhere.
inline LossValue bce_boundary_loss(const BoundaryLogits& logits,
                                   std::span<const SpanAnnotation> gold) {
  const Eigen::Index n = logits.size();
  if (logits.end.size() != n) throw std::invalid_argument("bce_boundary_loss: ragged logits");
  Vec y_start = Vec::Zero(n), y_end = Vec::Zero(n);
  for (const auto& s : gold) {
    if (s.start < 0 || s.end >= n || s.start > s.end)
      throw std::out_of_range("bce_boundary_loss: gold span outside sequence");
    y_start[s.start] = 1.0;
    y_end[s.end] = 1.0;
  }
  LossValue out{0.0, BoundaryLogits::zeros(n)};
  if (n == 0) return out;
  const double scale = 1.0 / (2.0 * static_cast<double>(n));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    sum += detail::bce_term(logits.start[i], y_start[i]);
    sum += detail::bce_term(logits.end[i], y_end[i]);
    out.grad.start[i] = scale * (sigmoid(logits.start[i]) - y_start[i]);
    out.grad.end[i] = scale * (sigmoid(logits.end[i]) - y_end[i]);
  }
  out.value = sum * scale;
  return out;
}

/// Sum over {start, end} of KL(target || softmax(logits)), averaged over the
/// supplied target pairs. No targets gives zero loss.
inline LossValue kl_fuzzy_loss(const BoundaryLogits& logits, std::span<const TargetPair> targets,
                               double epsilon_floor = 1e-12) {
  const Eigen::Index n = logits.size();
  if (logits.end.size() != n) throw std::invalid_argument("kl_fuzzy_loss: ragged logits");
  LossValue out{0.0, BoundaryLogits::zeros(n)};
  if (targets.empty()) return out;
  const double scale = 1.0 / static_cast<double>(targets.size());
  for (const auto& [qs, qe] : targets) {
    if (static_cast<Eigen::Index>(qs.probs.size()) != n ||
        static_cast<Eigen::Index>(qe.probs.size()) != n)
      throw std::invalid_argument("kl_fuzzy_loss: target length does not match logits");
    out.value += scale * detail::kl_one(logits.start, qs.probs, epsilon_floor, scale, out.grad.start);
    out.value += scale * detail::kl_one(logits.end, qe.probs, epsilon_floor, scale, out.grad.end);
  }
  return out;
}

/// L_ori + lambda * L_FS. With lambda == 0 the KL term is skipped entirely.
inline TotalLoss total_loss(const BoundaryLogits& logits, std::span<const SpanAnnotation> gold,
                            std::span<const TargetPair> targets, const LossConfig& cfg) {
  cfg.validate();
  auto bce = bce_boundary_loss(logits, gold);
  TotalLoss out{bce.value, bce.value, 0.0, std::move(bce.grad)};
  if (cfg.lambda == 0.0) return out;
  auto kl = kl_fuzzy_loss(logits, targets, cfg.epsilon_floor);
  out.kl = kl.value;
  out.value += cfg.lambda * kl.value;
  out.grad.start += cfg.lambda * kl.grad.start;
  out.grad.end += cfg.lambda * kl.grad.end;
  return out;
}

}  // namespace fsuie
