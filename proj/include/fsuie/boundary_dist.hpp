#pragma once

// Fuzzy boundary targets: a gold boundary index becomes a truncated,
// discretized Gaussian over nearby token positions, normalized by softmax
// over the positions that survive the threshold.

#include "fsuie/linalg.hpp"

#include <cmath>
#include <compare>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fsuie {

enum class SideMode { BothSides, StartOnly };

inline std::string to_string(SideMode m) {
  return m == SideMode::BothSides ? "BothSides" : "StartOnly";
}

inline SideMode side_mode_from_string(const std::string& s) {
  if (s == "BothSides") return SideMode::BothSides;
  if (s == "StartOnly") return SideMode::StartOnly;
  throw std::invalid_argument("unknown side_mode '" + s + "'");
}

/// Gold span over content tokens; `end` is inclusive.
struct SpanAnnotation {
  int start = 0;
  int end = 0;
  int type = 0;

  friend auto operator<=>(const SpanAnnotation&, const SpanAnnotation&) = default;
};

inline double gaussian_pdf(double x, double mu, double sigma) {
  if (!(sigma > 0.0)) throw std::invalid_argument("gaussian_pdf: sigma must be positive");
  const double u = (x - mu) / sigma;
  return std::exp(-0.5 * u * u) / (sigma * std::sqrt(2.0 * std::numbers::pi));
}

/// Parameters of the fuzzy boundary generator. `step` is the pdf-argument
/// distance between adjacent token indices; `theta` filters raw pdf values.
class FuzzyConfig {
 public:
  FuzzyConfig() : FuzzyConfig(0.5, 0.3, 0.3, SideMode::BothSides) {}

  FuzzyConfig(double sigma, double theta, double step, SideMode side = SideMode::BothSides)
      : sigma_(sigma), theta_(theta), step_(step), side_(side) {
    require(sigma > 0.0, "FuzzyConfig: sigma must be positive");
    require(step > 0.0, "FuzzyConfig: step must be positive");
    require(theta >= 0.0, "FuzzyConfig: theta must be non-negative");
    require(theta < gaussian_pdf(0.0, 0.0, sigma),
            "FuzzyConfig: theta must be below the pdf peak 1/(sigma*sqrt(2*pi))");
  }

  double sigma() const { return sigma_; }
  double theta() const { return theta_; }
  double step() const { return step_; }
  SideMode side_mode() const { return side_; }

 private:
  double sigma_;
  double theta_;
  double step_;
  SideMode side_;
};

struct BoundaryDistribution {
  std::vector<double> probs;
  int gt_index = 0;
  int support_lo = 0;  // inclusive
  int support_hi = 0;  // inclusive

  int support_width() const { return support_hi - support_lo + 1; }
};

inline BoundaryDistribution one_hot_distribution(int index, int seq_len) {
  if (seq_len <= 0 || index < 0 || index >= seq_len)
    throw std::out_of_range("one_hot_distribution: index outside sequence");
  BoundaryDistribution d;
  d.probs.assign(static_cast<std::size_t>(seq_len), 0.0);
  d.probs[static_cast<std::size_t>(index)] = 1.0;
  d.gt_index = d.support_lo = d.support_hi = index;
  return d;
}

inline BoundaryDistribution generate_boundary_distribution(int gt_index, int seq_len,
                                                           const FuzzyConfig& cfg) {
  if (seq_len <= 0 || gt_index < 0 || gt_index >= seq_len)
    throw std::out_of_range("generate_boundary_distribution: gt_index outside [0, seq_len)");

  // The pdf decreases in |offset|, so the surviving offsets form a contiguous
  // band around the peak. Offset k maps to pdf argument mu + k*step.
  auto raw = [&](int k) { return gaussian_pdf(k * cfg.step(), 0.0, cfg.sigma()); };
  int reach = 0;
  while (reach + 1 < seq_len && raw(reach + 1) >= cfg.theta()) ++reach;

  BoundaryDistribution d;
  d.gt_index = gt_index;
  d.support_lo = std::max(0, gt_index - reach);
  d.support_hi = std::min(seq_len - 1, gt_index + reach);
  d.probs.assign(static_cast<std::size_t>(seq_len), 0.0);

  // Softmax over the surviving raw values; raw values are bounded by the pdf
  // peak so no max-shift is needed.
  double z = 0.0;
  for (int i = d.support_lo; i <= d.support_hi; ++i) {
    const double e = std::exp(raw(i - gt_index));
    d.probs[static_cast<std::size_t>(i)] = e;
    z += e;
  }
  for (int i = d.support_lo; i <= d.support_hi; ++i) d.probs[static_cast<std::size_t>(i)] /= z;
  return d;
}

/// Start and end targets for one gold span. StartOnly keeps the end one-hot.
inline std::pair<BoundaryDistribution, BoundaryDistribution> span_targets(
    const SpanAnnotation& span, int seq_len, const FuzzyConfig& cfg) {
  if (span.start > span.end) throw std::invalid_argument("span_targets: start after end");
  if (span.start < 0 || span.end >= seq_len)
    throw std::out_of_range("span_targets: span outside sequence");
  auto start = generate_boundary_distribution(span.start, seq_len, cfg);
  auto end = cfg.side_mode() == SideMode::BothSides
                 ? generate_boundary_distribution(span.end, seq_len, cfg)
                 : one_hot_distribution(span.end, seq_len);
  return {std::move(start), std::move(end)};
}

}  // namespace fsuie
