#pragma once

// Relative-position multi-head attention with a learnable, attenuated span.
//
// Scores follow s_tr = (y_t Wq) . (y_r Wk + p_{|t-r|}) restricted to a window
// of at most `span_len` tokens. Each head h owns a span fraction delta_h in
// [0, 1]; the full-attention length is l = delta_h * span_len, and the mask
// g_m(z) scales exp(s_tr) before normalization:
//
//   a_tr = g_m(t-r) exp(s_tr) / sum_q g_m(t-q) exp(s_tq)
//
// Three mask shapes are supported: a linear ramp of length `ramp` after l,
// a hard step at l, and a Gaussian tail (std ramp/3) rescaled to 1 at l.

#include "fsuie/linalg.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsuie {

enum class Attenuation { Linear, Step, GaussianTail };
enum class WindowMode { Backward, Symmetric };

inline std::string to_string(Attenuation a) {
  switch (a) {
    case Attenuation::Linear: return "Linear";
    case Attenuation::Step: return "Step";
    case Attenuation::GaussianTail: return "GaussianTail";
  }
  return "?";
}

inline Attenuation attenuation_from_string(const std::string& s) {
  if (s == "Linear") return Attenuation::Linear;
  if (s == "Step") return Attenuation::Step;
  if (s == "GaussianTail") return Attenuation::GaussianTail;
  throw std::invalid_argument("unknown attenuation variant '" + s + "'");
}

inline std::string to_string(WindowMode w) {
  return w == WindowMode::Backward ? "Backward" : "Symmetric";
}

inline WindowMode window_mode_from_string(const std::string& s) {
  if (s == "Backward") return WindowMode::Backward;
  if (s == "Symmetric") return WindowMode::Symmetric;
  throw std::invalid_argument("unknown window mode '" + s + "'");
}

struct FsaHeadState {
  double delta = 1.0;
  int span_len = 30;  // maximum attention span, tokens
  int ramp = 32;      // attenuation length d, tokens
  Attenuation kind = Attenuation::Linear;

  double full_span() const { return delta * span_len; }
};

/// Mask value g_m(z) for a non-negative token distance z.
inline double attenuation(double z, const FsaHeadState& head) {
  const double l = head.full_span();
  switch (head.kind) {
    case Attenuation::Linear: {
      const double g = (-z + l + head.ramp) / head.ramp;
      if (g > 1.0) return 1.0;
      if (g < 0.0) return 0.0;
      return g;
    }
    case Attenuation::Step:
      return z <= l ? 1.0 : 0.0;
    case Attenuation::GaussianTail: {
      if (z <= l) return 1.0;
      const double sd = head.ramp / 3.0;
      const double u = (z - l) / sd;
      return std::exp(-0.5 * u * u);
    }
  }
  return 0.0;
}

/// d g_m(z) / d l. Zero wherever the mask is clamped or piecewise constant.
inline double attenuation_dl(double z, const FsaHeadState& head) {
  const double l = head.full_span();
  switch (head.kind) {
    case Attenuation::Linear: {
      const double g = (-z + l + head.ramp) / head.ramp;
      return (g > 1.0 || g < 0.0) ? 0.0 : 1.0 / head.ramp;
    }
    case Attenuation::Step:
      return 0.0;
    case Attenuation::GaussianTail: {
      if (z <= l) return 0.0;
      const double sd = head.ramp / 3.0;
      return attenuation(z, head) * (z - l) / (sd * sd);
    }
  }
  return 0.0;
}

struct AttentionWindow {
  int span_len = 30;
  WindowMode mode = WindowMode::Backward;

  bool contains(int t, int r) const {
    const int off = t - r;
    return mode == WindowMode::Backward ? (off >= 0 && off <= span_len) : std::abs(off) <= span_len;
  }
  // Window bounds for row t (inclusive).
  int first(int t) const { return std::max(0, t - span_len); }
  int last(int t, int n) const {
    return mode == WindowMode::Backward ? t : std::min(n - 1, t + span_len);
  }
};

/// Projections and relative embeddings. Row z of `rel` is the embedding for
/// distance z in [0, span_len]; head h uses columns [h*head_dim, (h+1)*head_dim).
struct RpeAttentionParams {
  Mat wq, wk, wv;
  Mat rel;
  int num_heads = 1;
  int max_len = 512;

  int width() const { return static_cast<int>(wq.rows()); }
  int head_dim() const { return width() / num_heads; }
  int span_len() const { return static_cast<int>(rel.rows()) - 1; }

  void validate() const {
    require(num_heads > 0, "RpeAttentionParams: num_heads must be positive");
    require(wq.rows() == wq.cols() && wk.rows() == wq.rows() && wk.cols() == wq.cols() &&
                wv.rows() == wq.rows() && wv.cols() == wq.cols(),
            "RpeAttentionParams: projection shapes disagree");
    require(width() % num_heads == 0, "RpeAttentionParams: width not divisible by num_heads");
    require(rel.rows() >= 1 && rel.cols() == wq.cols(),
            "RpeAttentionParams: rel must have span_len+1 rows of model width");
  }
};

using HeadMatrices = std::vector<Mat>;

/// Per-head score matrices; entries outside the window are left at zero.
inline HeadMatrices rpe_scores(const Mat& y, const RpeAttentionParams& p,
                               const AttentionWindow& window) {
  p.validate();
  const int n = static_cast<int>(y.rows());
  if (n > p.max_len) throw std::length_error("rpe_scores: sequence longer than max_len");
  require(y.cols() == p.width(), "rpe_scores: input width mismatch");
  require(window.span_len == p.span_len(), "rpe_scores: window span_len disagrees with rel rows");
  const Mat q = y * p.wq;
  const Mat k = y * p.wk;
  const int hd = p.head_dim();
  HeadMatrices scores(static_cast<std::size_t>(p.num_heads), Mat::Zero(n, n));
  for (int h = 0; h < p.num_heads; ++h) {
    const int c0 = h * hd;
    Mat& s = scores[static_cast<std::size_t>(h)];
    for (int t = 0; t < n; ++t) {
      const auto qt = q.row(t).segment(c0, hd);
      for (int r = window.first(t); r <= window.last(t, n); ++r) {
        const int z = std::abs(t - r);
        s(t, r) = qt.dot(k.row(r).segment(c0, hd) + p.rel.row(z).segment(c0, hd));
      }
    }
  }
  return scores;
}

/// Masked softmax of each window row. A row whose mask is zero everywhere puts
/// all weight on the diagonal.
inline HeadMatrices fsa_weights(const HeadMatrices& scores, std::span<const FsaHeadState> heads,
                                const AttentionWindow& window) {
  require(scores.size() == heads.size(), "fsa_weights: one head state per score matrix");
  HeadMatrices out;
  out.reserve(scores.size());
  for (std::size_t h = 0; h < scores.size(); ++h) {
    const Mat& s = scores[h];
    const int n = static_cast<int>(s.rows());
    Mat a = Mat::Zero(n, n);
    for (int t = 0; t < n; ++t) {
      const int r0 = window.first(t), r1 = window.last(t, n);
      double mx = -INFINITY;
      for (int r = r0; r <= r1; ++r) mx = std::max(mx, s(t, r));
      double total = 0.0;
      for (int r = r0; r <= r1; ++r) {
        const double w = attenuation(std::abs(t - r), heads[h]) * std::exp(s(t, r) - mx);
        a(t, r) = w;
        total += w;
      }
      if (total > 0.0) {
        for (int r = r0; r <= r1; ++r) a(t, r) /= total;
      } else {
        a(t, t) = 1.0;
      }
    }
    out.push_back(std::move(a));
  }
  return out;
}

/// Everything the backward pass needs from one forward evaluation.
struct FsaTrace {
  Mat q, k, v;
  HeadMatrices scores;
  HeadMatrices weights;
  Mat out;
};

inline FsaTrace fsa_forward(const Mat& y, const RpeAttentionParams& p,
                            std::span<const FsaHeadState> heads, const AttentionWindow& window) {
  require(static_cast<int>(heads.size()) == p.num_heads, "fsa_forward: one head state per head");
  FsaTrace tr;
  tr.scores = rpe_scores(y, p, window);
  tr.weights = fsa_weights(tr.scores, heads, window);
  tr.q = y * p.wq;
  tr.k = y * p.wk;
  tr.v = y * p.wv;
  const int hd = p.head_dim();
  tr.out = Mat::Zero(y.rows(), y.cols());
  for (int h = 0; h < p.num_heads; ++h)
    tr.out.middleCols(h * hd, hd) = tr.weights[static_cast<std::size_t>(h)] * tr.v.middleCols(h * hd, hd);
  return tr;
}

/// Span-aware representation: attention output with heads concatenated.
inline Mat fsa_layer(const Mat& y, const RpeAttentionParams& p, std::span<const FsaHeadState> heads,
                     const AttentionWindow& window) {
  return fsa_forward(y, p, heads, window).out;
}

/// Backpropagates dout through the layer. Parameter gradients are added to
/// `grad` (same shapes as `p`), span-fraction gradients to `grad_delta`, and
/// the input gradient to `dy`.
inline void fsa_backward(const FsaTrace& tr, const Mat& y, const RpeAttentionParams& p,
                         std::span<const FsaHeadState> heads, const AttentionWindow& window,
                         const Mat& dout, RpeAttentionParams& grad, std::span<double> grad_delta,
                         Mat& dy) {
  const int n = static_cast<int>(y.rows());
  const int hd = p.head_dim();
  Mat dq = Mat::Zero(n, y.cols()), dk = Mat::Zero(n, y.cols()), dv = Mat::Zero(n, y.cols());
  for (int h = 0; h < p.num_heads; ++h) {
    const auto hs = static_cast<std::size_t>(h);
    const int c0 = h * hd;
    const Mat& s = tr.scores[hs];
    const Mat& a = tr.weights[hs];
    double dl = 0.0;
    std::vector<double> da, e;
    for (int t = 0; t < n; ++t) {
      const int r0 = window.first(t), r1 = window.last(t, n);
      const auto go = dout.row(t).segment(c0, hd);
      const int len = r1 - r0 + 1;
      da.assign(static_cast<std::size_t>(len), 0.0);
      double abar = 0.0;
      for (int r = r0; r <= r1; ++r) {
        da[static_cast<std::size_t>(r - r0)] = go.dot(tr.v.row(r).segment(c0, hd));
        dv.row(r).segment(c0, hd) += a(t, r) * go;
        abar += a(t, r) * da[static_cast<std::size_t>(r - r0)];
      }
      // Unnormalized weights; a fallback row (all masks zero) has no
      // dependence on scores or masks.
      double mx = -INFINITY;
      for (int r = r0; r <= r1; ++r) mx = std::max(mx, s(t, r));
      e.assign(static_cast<std::size_t>(len), 0.0);
      double total = 0.0;
      for (int r = r0; r <= r1; ++r) {
        const double ex = std::exp(s(t, r) - mx);
        e[static_cast<std::size_t>(r - r0)] = ex;
        total += attenuation(std::abs(t - r), heads[hs]) * ex;
      }
      if (!(total > 0.0)) continue;
      const auto qt = tr.q.row(t).segment(c0, hd);
      for (int r = r0; r <= r1; ++r) {
        const int z = std::abs(t - r);
        const double centered = da[static_cast<std::size_t>(r - r0)] - abar;
        const double ds = a(t, r) * centered;
        const double dm = e[static_cast<std::size_t>(r - r0)] / total * centered;
        dl += dm * attenuation_dl(z, heads[hs]);
        if (ds == 0.0) continue;
        dq.row(t).segment(c0, hd) += ds * (tr.k.row(r).segment(c0, hd) + p.rel.row(z).segment(c0, hd));
        dk.row(r).segment(c0, hd) += ds * qt;
        grad.rel.row(z).segment(c0, hd) += ds * qt;
      }
    }
    grad_delta[hs] += dl * heads[hs].span_len;
  }
  grad.wq.noalias() += y.transpose() * dq;
  grad.wk.noalias() += y.transpose() * dk;
  grad.wv.noalias() += y.transpose() * dv;
  dy.noalias() += dq * p.wq.transpose();
  dy.noalias() += dk * p.wk.transpose();
  dy.noalias() += dv * p.wv.transpose();
}

/// Attention dump: one weight matrix per head plus its full-attention length.
inline nlohmann::json attention_dump_json(const HeadMatrices& weights,
                                          std::span<const FsaHeadState> heads) {
  nlohmann::json j;
  j["num_heads"] = weights.size();
  j["heads"] = nlohmann::json::array();
  for (std::size_t h = 0; h < weights.size(); ++h) {
    const Mat& a = weights[h];
    nlohmann::json rows = nlohmann::json::array();
    for (Eigen::Index t = 0; t < a.rows(); ++t) {
      std::vector<double> row(a.row(t).data(), a.row(t).data() + a.cols());
      rows.push_back(row);
    }
    j["heads"].push_back({{"head", h},
                          {"delta", heads[h].delta},
                          {"l", heads[h].full_span()},
                          {"span_len", heads[h].span_len},
                          {"ramp", heads[h].ramp},
                          {"variant", to_string(heads[h].kind)},
                          {"weights", std::move(rows)}});
  }
  return j;
}

}  // namespace fsuie
