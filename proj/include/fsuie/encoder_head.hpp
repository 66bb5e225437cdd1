#pragma once

// Toy span extractor: a small bidirectional Transformer encoder conditioned on
// a prepended type-marker token, an optional fuzzy span attention layer on the
// encoder output, and a start/end boundary head. Forward passes record a trace
// so the backward pass can produce exact parameter gradients.

#include "fsuie/attention.hpp"
#include "fsuie/boundary_dist.hpp"
#include "fsuie/linalg.hpp"
#include "fsuie/losses.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <numbers>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace fsuie {

struct ModelConfig {
  int vocab_size = 48;
  int model_width = 16;
  int num_layers = 2;
  int num_heads = 4;
  int max_seq_len = 48;
  int type_count = 2;
  int ffn_mult = 2;
  bool fsa_enabled = true;
  bool fsl_enabled = true;

  void validate() const {
    require(vocab_size > 0 && model_width > 0 && num_layers >= 0 && num_heads > 0 &&
                max_seq_len > 0 && type_count > 0 && ffn_mult > 0,
            "ModelConfig: sizes must be positive");
    require(model_width % num_heads == 0, "ModelConfig: model_width must be divisible by num_heads");
  }
};

/// Template for every FSA head plus the window shape. `delta_init` seeds each
/// head's learnable span fraction.
struct FsaConfig {
  double delta_init = 1.0;
  int span_len = 30;
  int ramp = 32;
  Attenuation variant = Attenuation::Linear;
  WindowMode window = WindowMode::Backward;

  void validate() const {
    require(delta_init >= 0.0 && delta_init <= 1.0, "FsaConfig: delta_init must lie in [0,1]");
    require(span_len > 0, "FsaConfig: span_len must be positive");
    require(ramp > 0, "FsaConfig: ramp must be positive");
  }
  FsaHeadState head(double delta) const { return {delta, span_len, ramp, variant}; }
  AttentionWindow attention_window() const { return {span_len, window}; }
};

inline void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vocab_size", c.vocab_size},   {"model_width", c.model_width},
       {"num_layers", c.num_layers},   {"num_heads", c.num_heads},
       {"max_seq_len", c.max_seq_len}, {"type_count", c.type_count},
       {"ffn_mult", c.ffn_mult},       {"fsa_enabled", c.fsa_enabled},
       {"fsl_enabled", c.fsl_enabled}};
}
inline void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("model_width").get_to(c.model_width);
  j.at("num_layers").get_to(c.num_layers);
  j.at("num_heads").get_to(c.num_heads);
  j.at("max_seq_len").get_to(c.max_seq_len);
  j.at("type_count").get_to(c.type_count);
  j.at("ffn_mult").get_to(c.ffn_mult);
  j.at("fsa_enabled").get_to(c.fsa_enabled);
  j.at("fsl_enabled").get_to(c.fsl_enabled);
}
inline void to_json(nlohmann::json& j, const FsaConfig& c) {
  j = {{"delta_init", c.delta_init},
       {"span_len", c.span_len},
       {"ramp", c.ramp},
       {"variant", to_string(c.variant)},
       {"window", to_string(c.window)}};
}
inline void from_json(const nlohmann::json& j, FsaConfig& c) {
  j.at("delta_init").get_to(c.delta_init);
  j.at("span_len").get_to(c.span_len);
  j.at("ramp").get_to(c.ramp);
  c.variant = attenuation_from_string(j.at("variant").get<std::string>());
  c.window = window_mode_from_string(j.at("window").get<std::string>());
}

struct EncoderBlock {
  Mat ln1_g, ln1_b, wq, wk, wv, wo, ln2_g, ln2_b, w1, b1, w2, b2;
};

struct Params {
  Mat tok_emb, type_emb, pos_emb;
  std::vector<EncoderBlock> blocks;
  Mat lnf_g, lnf_b;
  RpeAttentionParams fsa;
  Mat fsa_delta;  // 1 x num_heads
  Mat head_w;     // width x 2: start, end
  Mat head_b;     // 1 x 2
};

using ParamRef = std::pair<std::string, Mat*>;

/// Named view of every tensor in `p`, in a fixed order.
inline std::vector<ParamRef> param_list(Params& p, bool with_fsa) {
  std::vector<ParamRef> out{{"tok_emb", &p.tok_emb}, {"type_emb", &p.type_emb}, {"pos_emb", &p.pos_emb}};
  for (std::size_t i = 0; i < p.blocks.size(); ++i) {
    auto& b = p.blocks[i];
    const std::string pre = "block" + std::to_string(i) + ".";
    for (auto [n, m] : std::initializer_list<ParamRef>{
             {"ln1_g", &b.ln1_g}, {"ln1_b", &b.ln1_b}, {"wq", &b.wq}, {"wk", &b.wk},
             {"wv", &b.wv}, {"wo", &b.wo}, {"ln2_g", &b.ln2_g}, {"ln2_b", &b.ln2_b},
             {"w1", &b.w1}, {"b1", &b.b1}, {"w2", &b.w2}, {"b2", &b.b2}})
      out.emplace_back(pre + n, m);
  }
  out.emplace_back("lnf_g", &p.lnf_g);
  out.emplace_back("lnf_b", &p.lnf_b);
  if (with_fsa) {
    out.emplace_back("fsa.wq", &p.fsa.wq);
    out.emplace_back("fsa.wk", &p.fsa.wk);
    out.emplace_back("fsa.wv", &p.fsa.wv);
    out.emplace_back("fsa.rel", &p.fsa.rel);
    out.emplace_back("fsa.delta", &p.fsa_delta);
  }
  out.emplace_back("head_w", &p.head_w);
  out.emplace_back("head_b", &p.head_b);
  return out;
}

inline Params zeros_like(const Params& p) {
  Params z = p;
  for (auto& [name, m] : param_list(z, true)) m->setZero();
  return z;
}

/// Per-token representations; row 0 is the type marker, rows 1.. are content.
struct EncodedSequence {
  Mat repr;
  static constexpr int prefix = 1;
  int content_len() const { return static_cast<int>(repr.rows()) - prefix; }
};

struct SpanPrediction {
  int start = 0;
  int end = 0;
  int type_id = 0;
  double score = 0.0;
};

namespace detail {

constexpr double kLnEps = 1e-5;

struct LayerNormTrace {
  Mat xhat;
  Vec rstd;
};

inline Mat layer_norm(const Mat& x, const Mat& g, const Mat& b, LayerNormTrace* tr) {
  const Eigen::Index n = x.rows();
  Mat xhat(n, x.cols());
  Vec rstd(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double mean = x.row(i).mean();
    const double var = (x.row(i).array() - mean).square().mean();
    rstd[i] = 1.0 / std::sqrt(var + kLnEps);
    xhat.row(i) = (x.row(i).array() - mean) * rstd[i];
  }
  Mat out = (xhat.array().rowwise() * g.row(0).array()).rowwise() + b.row(0).array();
  if (tr) *tr = {std::move(xhat), std::move(rstd)};
  return out;
}

inline Mat layer_norm_backward(const LayerNormTrace& tr, const Mat& g, const Mat& dout, Mat& dg,
                               Mat& db) {
  dg.row(0) += (dout.array() * tr.xhat.array()).colwise().sum().matrix();
  db.row(0) += dout.colwise().sum();
  const Mat dxhat = dout.array().rowwise() * g.row(0).array();
  Mat dx(dout.rows(), dout.cols());
  for (Eigen::Index i = 0; i < dout.rows(); ++i) {
    const double m1 = dxhat.row(i).mean();
    const double m2 = (dxhat.row(i).array() * tr.xhat.row(i).array()).mean();
    dx.row(i) = tr.rstd[i] * (dxhat.row(i).array() - m1 - tr.xhat.row(i).array() * m2);
  }
  return dx;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

inline double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
}
inline double gelu_grad(double x) {
  const double u = kGeluC * (x + 0.044715 * x * x * x);
  const double th = std::tanh(u);
  return 0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
}

struct BlockTrace {
  Mat x;
  LayerNormTrace ln1;
  Mat a, q, k, v;
  std::vector<Mat> att;  // per-head softmax weights
  Mat o, h;
  LayerNormTrace ln2;
  Mat b, pre, act;
};

inline Mat row_softmax(const Mat& s) {
  Mat out(s.rows(), s.cols());
  for (Eigen::Index i = 0; i < s.rows(); ++i) {
    const double mx = s.row(i).maxCoeff();
    RowVec e = (s.row(i).array() - mx).exp().matrix();
    out.row(i) = e / e.sum();
  }
  return out;
}

inline Mat block_forward(const EncoderBlock& p, const Mat& x, int num_heads, BlockTrace* tr) {
  const int w = static_cast<int>(x.cols());
  const int hd = w / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
  LayerNormTrace ln1;
  Mat a = layer_norm(x, p.ln1_g, p.ln1_b, &ln1);
  Mat q = a * p.wq, k = a * p.wk, v = a * p.wv;
  Mat o(x.rows(), w);
  std::vector<Mat> att;
  att.reserve(static_cast<std::size_t>(num_heads));
  for (int h = 0; h < num_heads; ++h) {
    Mat s = (q.middleCols(h * hd, hd) * k.middleCols(h * hd, hd).transpose()) * scale;
    att.push_back(row_softmax(s));
    o.middleCols(h * hd, hd) = att.back() * v.middleCols(h * hd, hd);
  }
  Mat hres = x + o * p.wo;
  LayerNormTrace ln2;
  Mat b = layer_norm(hres, p.ln2_g, p.ln2_b, &ln2);
  Mat pre = (b * p.w1).rowwise() + p.b1.row(0);
  Mat act = pre.unaryExpr([](double u) { return gelu(u); });
  Mat out = hres + (act * p.w2);
  out.rowwise() += p.b2.row(0);
  if (tr) {
    *tr = {x, std::move(ln1), std::move(a), std::move(q), std::move(k), std::move(v), std::move(att),
           std::move(o), std::move(hres), std::move(ln2), std::move(b), std::move(pre), std::move(act)};
  }
  return out;
}

inline Mat block_backward(const EncoderBlock& p, const BlockTrace& tr, int num_heads,
                          const Mat& dout, EncoderBlock& g) {
  const int w = static_cast<int>(tr.x.cols());
  const int hd = w / num_heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(hd));

  Mat dh = dout;
  g.w2.noalias() += tr.act.transpose() * dout;
  g.b2.row(0) += dout.colwise().sum();
  Mat dact = dout * p.w2.transpose();
  Mat dpre = dact.array() * tr.pre.unaryExpr([](double u) { return gelu_grad(u); }).array();
  g.w1.noalias() += tr.b.transpose() * dpre;
  g.b1.row(0) += dpre.colwise().sum();
  Mat db = dpre * p.w1.transpose();
  dh += layer_norm_backward(tr.ln2, p.ln2_g, db, g.ln2_g, g.ln2_b);

  g.wo.noalias() += tr.o.transpose() * dh;
  Mat dO = dh * p.wo.transpose();
  Mat dq = Mat::Zero(tr.q.rows(), w), dk = Mat::Zero(tr.k.rows(), w), dv = Mat::Zero(tr.v.rows(), w);
  for (int h = 0; h < num_heads; ++h) {
    const Mat& A = tr.att[static_cast<std::size_t>(h)];
    const auto dOh = dO.middleCols(h * hd, hd);
    Mat dA = dOh * tr.v.middleCols(h * hd, hd).transpose();
    dv.middleCols(h * hd, hd) = A.transpose() * dOh;
    Vec rowdot = (dA.array() * A.array()).rowwise().sum();
    Mat dS = A.array() * (dA.colwise() - rowdot).array();
    dq.middleCols(h * hd, hd) = dS * tr.k.middleCols(h * hd, hd) * scale;
    dk.middleCols(h * hd, hd) = dS.transpose() * tr.q.middleCols(h * hd, hd) * scale;
  }
  g.wq.noalias() += tr.a.transpose() * dq;
  g.wk.noalias() += tr.a.transpose() * dk;
  g.wv.noalias() += tr.a.transpose() * dv;
  Mat da = dq * p.wq.transpose() + dk * p.wk.transpose() + dv * p.wv.transpose();
  return dh + layer_norm_backward(tr.ln1, p.ln1_g, da, g.ln1_g, g.ln1_b);
}

}  // namespace detail

/// Intermediate values of one forward pass over (tokens, type).
struct ForwardTrace {
  std::vector<int> tokens;
  int type_id = 0;
  std::vector<detail::BlockTrace> blocks;
  Mat pre_final;
  detail::LayerNormTrace lnf;
  EncodedSequence encoded;
  std::vector<FsaHeadState> heads;
  std::optional<FsaTrace> fsa;
  Mat span_repr;  // what the boundary head reads, marker row included
  BoundaryLogits logits;
};

class SpanModel {
 public:
  SpanModel(const ModelConfig& cfg, const FsaConfig& fsa_cfg, std::uint64_t seed)
      : cfg_(cfg), fsa_cfg_(fsa_cfg) {
    cfg_.validate();
    fsa_cfg_.validate();
    init(seed);
  }

  SpanModel(const ModelConfig& cfg, const FsaConfig& fsa_cfg, Params params)
      : cfg_(cfg), fsa_cfg_(fsa_cfg), params_(std::move(params)) {
    cfg_.validate();
    fsa_cfg_.validate();
    check_shapes();
  }

  const ModelConfig& config() const { return cfg_; }
  const FsaConfig& fsa_config() const { return fsa_cfg_; }
  const Params& params() const { return params_; }
  Params& params() { return params_; }

  std::vector<ParamRef> parameters() { return param_list(params_, cfg_.fsa_enabled); }

  std::vector<FsaHeadState> head_states() const {
    std::vector<FsaHeadState> out;
    for (int h = 0; h < cfg_.num_heads; ++h) out.push_back(fsa_cfg_.head(params_.fsa_delta(0, h)));
    return out;
  }

  /// Full-attention length l = delta * span_len of every FSA head.
  std::vector<double> head_spans() const {
    std::vector<double> out;
    for (const auto& h : head_states()) out.push_back(h.full_span());
    return out;
  }

  /// Keeps every delta inside [0, 1].
  void project_deltas() { params_.fsa_delta = params_.fsa_delta.cwiseMax(0.0).cwiseMin(1.0); }

  EncodedSequence encode(std::span<const int> tokens, int type_id) const {
    ForwardTrace tr;
    encode_into(tokens, type_id, tr, false);
    return tr.encoded;
  }

  /// Encoder output plus the FSA layer output when FSA is enabled.
  Mat span_representation(const EncodedSequence& seq) const {
    if (!cfg_.fsa_enabled) return seq.repr;
    const auto heads = head_states();
    return seq.repr + fsa_layer(seq.repr, params_.fsa, heads, fsa_cfg_.attention_window());
  }

  /// Start/end logits for each content token of a (span-aware) representation.
  BoundaryLogits predict_boundaries(const Mat& repr) const {
    const Eigen::Index n = repr.rows() - EncodedSequence::prefix;
    require(n >= 0, "predict_boundaries: representation has no marker row");
    Mat z = repr.bottomRows(n) * params_.head_w;
    z.rowwise() += params_.head_b.row(0);
    return {z.col(0), z.col(1)};
  }

  BoundaryLogits predict_boundaries(const EncodedSequence& seq) const {
    return predict_boundaries(seq.repr);
  }

  ForwardTrace forward(std::span<const int> tokens, int type_id) const {
    ForwardTrace tr;
    encode_into(tokens, type_id, tr, true);
    if (cfg_.fsa_enabled) {
      tr.heads = head_states();
      tr.fsa = fsa_forward(tr.encoded.repr, params_.fsa, tr.heads, fsa_cfg_.attention_window());
      tr.span_repr = tr.encoded.repr + tr.fsa->out;
    } else {
      tr.span_repr = tr.encoded.repr;
    }
    tr.logits = predict_boundaries(tr.span_repr);
    return tr;
  }

  BoundaryLogits logits(std::span<const int> tokens, int type_id) const {
    return forward(tokens, type_id).logits;
  }

  /// FSA weights for (tokens, type); empty when FSA is disabled.
  HeadMatrices attention(std::span<const int> tokens, int type_id) const {
    auto tr = forward(tokens, type_id);
    return tr.fsa ? tr.fsa->weights : HeadMatrices{};
  }

  /// Adds d(loss)/d(params) into `grad` given d(loss)/d(logits).
  void backward(const ForwardTrace& tr, const BoundaryLogits& dlogits, Params& grad) const {
    const Eigen::Index n = static_cast<Eigen::Index>(tr.tokens.size());
    const int pre = EncodedSequence::prefix;
    Mat dz(n, 2);
    dz.col(0) = dlogits.start;
    dz.col(1) = dlogits.end;
    grad.head_w.noalias() += tr.span_repr.bottomRows(n).transpose() * dz;
    grad.head_b.row(0) += dz.colwise().sum();
    Mat dy = Mat::Zero(n + pre, cfg_.model_width);
    dy.bottomRows(n) = dz * params_.head_w.transpose();

    if (tr.fsa) {
      Mat dfsa = dy;  // residual keeps dy for the encoder path
      std::vector<double> ddelta(static_cast<std::size_t>(cfg_.num_heads), 0.0);
      fsa_backward(*tr.fsa, tr.encoded.repr, params_.fsa, tr.heads, fsa_cfg_.attention_window(), dfsa,
                   grad.fsa, ddelta, dy);
      for (int h = 0; h < cfg_.num_heads; ++h) grad.fsa_delta(0, h) += ddelta[static_cast<std::size_t>(h)];
    }

    Mat dx = detail::layer_norm_backward(tr.lnf, params_.lnf_g, dy, grad.lnf_g, grad.lnf_b);
    for (int l = cfg_.num_layers - 1; l >= 0; --l) {
      const auto li = static_cast<std::size_t>(l);
      dx = detail::block_backward(params_.blocks[li], tr.blocks[li], cfg_.num_heads, dx, grad.blocks[li]);
    }
    grad.type_emb.row(tr.type_id) += dx.row(0);
    for (Eigen::Index i = 0; i < n + pre; ++i) grad.pos_emb.row(i) += dx.row(i);
    for (Eigen::Index i = 0; i < n; ++i)
      grad.tok_emb.row(tr.tokens[static_cast<std::size_t>(i)]) += dx.row(i + pre);
  }

 private:
  void encode_into(std::span<const int> tokens, int type_id, ForwardTrace& tr, bool keep) const {
    const int n = static_cast<int>(tokens.size());
    if (n > cfg_.max_seq_len) throw std::length_error("encode: sequence longer than max_seq_len");
    if (type_id < 0 || type_id >= cfg_.type_count) throw std::out_of_range("encode: unknown type id");
    for (int t : tokens)
      if (t < 0 || t >= cfg_.vocab_size) throw std::out_of_range("encode: unknown token id");
    const int pre = EncodedSequence::prefix;
    Mat x(n + pre, cfg_.model_width);
    x.row(0) = params_.type_emb.row(type_id) + params_.pos_emb.row(0);
    for (int i = 0; i < n; ++i)
      x.row(i + pre) = params_.tok_emb.row(tokens[static_cast<std::size_t>(i)]) + params_.pos_emb.row(i + pre);
    tr.tokens.assign(tokens.begin(), tokens.end());
    tr.type_id = type_id;
    tr.blocks.resize(keep ? static_cast<std::size_t>(cfg_.num_layers) : 0);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      const auto li = static_cast<std::size_t>(l);
      x = detail::block_forward(params_.blocks[li], x, cfg_.num_heads, keep ? &tr.blocks[li] : nullptr);
    }
    tr.encoded.repr = detail::layer_norm(x, params_.lnf_g, params_.lnf_b, keep ? &tr.lnf : nullptr);
    if (keep) tr.pre_final = std::move(x);
  }

  void init(std::uint64_t seed) {
    Rng rng(seed);
    const int w = cfg_.model_width, f = cfg_.ffn_mult * cfg_.model_width;
    const double proj = 1.0 / std::sqrt(static_cast<double>(w));
    const double resid = proj / std::sqrt(2.0 * std::max(1, cfg_.num_layers));
    auto normal = [&](int r, int c, double sd) {
      Mat m(r, c);
      fill_normal(m, sd, rng);
      return m;
    };
    params_.tok_emb = normal(cfg_.vocab_size, w, 1.0);
    params_.type_emb = normal(cfg_.type_count, w, 1.0);
    params_.pos_emb = normal(cfg_.max_seq_len + EncodedSequence::prefix, w, 0.5);
    for (int l = 0; l < cfg_.num_layers; ++l) {
      EncoderBlock b;
      b.ln1_g = Mat::Ones(1, w);
      b.ln1_b = Mat::Zero(1, w);
      b.wq = normal(w, w, proj);
      b.wk = normal(w, w, proj);
      b.wv = normal(w, w, proj);
      b.wo = normal(w, w, resid);
      b.ln2_g = Mat::Ones(1, w);
      b.ln2_b = Mat::Zero(1, w);
      b.w1 = normal(w, f, proj);
      b.b1 = Mat::Zero(1, f);
      b.w2 = normal(f, w, resid / std::sqrt(static_cast<double>(cfg_.ffn_mult)));
      b.b2 = Mat::Zero(1, w);
      params_.blocks.push_back(std::move(b));
    }
    params_.lnf_g = Mat::Ones(1, w);
    params_.lnf_b = Mat::Zero(1, w);
    params_.fsa.num_heads = cfg_.num_heads;
    params_.fsa.max_len = cfg_.max_seq_len + EncodedSequence::prefix;
    params_.fsa.wq = normal(w, w, proj);
    params_.fsa.wk = normal(w, w, proj);
    params_.fsa.wv = normal(w, w, proj);
    params_.fsa.rel = normal(fsa_cfg_.span_len + 1, w, 0.5 * proj);
    params_.fsa_delta = Mat::Constant(1, cfg_.num_heads, fsa_cfg_.delta_init);
    params_.head_w = normal(w, 2, proj);
    params_.head_b = Mat::Constant(1, 2, -2.0);
  }

  void check_shapes() const {
    const int w = cfg_.model_width;
    require(params_.tok_emb.rows() == cfg_.vocab_size && params_.tok_emb.cols() == w,
            "SpanModel: tok_emb shape");
    require(params_.type_emb.rows() == cfg_.type_count, "SpanModel: type_emb shape");
    require(params_.pos_emb.rows() == cfg_.max_seq_len + EncodedSequence::prefix, "SpanModel: pos_emb shape");
    require(static_cast<int>(params_.blocks.size()) == cfg_.num_layers, "SpanModel: block count");
    require(params_.fsa.rel.rows() == fsa_cfg_.span_len + 1, "SpanModel: fsa.rel rows");
    require(params_.fsa_delta.cols() == cfg_.num_heads, "SpanModel: fsa.delta shape");
    require(params_.head_w.rows() == w && params_.head_w.cols() == 2, "SpanModel: head_w shape");
  }

  ModelConfig cfg_;
  FsaConfig fsa_cfg_;
  Params params_;
};

/// Pairs each qualifying start with its nearest qualifying end within
/// span_len, then drops overlapping candidates greedily by score.
inline std::vector<SpanPrediction> decode_spans(const BoundaryLogits& logits, double threshold,
                                                int span_len, int type_id = 0) {
  require(threshold > 0.0 && threshold < 1.0, "decode_spans: threshold must lie in (0,1)");
  const int n = static_cast<int>(logits.size());
  std::vector<double> ps(static_cast<std::size_t>(n)), pe(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    ps[static_cast<std::size_t>(i)] = sigmoid(logits.start[i]);
    pe[static_cast<std::size_t>(i)] = sigmoid(logits.end[i]);
  }
  std::vector<SpanPrediction> cands;
  for (int s = 0; s < n; ++s) {
    if (ps[static_cast<std::size_t>(s)] < threshold) continue;
    for (int e = s; e <= std::min(n - 1, s + span_len); ++e) {
      if (pe[static_cast<std::size_t>(e)] < threshold) continue;
      cands.push_back({s, e, type_id, std::sqrt(ps[static_cast<std::size_t>(s)] * pe[static_cast<std::size_t>(e)])});
      break;
    }
  }
  std::stable_sort(cands.begin(), cands.end(),
                   [](const SpanPrediction& a, const SpanPrediction& b) { return a.score > b.score; });
  std::vector<SpanPrediction> kept;
  for (const auto& c : cands) {
    const bool overlaps = std::any_of(kept.begin(), kept.end(), [&](const SpanPrediction& k) {
      return k.type_id == c.type_id && c.start <= k.end && k.start <= c.end;
    });
    if (!overlaps) kept.push_back(c);
  }
  std::sort(kept.begin(), kept.end(),
            [](const SpanPrediction& a, const SpanPrediction& b) { return std::pair(a.start, a.end) < std::pair(b.start, b.end); });
  return kept;
}

// Checkpoint: a self-describing JSON document with both configs and every
// parameter tensor as {rows, cols, data}. Doubles are written in shortest
// round-trip form, so save/load is bit-exact.

inline nlohmann::json checkpoint_json(SpanModel& model) {
  nlohmann::json j;
  j["format"] = "fsuie-checkpoint";
  j["version"] = 1;
  j["model"] = model.config();
  j["fsa"] = model.fsa_config();
  nlohmann::json tensors = nlohmann::json::object();
  for (auto& [name, m] : param_list(model.params(), true)) {
    std::vector<double> data(m->data(), m->data() + m->size());
    tensors[name] = {{"rows", m->rows()}, {"cols", m->cols()}, {"data", std::move(data)}};
  }
  j["params"] = std::move(tensors);
  return j;
}

inline SpanModel model_from_checkpoint(const nlohmann::json& j) {
  if (j.value("format", "") != "fsuie-checkpoint") throw std::runtime_error("not an fsuie checkpoint");
  const auto cfg = j.at("model").get<ModelConfig>();
  const auto fsa = j.at("fsa").get<FsaConfig>();
  SpanModel model(cfg, fsa, std::uint64_t{0});
  for (auto& [name, m] : param_list(model.params(), true)) {
    const auto& t = j.at("params").at(name);
    const auto rows = t.at("rows").get<Eigen::Index>(), cols = t.at("cols").get<Eigen::Index>();
    const auto data = t.at("data").get<std::vector<double>>();
    if (rows * cols != static_cast<Eigen::Index>(data.size()))
      throw std::runtime_error("checkpoint tensor '" + name + "' has inconsistent size");
    m->resize(rows, cols);
    std::copy(data.begin(), data.end(), m->data());
  }
  return SpanModel(cfg, fsa, model.params());
}

inline void save_checkpoint(SpanModel& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path);
  os << checkpoint_json(model).dump() << '\n';
}

inline SpanModel load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read checkpoint " + path);
  return model_from_checkpoint(nlohmann::json::parse(is));
}

}  // namespace fsuie
