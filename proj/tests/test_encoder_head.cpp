#include "fsuie/encoder_head.hpp"
#include "fsuie/training.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <random>
#include <set>

using namespace fsuie;

namespace {

ModelConfig small_model(bool fsa = true, bool fsl = true) {
  ModelConfig c;
  c.vocab_size = 20;
  c.model_width = 8;
  c.num_layers = 2;
  c.num_heads = 2;
  c.max_seq_len = 16;
  c.type_count = 2;
  c.fsa_enabled = fsa;
  c.fsl_enabled = fsl;
  return c;
}

FsaConfig small_fsa(int span = 6, int ramp = 3) {
  FsaConfig f;
  f.span_len = span;
  f.ramp = ramp;
  return f;
}

}  // namespace

TEST(Encoder, ShapesAndMarkerOnlySequence) {
  SpanModel m(small_model(), small_fsa(), 1);
  std::vector<int> toks{1, 2, 3, 4, 5};
  auto enc = m.encode(toks, 1);
  EXPECT_EQ(enc.repr.rows(), 6);
  EXPECT_EQ(enc.repr.cols(), 8);
  EXPECT_EQ(enc.content_len(), 5);
  auto lg = m.predict_boundaries(enc);
  EXPECT_EQ(lg.size(), 5);
  auto empty = m.encode(std::vector<int>{}, 0);
  EXPECT_EQ(empty.repr.rows(), 1);
  EXPECT_EQ(m.logits(std::vector<int>{}, 0).size(), 0);
}

TEST(Encoder, Deterministic) {
  SpanModel a(small_model(), small_fsa(), 42), b(small_model(), small_fsa(), 42);
  std::vector<int> toks{3, 1, 4, 1, 5, 9, 2, 6};
  EXPECT_EQ(a.encode(toks, 0).repr, a.encode(toks, 0).repr);
  EXPECT_EQ(a.logits(toks, 1).start, b.logits(toks, 1).start);
  SpanModel c(small_model(), small_fsa(), 43);
  EXPECT_NE(a.logits(toks, 1).start, c.logits(toks, 1).start);
}

TEST(Encoder, TypeChangesRepresentation) {
  SpanModel m(small_model(), small_fsa(), 3);
  std::vector<int> toks{3, 1, 4, 1, 5};
  EXPECT_NE(m.logits(toks, 0).start, m.logits(toks, 1).start);
}

TEST(Encoder, Errors) {
  SpanModel m(small_model(), small_fsa(), 1);
  EXPECT_THROW(m.encode(std::vector<int>{1, 20}, 0), std::out_of_range);
  EXPECT_THROW(m.encode(std::vector<int>{-1}, 0), std::out_of_range);
  EXPECT_THROW(m.encode(std::vector<int>{1}, 2), std::out_of_range);
  EXPECT_THROW(m.encode(std::vector<int>(17, 1), 0), std::length_error);
  auto bad = small_model();
  bad.num_heads = 3;
  EXPECT_THROW(SpanModel(bad, small_fsa(), 1), std::invalid_argument);
}

TEST(Head, ZeroWeightsGiveHalfProbabilities) {
  SpanModel m(small_model(), small_fsa(), 1);
  m.params().head_w.setZero();
  m.params().head_b.setZero();
  auto lg = m.logits(std::vector<int>{1, 2, 3}, 0);
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(lg.start[i], 0.0);
    EXPECT_EQ(sigmoid(lg.end[i]), 0.5);
  }
}

TEST(Head, BaselineReadsEncoderOutputDirectly) {
  SpanModel m(small_model(false, false), small_fsa(), 5);
  std::vector<int> toks{1, 2, 3, 4};
  auto enc = m.encode(toks, 0);
  EXPECT_EQ(m.span_representation(enc), enc.repr);
  EXPECT_TRUE(m.attention(toks, 0).empty());
  // FSA parameters are not part of the trainable set
  for (auto& [name, p] : m.parameters()) EXPECT_EQ(name.rfind("fsa.", 0), std::string::npos);
}

TEST(Head, FsaAddsResidualBranch) {
  SpanModel m(small_model(), small_fsa(), 5);
  std::vector<int> toks{1, 2, 3, 4};
  auto enc = m.encode(toks, 0);
  const auto heads = m.head_states();
  const Mat want = enc.repr + fsa_layer(enc.repr, m.params().fsa, heads, m.fsa_config().attention_window());
  EXPECT_TRUE(m.span_representation(enc).isApprox(want, 1e-14));
  EXPECT_EQ(m.attention(toks, 0).size(), 2u);
}

TEST(Decode, SimpleCases) {
  auto lg = BoundaryLogits::zeros(12);
  lg.start.setConstant(-5);
  lg.end.setConstant(-5);
  EXPECT_TRUE(decode_spans(lg, 0.5, 30).empty());
  lg.start[3] = 5;
  lg.end[7] = 5;
  auto one = decode_spans(lg, 0.5, 30, 1);
  ASSERT_EQ(one.size(), 1u);
  EXPECT_EQ(one[0].start, 3);
  EXPECT_EQ(one[0].end, 7);
  EXPECT_EQ(one[0].type_id, 1);
  EXPECT_NEAR(one[0].score, sigmoid(5.0), 1e-12);
  lg.end[5] = 4;
  lg.end[9] = 6;
  auto near = decode_spans(lg, 0.5, 30);
  ASSERT_EQ(near.size(), 1u);
  EXPECT_EQ(near[0].end, 5);
  // the only end lies beyond span_len
  auto far = BoundaryLogits::zeros(12);
  far.start.setConstant(-5);
  far.end.setConstant(-5);
  far.start[0] = 5;
  far.end[10] = 5;
  EXPECT_TRUE(decode_spans(far, 0.5, 4).empty());
  EXPECT_THROW(decode_spans(far, 1.0, 4), std::invalid_argument);
}

// Exhaustive oracle: enumerate every (start, end) pair, keep for each start
// the smallest qualifying end, then resolve overlaps by descending score.
TEST(Decode, MatchesExhaustivePairingOracle) {
  std::mt19937_64 rng(21);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int it = 0; it < 500; ++it) {
    const int n = std::uniform_int_distribution<int>(1, 14)(rng);
    const int span = std::uniform_int_distribution<int>(0, 6)(rng);
    BoundaryLogits lg{Vec(n), Vec(n)};
    for (int i = 0; i < n; ++i) {
      lg.start[i] = nd(rng);
      lg.end[i] = nd(rng);
    }
    std::vector<std::tuple<double, int, int>> cands;
    for (int s = 0; s < n; ++s) {
      if (sigmoid(lg.start[s]) < 0.5) continue;
      int best = -1;
      for (int e = 0; e < n; ++e)
        if (e >= s && e - s <= span && sigmoid(lg.end[e]) >= 0.5 && (best < 0 || e < best)) best = e;
      if (best >= 0) cands.emplace_back(std::sqrt(sigmoid(lg.start[s]) * sigmoid(lg.end[best])), s, best);
    }
    std::stable_sort(cands.begin(), cands.end(), [](auto& a, auto& b) { return std::get<0>(a) > std::get<0>(b); });
    std::set<std::pair<int, int>> want;
    std::vector<bool> used(n, false);
    for (auto& [sc, s, e] : cands) {
      bool clash = false;
      for (int i = s; i <= e; ++i) clash = clash || used[i];
      if (clash) continue;
      for (int i = s; i <= e; ++i) used[i] = true;
      want.insert({s, e});
    }
    std::set<std::pair<int, int>> got;
    for (const auto& p : decode_spans(lg, 0.5, span)) {
      ASSERT_LE(p.end - p.start, span);
      ASSERT_LE(p.start, p.end);
      got.insert({p.start, p.end});
    }
    ASSERT_EQ(got, want) << "iteration " << it;
  }
}

TEST(Checkpoint, RoundTripIsBitExact) {
  SpanModel m(small_model(), small_fsa(), 11);
  m.params().fsa_delta(0, 1) = 0.123456789012345678;
  auto j = checkpoint_json(m);
  auto back = model_from_checkpoint(nlohmann::json::parse(j.dump()));
  auto a = m.parameters(), b = back.parameters();
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].first, b[i].first);
    EXPECT_EQ(*a[i].second, *b[i].second) << a[i].first;
  }
  std::vector<int> toks{1, 7, 3};
  EXPECT_EQ(m.logits(toks, 1).end, back.logits(toks, 1).end);

  const auto path = std::filesystem::temp_directory_path() / "fsuie_ckpt_test.json";
  save_checkpoint(m, path.string());
  auto loaded = load_checkpoint(path.string());
  EXPECT_EQ(loaded.logits(toks, 0).start, m.logits(toks, 0).start);
  std::filesystem::remove(path);
  EXPECT_THROW(model_from_checkpoint(nlohmann::json{{"format", "other"}}), std::runtime_error);
}

TEST(Backward, GradCheckOnMicroModels) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> ud(0.05, 0.95);
  for (int it = 0; it < 4; ++it) {
    const bool fsa = it % 2 == 0;
    auto cfg = small_model(fsa, true);
    SpanModel m(cfg, small_fsa(), 100 + it);
    for (int h = 0; h < cfg.num_heads; ++h) m.params().fsa_delta(0, h) = ud(rng);
    Example ex;
    ex.tokens = {3, 1, 4, 1, 5, 9, 2, 6, 5};
    ex.spans = {{1, 3, 0}, {5, 5, 1}, {6, 8, 0}};
    auto q = queries_for(std::span<const Example>(&ex, 1), cfg.type_count);
    auto report = grad_check(m, q, FuzzyConfig{}, LossConfig{0.3, 1e-12});
    for (const auto& g : report.groups) EXPECT_LE(g.max_rel_error, 1e-4) << g.name;
    const bool has_delta = std::any_of(report.groups.begin(), report.groups.end(),
                                       [](const auto& g) { return g.name == "fsa.delta"; });
    EXPECT_EQ(has_delta, fsa);
  }
}

TEST(Backward, ZeroGradForUnusedEmbeddings) {
  SpanModel m(small_model(), small_fsa(), 9);
  Example ex;
  ex.tokens = {1, 2, 3};
  ex.spans = {{0, 1, 0}};
  auto q = queries_for(std::span<const Example>(&ex, 1), 1);
  Params g = zeros_like(m.params());
  batch_loss(m, q, FuzzyConfig{}, LossConfig{}, &g);
  EXPECT_EQ(g.tok_emb.row(10).norm(), 0.0);
  EXPECT_EQ(g.type_emb.row(1).norm(), 0.0);
  EXPECT_GT(g.tok_emb.row(1).norm(), 0.0);
}

TEST(ModelConfigJson, RoundTrip) {
  auto c = small_model(false, true);
  nlohmann::json j = c;
  auto back = j.get<ModelConfig>();
  EXPECT_EQ(back.model_width, 8);
  EXPECT_FALSE(back.fsa_enabled);
  FsaConfig f = small_fsa();
  f.variant = Attenuation::GaussianTail;
  nlohmann::json jf = f;
  EXPECT_EQ(jf.get<FsaConfig>().variant, Attenuation::GaussianTail);
}
