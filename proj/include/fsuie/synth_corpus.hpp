#pragma once

// Synthetic span-extraction corpora.
//
// Vocabulary layout (ids):
//   [0, type_count)                 opener of type T, placed right before a span
//   next kFinalTokens ids            "final" tokens: the last token of every span
//   next kInnerTokens ids            inner tokens: the rest of a span
//   remaining ids                    filler
// Filler positions draw from final, inner and filler ids alike, so a final
// token marks an end only when an opener sits at most span_len_max tokens
// before it with no other final token in between. Every cue for a span
// therefore lies within span_len_max tokens of its boundaries.

#include "fsuie/boundary_dist.hpp"
#include "fsuie/linalg.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace fsuie {

enum class Split { Train, Dev, Test };

inline std::string to_string(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Dev: return "dev";
    case Split::Test: return "test";
  }
  return "?";
}

inline Split split_from_string(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "dev") return Split::Dev;
  if (s == "test") return Split::Test;
  throw std::invalid_argument("unknown split '" + s + "'");
}

struct CorpusSpec {
  static constexpr int kFinalTokens = 4;
  static constexpr int kInnerTokens = 8;

  int vocab_size = 48;
  int num_sentences = 4000;
  int seq_len_min = 24;
  int seq_len_max = 40;
  int type_count = 2;
  int span_len_min = 1;
  int span_len_max = 5;
  int spans_per_sentence_min = 1;
  int spans_per_sentence_max = 3;
  double jitter_prob = 0.0;
  int jitter_radius = 1;
  double dev_fraction = 0.2;
  double test_fraction = 0.2;
  std::uint64_t seed = 1;

  int first_final() const { return type_count; }
  int first_inner() const { return type_count + kFinalTokens; }
  int first_filler() const { return type_count + kFinalTokens + kInnerTokens; }

  void validate() const {
    require(type_count > 0, "CorpusSpec: type_count must be positive");
    require(vocab_size >= first_filler() + 1, "CorpusSpec: vocab_size too small for the token layout");
    require(num_sentences > 0, "CorpusSpec: num_sentences must be positive");
    require(seq_len_min > 0 && seq_len_min <= seq_len_max, "CorpusSpec: bad seq_len range");
    require(span_len_min > 0 && span_len_min <= span_len_max, "CorpusSpec: bad span_len range");
    require(spans_per_sentence_min >= 0 && spans_per_sentence_min <= spans_per_sentence_max,
            "CorpusSpec: bad spans_per_sentence range");
    require(jitter_prob >= 0.0 && jitter_prob <= 1.0, "CorpusSpec: jitter_prob must lie in [0,1]");
    require(jitter_radius >= 1, "CorpusSpec: jitter_radius must be positive");
    require(dev_fraction >= 0.0 && test_fraction >= 0.0 && dev_fraction + test_fraction < 1.0,
            "CorpusSpec: dev/test fractions must leave room for training data");
    // Each span needs an opener and one separating filler token.
    const int need = spans_per_sentence_max * (span_len_max + 2);
    if (need > seq_len_min)
      throw std::invalid_argument("CorpusSpec: infeasible, " + std::to_string(spans_per_sentence_max) +
                                  " spans of length up to " + std::to_string(span_len_max) +
                                  " cannot fit in " + std::to_string(seq_len_min) + " tokens");
  }
};

inline void to_json(nlohmann::json& j, const CorpusSpec& c) {
  j = {{"vocab_size", c.vocab_size},
       {"num_sentences", c.num_sentences},
       {"seq_len_range", {c.seq_len_min, c.seq_len_max}},
       {"type_count", c.type_count},
       {"span_len_range", {c.span_len_min, c.span_len_max}},
       {"spans_per_sentence", {c.spans_per_sentence_min, c.spans_per_sentence_max}},
       {"jitter_prob", c.jitter_prob},
       {"jitter_radius", c.jitter_radius},
       {"dev_fraction", c.dev_fraction},
       {"test_fraction", c.test_fraction},
       {"seed", c.seed}};
}

inline void from_json(const nlohmann::json& j, CorpusSpec& c) {
  j.at("vocab_size").get_to(c.vocab_size);
  j.at("num_sentences").get_to(c.num_sentences);
  c.seq_len_min = j.at("seq_len_range").at(0);
  c.seq_len_max = j.at("seq_len_range").at(1);
  j.at("type_count").get_to(c.type_count);
  c.span_len_min = j.at("span_len_range").at(0);
  c.span_len_max = j.at("span_len_range").at(1);
  c.spans_per_sentence_min = j.at("spans_per_sentence").at(0);
  c.spans_per_sentence_max = j.at("spans_per_sentence").at(1);
  j.at("jitter_prob").get_to(c.jitter_prob);
  j.at("jitter_radius").get_to(c.jitter_radius);
  j.at("dev_fraction").get_to(c.dev_fraction);
  j.at("test_fraction").get_to(c.test_fraction);
  j.at("seed").get_to(c.seed);
}

struct Example {
  std::vector<int> tokens;
  std::vector<SpanAnnotation> spans;
  Split split = Split::Train;

  std::vector<SpanAnnotation> spans_of_type(int type) const {
    std::vector<SpanAnnotation> out;
    for (const auto& s : spans)
      if (s.type == type) out.push_back(s);
    return out;
  }
};

namespace detail {

inline int uniform_int(Rng& rng, int lo, int hi) {
  return std::uniform_int_distribution<int>(lo, hi)(rng);
}

// Independent stream per purpose so jitter settings never perturb sentences.
inline Rng stream(std::uint64_t seed, std::uint64_t salt) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(salt)};
  return Rng(seq);
}

inline Example make_sentence(const CorpusSpec& spec, Rng& rng) {
  const int n = uniform_int(rng, spec.seq_len_min, spec.seq_len_max);
  const int k = uniform_int(rng, spec.spans_per_sentence_min, spec.spans_per_sentence_max);
  std::vector<int> lens(static_cast<std::size_t>(k));
  for (auto& l : lens) l = uniform_int(rng, spec.span_len_min, spec.span_len_max);

  // Distribute the free tokens into k+1 gaps; interior gaps get at least one.
  int used = 0;
  for (int l : lens) used += l + 1;
  const int free = n - used - std::max(0, k - 1);
  std::vector<int> cuts(static_cast<std::size_t>(k));
  for (auto& c : cuts) c = uniform_int(rng, 0, free);
  std::sort(cuts.begin(), cuts.end());
  std::vector<int> gaps(static_cast<std::size_t>(k + 1));
  int prev = 0;
  for (int i = 0; i < k; ++i) {
    gaps[static_cast<std::size_t>(i)] = cuts[static_cast<std::size_t>(i)] - prev + (i > 0 ? 1 : 0);
    prev = cuts[static_cast<std::size_t>(i)];
  }
  gaps[static_cast<std::size_t>(k)] = free - prev;

  const int n_final = CorpusSpec::kFinalTokens, n_inner = CorpusSpec::kInnerTokens;
  auto filler = [&] { return uniform_int(rng, spec.first_final(), spec.vocab_size - 1); };
  auto inner = [&] { return spec.first_inner() + uniform_int(rng, 0, n_inner - 1); };
  auto fin = [&] { return spec.first_final() + uniform_int(rng, 0, n_final - 1); };

  Example ex;
  ex.tokens.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i <= k; ++i) {
    for (int g = 0; g < gaps[static_cast<std::size_t>(i)]; ++g) ex.tokens.push_back(filler());
    if (i == k) break;
    const int type = uniform_int(rng, 0, spec.type_count - 1);
    ex.tokens.push_back(type);  // opener
    const int start = static_cast<int>(ex.tokens.size());
    const int len = lens[static_cast<std::size_t>(i)];
    for (int j = 0; j + 1 < len; ++j) ex.tokens.push_back(inner());
    ex.tokens.push_back(fin());
    ex.spans.push_back({start, start + len - 1, type});
  }
  return ex;
}

// Shift one boundary by +-U{1..radius}; the opposite direction is tried when
// the first would leave the sequence or invert the span.
inline int jitter_boundary(int pos, int lo, int hi, int radius, Rng& rng) {
  const int mag = uniform_int(rng, 1, radius);
  const int sign = uniform_int(rng, 0, 1) == 0 ? -1 : 1;
  for (int s : {sign, -sign}) {
    const int cand = pos + s * mag;
    if (cand >= lo && cand <= hi) return cand;
  }
  return std::clamp(pos, lo, hi);
}

}  // namespace detail

/// Deterministic corpus for `spec`. Train and dev annotations receive boundary
/// jitter; test annotations are always the clean references.
inline std::vector<Example> generate(const CorpusSpec& spec) {
  spec.validate();
  Rng rng = detail::stream(spec.seed, 0x5e47);
  Rng jit = detail::stream(spec.seed, 0x7177);
  const int n_test = static_cast<int>(std::lround(spec.test_fraction * spec.num_sentences));
  const int n_dev = static_cast<int>(std::lround(spec.dev_fraction * spec.num_sentences));
  const int n_train = spec.num_sentences - n_dev - n_test;

  std::vector<Example> out;
  out.reserve(static_cast<std::size_t>(spec.num_sentences));
  for (int i = 0; i < spec.num_sentences; ++i) {
    Example ex = detail::make_sentence(spec, rng);
    ex.split = i < n_train ? Split::Train : (i < n_train + n_dev ? Split::Dev : Split::Test);
    const int n = static_cast<int>(ex.tokens.size());
    for (std::size_t k = 0; k < ex.spans.size(); ++k) {
      // Draws are consumed identically whatever the split, keeping streams aligned.
      const bool js = std::bernoulli_distribution(spec.jitter_prob)(jit);
      const bool je = std::bernoulli_distribution(spec.jitter_prob)(jit);
      if (ex.split == Split::Test) continue;
      SpanAnnotation s = ex.spans[k];
      if (js) s.start = detail::jitter_boundary(s.start, 0, s.end, spec.jitter_radius, jit);
      if (je) s.end = detail::jitter_boundary(s.end, s.start, n - 1, spec.jitter_radius, jit);
      // A shift that collides with another annotation is dropped.
      if (std::find(ex.spans.begin(), ex.spans.end(), s) == ex.spans.end()) ex.spans[k] = s;
    }
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<Example> select_split(std::span<const Example> all, Split split) {
  std::vector<Example> out;
  for (const auto& e : all)
    if (e.split == split) out.push_back(e);
  return out;
}

/// Nested subsets of `train` (smaller fractions are prefixes of larger ones)
/// drawn from one seeded permutation.
inline std::map<double, std::vector<Example>> split_low_resource(std::span<const Example> train,
                                                                 std::span<const double> fractions,
                                                                 std::uint64_t seed) {
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng = detail::stream(seed, 0x10f7);
  std::shuffle(order.begin(), order.end(), rng);
  std::map<double, std::vector<Example>> out;
  for (double f : fractions) {
    require(f > 0.0 && f <= 1.0, "split_low_resource: fractions must lie in (0,1]");
    const auto count = static_cast<std::size_t>(std::lround(f * static_cast<double>(train.size())));
    if (count == 0)
      throw std::invalid_argument("split_low_resource: fraction " + std::to_string(f) +
                                  " selects no examples");
    std::vector<Example> subset;
    subset.reserve(count);
    for (std::size_t i = 0; i < count; ++i) subset.push_back(train[order[i]]);
    out.emplace(f, std::move(subset));
  }
  return out;
}

// Interchange format: one JSON object per line,
// {"tokens": [...], "spans": [{"start","end","type"}...], "split": "train"|"dev"|"test"}.

inline nlohmann::json example_json(const Example& e) {
  nlohmann::json spans = nlohmann::json::array();
  for (const auto& s : e.spans) spans.push_back({{"start", s.start}, {"end", s.end}, {"type", s.type}});
  return {{"tokens", e.tokens}, {"spans", std::move(spans)}, {"split", to_string(e.split)}};
}

inline Example example_from_json(const nlohmann::json& j) {
  Example e;
  j.at("tokens").get_to(e.tokens);
  for (const auto& s : j.at("spans"))
    e.spans.push_back({s.at("start").get<int>(), s.at("end").get<int>(), s.at("type").get<int>()});
  e.split = split_from_string(j.at("split").get<std::string>());
  const int n = static_cast<int>(e.tokens.size());
  std::set<SpanAnnotation> seen;
  for (const auto& s : e.spans) {
    if (s.start < 0 || s.end >= n || s.start > s.end)
      throw std::invalid_argument("dataset: span outside its sentence");
    if (!seen.insert(s).second) throw std::invalid_argument("dataset: duplicate span");
  }
  return e;
}

inline void write_dataset(std::span<const Example> examples, std::ostream& os) {
  for (const auto& e : examples) os << example_json(e).dump() << '\n';
}

inline void write_dataset(std::span<const Example> examples, const std::string& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write dataset " + path);
  write_dataset(examples, os);
}

inline std::vector<Example> read_dataset(std::istream& is) {
  std::vector<Example> out;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(example_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception& ex) {
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": " + ex.what());
    }
  }
  return out;
}

inline std::vector<Example> read_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read dataset " + path);
  return read_dataset(is);
}

}  // namespace fsuie
