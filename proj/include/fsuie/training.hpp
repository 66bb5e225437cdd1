#pragma once

// Optimization loop, evaluation, gradient checking and the experiment
// protocols (ablation, hyper-parameter sweeps, low-resource splits).

#include "fsuie/attention.hpp"
#include "fsuie/boundary_dist.hpp"
#include "fsuie/encoder_head.hpp"
#include "fsuie/losses.hpp"
#include "fsuie/synth_corpus.hpp"

#include <json.hpp>

#include <algorithm>
#include <atomic>
#include <exception>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <functional>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <ostream>
#include <set>
#include <span>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace fsuie {

struct RunConfig {
  ModelConfig model;
  FuzzyConfig fuzzy;
  LossConfig loss;
  FsaConfig fsa;
  CorpusSpec corpus;
  int epochs = 15;
  int low_resource_epochs = 200;
  double learning_rate = 3e-3;
  double delta_lr_scale = 1.0;
  double grad_clip = 1.0;  // global-norm clip, 0 disables
  int batch_size = 16;
  std::uint64_t seed = 1;
  int eval_every = 250;
  int max_steps = 0;  // 0: run all epochs
  double decode_threshold = 0.5;

  void validate() const {
    model.validate();
    loss.validate();
    fsa.validate();
    corpus.validate();
    require(epochs > 0 && low_resource_epochs > 0, "RunConfig: epochs must be positive");
    require(learning_rate > 0.0, "RunConfig: learning_rate must be positive");
    require(delta_lr_scale >= 0.0, "RunConfig: delta_lr_scale must be non-negative");
    require(grad_clip >= 0.0, "RunConfig: grad_clip must be non-negative");
    require(batch_size > 0 && eval_every > 0 && max_steps >= 0, "RunConfig: bad schedule");
    require(decode_threshold > 0.0 && decode_threshold < 1.0, "RunConfig: decode_threshold in (0,1)");
    require(model.vocab_size >= corpus.vocab_size, "RunConfig: model vocab smaller than corpus vocab");
    require(model.type_count == corpus.type_count, "RunConfig: model and corpus type counts differ");
    require(model.max_seq_len >= corpus.seq_len_max, "RunConfig: max_seq_len below corpus seq_len_max");
    require(corpus.span_len_max <= fsa.span_len,
            "RunConfig: corpus spans longer than the attention span prior");
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = {{"model", c.model},
       {"fuzzy",
        {{"sigma", c.fuzzy.sigma()},
         {"theta", c.fuzzy.theta()},
         {"step", c.fuzzy.step()},
         {"side_mode", to_string(c.fuzzy.side_mode())}}},
       {"loss", {{"lambda", c.loss.lambda}, {"epsilon_floor", c.loss.epsilon_floor}}},
       {"fsa", c.fsa},
       {"corpus", c.corpus},
       {"epochs", c.epochs},
       {"low_resource_epochs", c.low_resource_epochs},
       {"learning_rate", c.learning_rate},
       {"delta_lr_scale", c.delta_lr_scale},
       {"grad_clip", c.grad_clip},
       {"batch_size", c.batch_size},
       {"seed", c.seed},
       {"eval_every", c.eval_every},
       {"max_steps", c.max_steps},
       {"decode_threshold", c.decode_threshold}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  j.at("model").get_to(c.model);
  const auto& f = j.at("fuzzy");
  c.fuzzy = FuzzyConfig(f.at("sigma").get<double>(), f.at("theta").get<double>(),
                        f.at("step").get<double>(),
                        side_mode_from_string(f.at("side_mode").get<std::string>()));
  j.at("loss").at("lambda").get_to(c.loss.lambda);
  j.at("loss").at("epsilon_floor").get_to(c.loss.epsilon_floor);
  j.at("fsa").get_to(c.fsa);
  j.at("corpus").get_to(c.corpus);
  j.at("epochs").get_to(c.epochs);
  j.at("low_resource_epochs").get_to(c.low_resource_epochs);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("delta_lr_scale").get_to(c.delta_lr_scale);
  j.at("grad_clip").get_to(c.grad_clip);
  j.at("batch_size").get_to(c.batch_size);
  j.at("seed").get_to(c.seed);
  j.at("eval_every").get_to(c.eval_every);
  j.at("max_steps").get_to(c.max_steps);
  j.at("decode_threshold").get_to(c.decode_threshold);
}

// ---------------------------------------------------------------------------
// Metrics

struct PRF {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

inline double f1_score(double p, double r) { return p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0; }

/// Exact-match micro P/R/F1 over (start, end, type) triples.
inline PRF entity_f1(std::span<const std::vector<SpanAnnotation>> predictions,
                     std::span<const std::vector<SpanAnnotation>> references) {
  if (predictions.size() != references.size())
    throw std::invalid_argument("entity_f1: prediction and reference lists differ in length");
  std::size_t tp = 0, n_pred = 0, n_ref = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const std::set<SpanAnnotation> pred(predictions[i].begin(), predictions[i].end());
    const std::set<SpanAnnotation> ref(references[i].begin(), references[i].end());
    n_pred += pred.size();
    n_ref += ref.size();
    for (const auto& s : pred) tp += ref.count(s);
  }
  PRF out;
  out.precision = n_pred ? static_cast<double>(tp) / static_cast<double>(n_pred) : 0.0;
  out.recall = n_ref ? static_cast<double>(tp) / static_cast<double>(n_ref) : 0.0;
  out.f1 = f1_score(out.precision, out.recall);
  return out;
}

struct MetricRecord {
  int step = 0;
  Split split = Split::Dev;
  PRF prf;
  double loss_ori = 0.0;
  double loss_fs = 0.0;
  std::vector<double> spans;  // per-head l = delta * span_len
};

inline std::vector<SpanAnnotation> predict_example(const SpanModel& model, const Example& ex,
                                                   double threshold) {
  std::vector<SpanAnnotation> out;
  for (int t = 0; t < model.config().type_count; ++t)
    for (const auto& p : decode_spans(model.logits(ex.tokens, t), threshold, model.fsa_config().span_len, t))
      out.push_back({p.start, p.end, p.type_id});
  return out;
}

inline PRF evaluate(const SpanModel& model, std::span<const Example> examples, double threshold) {
  std::vector<std::vector<SpanAnnotation>> pred, ref;
  pred.reserve(examples.size());
  ref.reserve(examples.size());
  for (const auto& ex : examples) {
    pred.push_back(predict_example(model, ex, threshold));
    ref.push_back(ex.spans);
  }
  return entity_f1(pred, ref);
}

// ---------------------------------------------------------------------------
// Loss over a batch of (sentence, type) queries

struct Query {
  const Example* example = nullptr;
  int type = 0;
};

inline std::vector<Query> queries_for(std::span<const Example> examples, int type_count) {
  std::vector<Query> out;
  out.reserve(examples.size() * static_cast<std::size_t>(type_count));
  for (const auto& ex : examples)
    for (int t = 0; t < type_count; ++t) out.push_back({&ex, t});
  return out;
}

struct BatchLoss {
  double total = 0.0;
  double bce = 0.0;
  double kl = 0.0;
};

/// Mean total loss over `batch`; when `grad` is non-null the matching
/// gradient is accumulated into it.
inline BatchLoss batch_loss(const SpanModel& model, std::span<const Query> batch,
                            const FuzzyConfig& fuzzy, const LossConfig& loss_cfg, Params* grad) {
  LossConfig eff = loss_cfg;
  if (!model.config().fsl_enabled) eff.lambda = 0.0;
  BatchLoss out;
  if (batch.empty()) return out;
  const double inv = 1.0 / static_cast<double>(batch.size());
  for (const auto& q : batch) {
    const auto gold = q.example->spans_of_type(q.type);
    const int n = static_cast<int>(q.example->tokens.size());
    std::vector<TargetPair> targets;
    if (eff.lambda > 0.0)
      for (const auto& s : gold) targets.push_back(span_targets(s, n, fuzzy));
    auto tr = model.forward(q.example->tokens, q.type);
    auto l = total_loss(tr.logits, gold, targets, eff);
    out.total += inv * l.value;
    out.bce += inv * l.bce;
    out.kl += inv * l.kl;
    if (grad) {
      l.grad.start *= inv;
      l.grad.end *= inv;
      model.backward(tr, l.grad, *grad);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Optimizer

class Adam {
 public:
  Adam(const Params& like, double lr, double delta_lr_scale)
      : lr_(lr), delta_scale_(delta_lr_scale), m_(zeros_like(like)), v_(zeros_like(like)) {}

  void step(SpanModel& model, Params& grad) {
    ++t_;
    const double c1 = 1.0 - std::pow(kBeta1, t_), c2 = 1.0 - std::pow(kBeta2, t_);
    auto ps = model.parameters();
    auto gs = param_list(grad, model.config().fsa_enabled);
    auto ms = param_list(m_, model.config().fsa_enabled);
    auto vs = param_list(v_, model.config().fsa_enabled);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Mat& p = *ps[i].second;
      Mat& g = *gs[i].second;
      const bool is_delta = ps[i].first == "fsa.delta";
      if (is_delta) {
        // Projected update: no gradient that pushes delta outside [0, 1].
        for (Eigen::Index k = 0; k < p.size(); ++k) {
          const double d = p.data()[k], gk = g.data()[k];
          if ((d >= 1.0 && gk < 0.0) || (d <= 0.0 && gk > 0.0)) g.data()[k] = 0.0;
        }
      }
      Mat& m = *ms[i].second;
      Mat& v = *vs[i].second;
      m = kBeta1 * m + (1.0 - kBeta1) * g;
      v = kBeta2 * v + (1.0 - kBeta2) * g.cwiseProduct(g);
      const double lr = lr_ * (is_delta ? delta_scale_ : 1.0);
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + kEps);
    }
    model.project_deltas();
  }

 private:
  static constexpr double kBeta1 = 0.9, kBeta2 = 0.999, kEps = 1e-8;
  double lr_, delta_scale_;
  int t_ = 0;
  Params m_, v_;
};

inline double clip_global_norm(Params& grad, double max_norm, bool with_fsa) {
  double sq = 0.0;
  for (auto& [n, m] : param_list(grad, with_fsa)) sq += m->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm)
    for (auto& [n, m] : param_list(grad, with_fsa)) *m *= max_norm / norm;
  return norm;
}

// ---------------------------------------------------------------------------
// Training

struct RunResult {
  std::string name;
  std::uint64_t seed = 0;
  std::vector<MetricRecord> metrics;  // dev records every eval_every steps, then final dev + test
  int total_steps = 0;
  int best_step = 0;
  double best_dev_f1 = 0.0;
  PRF test;
  std::vector<double> final_spans;
  std::optional<SpanModel> model;  // dev-best parameters

  /// First evaluated step with dev F1 >= target, or nullopt.
  std::optional<int> steps_to(double target) const {
    for (const auto& m : metrics)
      if (m.split == Split::Dev && m.step > 0 && m.prf.f1 >= target) return m.step;
    return std::nullopt;
  }
  double final_dev_f1() const {
    for (auto it = metrics.rbegin(); it != metrics.rend(); ++it)
      if (it->split == Split::Dev) return it->prf.f1;
    return 0.0;
  }
};

struct TrainData {
  std::vector<Example> train, dev, test;

  static TrainData from(std::span<const Example> all) {
    return {select_split(all, Split::Train), select_split(all, Split::Dev), select_split(all, Split::Test)};
  }
};

using ProgressFn = std::function<void(const MetricRecord&)>;

/// Trains one model. Deterministic given cfg (including seed) and data.
inline RunResult train(const RunConfig& cfg, const TrainData& data, int epochs,
                       const ProgressFn& progress = {}) {
  cfg.validate();
  require(!data.train.empty(), "train: no training examples");
  Rng rng = detail::stream(cfg.seed, 0x7a1);
  SpanModel model(cfg.model, cfg.fsa, rng());
  Adam opt(model.params(), cfg.learning_rate, cfg.delta_lr_scale);
  auto queries = queries_for(data.train, cfg.model.type_count);

  RunResult res;
  res.seed = cfg.seed;
  res.model.emplace(model);
  res.best_dev_f1 = -1.0;
  double win_bce = 0.0, win_kl = 0.0;
  int win_n = 0, step = 0;

  auto record_dev = [&](int at) {
    MetricRecord r{at, Split::Dev, evaluate(model, data.dev, cfg.decode_threshold),
                   win_n ? win_bce / win_n : 0.0, win_n ? win_kl / win_n : 0.0, model.head_spans()};
    if (!cfg.model.fsa_enabled) r.spans.clear();
    win_bce = win_kl = 0.0;
    win_n = 0;
    if (r.prf.f1 > res.best_dev_f1) {
      res.best_dev_f1 = r.prf.f1;
      res.best_step = at;
      res.model.emplace(model);
    }
    res.metrics.push_back(r);
    if (progress) progress(r);
  };

  const int limit = cfg.max_steps > 0 ? cfg.max_steps : std::numeric_limits<int>::max();
  for (int epoch = 0; epoch < epochs && step < limit; ++epoch) {
    std::shuffle(queries.begin(), queries.end(), rng);
    for (std::size_t b = 0; b < queries.size() && step < limit; b += static_cast<std::size_t>(cfg.batch_size)) {
      const auto len = std::min(queries.size() - b, static_cast<std::size_t>(cfg.batch_size));
      std::span<const Query> batch(queries.data() + b, len);
      Params grad = zeros_like(model.params());
      const auto l = batch_loss(model, batch, cfg.fuzzy, cfg.loss, &grad);
      if (!std::isfinite(l.total))
        throw std::runtime_error("training diverged: non-finite loss at step " + std::to_string(step) +
                                 " (bce=" + std::to_string(l.bce) + ", kl=" + std::to_string(l.kl) + ")");
      clip_global_norm(grad, cfg.grad_clip, cfg.model.fsa_enabled);
      opt.step(model, grad);
      ++step;
      win_bce += l.bce;
      win_kl += l.kl;
      ++win_n;
      if (step % cfg.eval_every == 0) record_dev(step);
    }
  }
  if (step % cfg.eval_every != 0) record_dev(step);
  res.total_steps = step;
  res.final_spans = model.head_spans();
  if (!cfg.model.fsa_enabled) res.final_spans.clear();

  // Report test metrics of the dev-best parameters.
  res.test = evaluate(*res.model, data.test, cfg.decode_threshold);
  MetricRecord t{res.best_step, Split::Test, res.test, 0.0, 0.0, res.model->head_spans()};
  if (!cfg.model.fsa_enabled) t.spans.clear();
  res.metrics.push_back(t);
  return res;
}

inline RunResult train(const RunConfig& cfg, const ProgressFn& progress = {}) {
  const auto corpus = generate(cfg.corpus);
  return train(cfg, TrainData::from(corpus), cfg.epochs, progress);
}

// ---------------------------------------------------------------------------
// Metrics output

inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

inline void write_metrics_csv(const RunResult& r, int num_heads, std::ostream& os) {
  os << "step,split,precision,recall,f1,loss_ori,loss_fs";
  for (int h = 0; h < num_heads; ++h) os << ",l_" << h;
  os << '\n';
  for (const auto& m : r.metrics) {
    os << m.step << ',' << to_string(m.split) << ',' << format_double(m.prf.precision) << ','
       << format_double(m.prf.recall) << ',' << format_double(m.prf.f1) << ','
       << format_double(m.loss_ori) << ',' << format_double(m.loss_fs);
    for (int h = 0; h < num_heads; ++h)
      os << ',' << (h < static_cast<int>(m.spans.size()) ? format_double(m.spans[static_cast<std::size_t>(h)]) : "");
    os << '\n';
  }
}

inline nlohmann::json summary_json(const RunResult& r) {
  const auto s8 = r.steps_to(0.8);
  return {{"name", r.name},
          {"seed", r.seed},
          {"total_steps", r.total_steps},
          {"best_step", r.best_step},
          {"best_dev_f1", r.best_dev_f1},
          {"final_dev_f1", r.final_dev_f1()},
          {"steps_to_dev_f1_0.8", s8 ? nlohmann::json(*s8) : nlohmann::json(nullptr)},
          {"test", {{"precision", r.test.precision}, {"recall", r.test.recall}, {"f1", r.test.f1}}},
          {"final_spans", r.final_spans}};
}

// ---------------------------------------------------------------------------
// Gradient check

struct GradGroupReport {
  std::string name;
  double max_rel_error = 0.0;
  int checked = 0;
  bool excluded = false;  // e.g. a span fraction sitting on its clamp
};

struct GradCheckReport {
  std::vector<GradGroupReport> groups;

  double max_rel_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.max_rel_error);
    return m;
  }
  bool passed(double tolerance) const { return max_rel_error() <= tolerance; }
};

/// |a - n| / max(|a|, |n|, floor); zero when both vanish.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double diff = std::abs(analytic - numeric);
  if (diff == 0.0) return 0.0;
  return diff / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// Compares the analytic gradient of the batch loss against central
/// differences for every parameter group. At most `max_per_group` randomly
/// chosen coordinates are probed per group (all when 0).
inline GradCheckReport grad_check(SpanModel& model, std::span<const Query> batch, const FuzzyConfig& fuzzy,
                                  const LossConfig& loss_cfg, double h = 1e-5, int max_per_group = 0,
                                  std::uint64_t seed = 0) {
  Params grad = zeros_like(model.params());
  batch_loss(model, batch, fuzzy, loss_cfg, &grad);
  auto gs = param_list(grad, model.config().fsa_enabled);
  auto ps = model.parameters();
  Rng rng(seed);
  GradCheckReport report;
  for (std::size_t i = 0; i < ps.size(); ++i) {
    Mat& p = *ps[i].second;
    const Mat& g = *gs[i].second;
    GradGroupReport gr{ps[i].first};
    std::vector<Eigen::Index> coords(static_cast<std::size_t>(p.size()));
    std::iota(coords.begin(), coords.end(), Eigen::Index{0});
    if (max_per_group > 0 && static_cast<int>(coords.size()) > max_per_group) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<std::size_t>(max_per_group));
      std::sort(coords.begin(), coords.end());
    }
    const bool is_delta = gr.name == "fsa.delta";
    for (auto k : coords) {
      const double orig = p.data()[k];
      if (is_delta && (orig - h < 0.0 || orig + h > 1.0)) {
        gr.excluded = true;
        continue;
      }
      p.data()[k] = orig + h;
      const double up = batch_loss(model, batch, fuzzy, loss_cfg, nullptr).total;
      p.data()[k] = orig - h;
      const double down = batch_loss(model, batch, fuzzy, loss_cfg, nullptr).total;
      p.data()[k] = orig;
      const double numeric = (up - down) / (2.0 * h);
      gr.max_rel_error = std::max(gr.max_rel_error, relative_error(g.data()[k], numeric));
      ++gr.checked;
    }
    report.groups.push_back(gr);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Experiment protocols

struct Arm {
  std::string name;
  bool fsa = false;
  bool fsl = false;
};

inline const std::vector<Arm>& ablation_arms() {
  static const std::vector<Arm> arms{
      {"baseline", false, false}, {"fsl", false, true}, {"fsa", true, false}, {"full", true, true}};
  return arms;
}

inline RunConfig with_arm(RunConfig cfg, const Arm& arm) {
  cfg.model.fsa_enabled = arm.fsa;
  cfg.model.fsl_enabled = arm.fsl;
  return cfg;
}

inline double median(std::vector<double> v) {
  if (v.empty()) return std::numeric_limits<double>::quiet_NaN();
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

using RunTask = std::function<RunResult()>;

/// Runs independent tasks on up to `jobs` worker threads. Results keep task
/// order and each task is itself deterministic, so `jobs` never changes them.
inline std::vector<RunResult> run_all(const std::vector<RunTask>& tasks, int jobs) {
  std::vector<std::optional<RunResult>> slots(tasks.size());
  std::vector<std::exception_ptr> errors(tasks.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < tasks.size(); i = next++) {
      try {
        slots[i].emplace(tasks[i]());
      } catch (...) {
        errors[i] = std::current_exception();
      }
    }
  };
  const auto n = static_cast<std::size_t>(std::max(1, jobs));
  if (n == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < std::min(n, tasks.size()); ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  std::vector<RunResult> out;
  out.reserve(tasks.size());
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (errors[i]) std::rethrow_exception(errors[i]);
    out.push_back(std::move(*slots[i]));
  }
  return out;
}

/// Seeds used for repeated runs: base, base+1, ...
inline std::vector<std::uint64_t> seed_list(std::uint64_t base, int repeats) {
  std::vector<std::uint64_t> out;
  for (int i = 0; i < repeats; ++i) out.push_back(base + static_cast<std::uint64_t>(i));
  return out;
}

struct AblationResult {
  std::map<std::string, std::vector<RunResult>> arms;  // arm name -> one run per seed

  double median_test_f1(const std::string& arm) const {
    std::vector<double> v;
    for (const auto& r : arms.at(arm)) v.push_back(r.test.f1);
    return median(v);
  }
  double median_final_dev_f1(const std::string& arm) const {
    std::vector<double> v;
    for (const auto& r : arms.at(arm)) v.push_back(r.final_dev_f1());
    return median(v);
  }
  /// Median steps to reach `target` dev F1; runs that never reach it count as
  /// one evaluation interval past their last step.
  double median_steps_to(const std::string& arm, double target, int eval_every) const {
    std::vector<double> v;
    for (const auto& r : arms.at(arm)) {
      const auto s = r.steps_to(target);
      v.push_back(s ? *s : static_cast<double>(r.total_steps + eval_every));
    }
    return median(v);
  }
};

/// Baseline, +FSL, +FSA and full model on identical data and seeds.
inline AblationResult run_ablation(const RunConfig& base, std::span<const std::uint64_t> seeds, int jobs = 1) {
  const auto corpus = generate(base.corpus);
  const auto data = TrainData::from(corpus);
  std::vector<RunTask> tasks;
  std::vector<std::string> names;
  for (const auto& arm : ablation_arms())
    for (auto s : seeds) {
      auto c = with_arm(base, arm);
      c.seed = s;
      tasks.push_back([c, &data] { return train(c, data, c.epochs); });
      names.push_back(arm.name);
    }
  auto results = run_all(tasks, jobs);
  AblationResult out;
  for (std::size_t i = 0; i < results.size(); ++i) {
    results[i].name = names[i];
    out.arms[names[i]].push_back(std::move(results[i]));
  }
  return out;
}

enum class SweepAxis { SpanLen, Ramp, Variant, Side };

inline std::string to_string(SweepAxis a) {
  switch (a) {
    case SweepAxis::SpanLen: return "span_len";
    case SweepAxis::Ramp: return "ramp";
    case SweepAxis::Variant: return "variant";
    case SweepAxis::Side: return "side_mode";
  }
  return "?";
}

inline SweepAxis sweep_axis_from_string(const std::string& s) {
  if (s == "span_len" || s == "L_span") return SweepAxis::SpanLen;
  if (s == "ramp" || s == "d") return SweepAxis::Ramp;
  if (s == "variant") return SweepAxis::Variant;
  if (s == "side_mode" || s == "side") return SweepAxis::Side;
  throw std::invalid_argument("unknown sweep axis '" + s + "'");
}

/// The values swept along each axis.
inline std::vector<std::string> sweep_values(SweepAxis a) {
  switch (a) {
    case SweepAxis::SpanLen: return {"16", "30", "48"};
    case SweepAxis::Ramp: return {"16", "32", "48"};
    case SweepAxis::Variant: return {"Linear", "Step", "GaussianTail"};
    case SweepAxis::Side: return {"BothSides", "StartOnly"};
  }
  return {};
}

inline RunConfig with_sweep_value(RunConfig cfg, SweepAxis a, const std::string& v) {
  switch (a) {
    case SweepAxis::SpanLen: cfg.fsa.span_len = std::stoi(v); break;
    case SweepAxis::Ramp: cfg.fsa.ramp = std::stoi(v); break;
    case SweepAxis::Variant: cfg.fsa.variant = attenuation_from_string(v); break;
    case SweepAxis::Side:
      cfg.fuzzy = FuzzyConfig(cfg.fuzzy.sigma(), cfg.fuzzy.theta(), cfg.fuzzy.step(), side_mode_from_string(v));
      break;
  }
  return cfg;
}

struct SweepRow {
  SweepAxis axis;
  std::string value;
  std::uint64_t seed = 0;
  double final_dev_f1 = 0.0;
  double best_dev_f1 = 0.0;
  PRF test;
  std::vector<double> final_spans;
};

/// One full-model run per (axis value, seed) on shared data.
inline std::vector<SweepRow> run_sweep(const RunConfig& base, SweepAxis axis, std::span<const std::uint64_t> seeds,
                                       int jobs = 1) {
  const auto corpus = generate(base.corpus);
  const auto data = TrainData::from(corpus);
  std::vector<RunTask> tasks;
  std::vector<SweepRow> rows;
  for (const auto& v : sweep_values(axis))
    for (auto s : seeds) {
      auto c = with_arm(with_sweep_value(base, axis, v), {"full", true, true});
      c.seed = s;
      c.validate();
      tasks.push_back([c, &data] { return train(c, data, c.epochs); });
      rows.push_back({axis, v, s});
    }
  auto results = run_all(tasks, jobs);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].final_dev_f1 = results[i].final_dev_f1();
    rows[i].best_dev_f1 = results[i].best_dev_f1;
    rows[i].test = results[i].test;
    rows[i].final_spans = results[i].final_spans;
  }
  return rows;
}

inline double sweep_median_test_f1(std::span<const SweepRow> rows, const std::string& value) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.value == value) v.push_back(r.test.f1);
  return median(v);
}

inline void write_sweep_csv(std::span<const SweepRow> rows, std::ostream& os) {
  os << "axis,value,seed,final_dev_f1,best_dev_f1,test_precision,test_recall,test_f1,spans\n";
  for (const auto& r : rows) {
    os << to_string(r.axis) << ',' << r.value << ',' << r.seed << ',' << format_double(r.final_dev_f1) << ','
       << format_double(r.best_dev_f1) << ',' << format_double(r.test.precision) << ','
       << format_double(r.test.recall) << ',' << format_double(r.test.f1) << ',';
    for (std::size_t h = 0; h < r.final_spans.size(); ++h) os << (h ? ";" : "") << format_double(r.final_spans[h]);
    os << '\n';
  }
}

/// Median test F1 per swept value, one row per value.
inline void write_sweep_summary_csv(std::span<const SweepRow> rows, std::ostream& os) {
  os << "axis,value,runs,median_test_f1,median_final_dev_f1\n";
  std::vector<std::pair<SweepAxis, std::string>> keys;
  for (const auto& r : rows)
    if (std::find(keys.begin(), keys.end(), std::pair(r.axis, r.value)) == keys.end()) keys.emplace_back(r.axis, r.value);
  for (const auto& [axis, value] : keys) {
    std::vector<double> test, dev;
    for (const auto& r : rows)
      if (r.axis == axis && r.value == value) {
        test.push_back(r.test.f1);
        dev.push_back(r.final_dev_f1);
      }
    os << to_string(axis) << ',' << value << ',' << test.size() << ',' << format_double(median(test)) << ','
       << format_double(median(dev)) << '\n';
  }
}

inline const std::vector<double>& low_resource_fractions() {
  static const std::vector<double> f{0.01, 0.05, 0.25, 1.0};
  return f;
}

struct LowResourceRow {
  double fraction = 1.0;
  std::string arm;
  std::uint64_t seed = 0;
  std::size_t train_size = 0;
  PRF test;
  double best_dev_f1 = 0.0;
};

/// Baseline and full model on nested training subsets, each trained for
/// low_resource_epochs. Dev and test sets are shared.
inline std::vector<LowResourceRow> run_low_resource(const RunConfig& base, std::span<const double> fractions,
                                                    std::span<const std::uint64_t> seeds, int jobs = 1) {
  const auto corpus = generate(base.corpus);
  const auto data = TrainData::from(corpus);
  const auto subsets = split_low_resource(data.train, fractions, base.corpus.seed);
  std::vector<TrainData> sets;
  for (double f : fractions) sets.push_back({subsets.at(f), data.dev, data.test});
  std::vector<RunTask> tasks;
  std::vector<LowResourceRow> rows;
  for (std::size_t fi = 0; fi < fractions.size(); ++fi)
    for (const auto& arm : {Arm{"baseline", false, false}, Arm{"full", true, true}})
      for (auto s : seeds) {
        auto c = with_arm(base, arm);
        c.seed = s;
        const TrainData* set = &sets[fi];
        tasks.push_back([c, set] { return train(c, *set, c.low_resource_epochs); });
        rows.push_back({fractions[fi], arm.name, s, set->train.size()});
      }
  const auto results = run_all(tasks, jobs);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].test = results[i].test;
    rows[i].best_dev_f1 = results[i].best_dev_f1;
  }
  return rows;
}

inline double low_resource_median(std::span<const LowResourceRow> rows, double fraction, const std::string& arm) {
  std::vector<double> v;
  for (const auto& r : rows)
    if (r.fraction == fraction && r.arm == arm) v.push_back(r.test.f1);
  return median(v);
}

inline void write_low_resource_csv(std::span<const LowResourceRow> rows, std::ostream& os) {
  os << "fraction,arm,seed,train_size,best_dev_f1,test_precision,test_recall,test_f1\n";
  for (const auto& r : rows)
    os << format_double(r.fraction) << ',' << r.arm << ',' << r.seed << ',' << r.train_size << ','
       << format_double(r.best_dev_f1) << ',' << format_double(r.test.precision) << ','
       << format_double(r.test.recall) << ',' << format_double(r.test.f1) << '\n';
}

}  // namespace fsuie
