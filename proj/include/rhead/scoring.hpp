#pragma once

// Copy-paste criterion, per-head retrieval scores and the statistics built
// on top of them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "json.hpp"
#include "rhead/error.hpp"
#include "rhead/harness.hpp"
#include "rhead/hash.hpp"
#include "rhead/types.hpp"

namespace rhead {

inline constexpr double kDefaultThreshold = 0.1;

// One generated token plus, for every head (row-major layer, head), the
// context position that received the most attention at the query that
// produced it.
struct StepTrace {
  TokenId emitted = 0;
  std::vector<Position> argmax;
  std::vector<std::vector<Position>> topk;  // optional, per head

  Position at(Shape shape, HeadId h) const { return argmax[shape.index(h)]; }
  friend bool operator==(const StepTrace&, const StepTrace&) = default;
};

inline void check_step(const StepTrace& step, Shape shape, std::size_t sequence_length) {
  if (step.argmax.size() != shape.size()) {
    throw TraceIntegrityError("step trace has " + std::to_string(step.argmax.size()) + " head entries, expected " +
                              std::to_string(shape.size()));
  }
  for (std::size_t i = 0; i < step.argmax.size(); ++i) {
    const Position p = step.argmax[i];
    if (p < 0 || static_cast<std::size_t>(p) >= sequence_length) {
      throw TraceIntegrityError("argmax position " + std::to_string(p) + " of head " + shape.at(i).str() +
                                " outside sequence of length " + std::to_string(sequence_length));
    }
  }
}

// Position j if the head copy-pasted the emitted token from the needle at
// this step: emitted token is a needle token and the head's argmax lands on
// the same token inside the needle span. `step_index` is the 0-based decode
// step, so the sequence seen by the query has |prompt| + step_index tokens.
inline std::optional<Position> copy_paste_match(const StepTrace& step, std::size_t step_index, HeadId head, Shape shape,
                                                const HaystackTask& task) {
  if (!shape.contains(head)) throw InputError("head " + head.str() + " outside shape " + shape.str());
  if (step.argmax.size() != shape.size()) throw TraceIntegrityError("step trace does not cover every head");
  const Position j = step.at(shape, head);
  const std::size_t seq_len = task.prompt.size() + step_index;
  if (j < 0 || static_cast<std::size_t>(j) >= seq_len) {
    throw TraceIntegrityError("argmax position " + std::to_string(j) + " outside sequence of length " +
                              std::to_string(seq_len));
  }
  const auto nb = task.prompt.begin() + static_cast<std::ptrdiff_t>(task.needle_span.begin);
  const auto ne = task.prompt.begin() + static_cast<std::ptrdiff_t>(task.needle_span.end);
  if (std::find(nb, ne, step.emitted) == ne) return std::nullopt;
  if (!task.needle_span.contains(j)) return std::nullopt;
  if (task.prompt[static_cast<std::size_t>(j)] != step.emitted) return std::nullopt;
  return j;
}

// Per-head needle positions matched during one test decode.
struct TestTraceResult {
  Shape shape;
  std::size_t needle_length = 0;
  std::vector<std::vector<Position>> matched;  // per flat head, ascending

  std::size_t count(HeadId h) const { return matched[shape.index(h)].size(); }
  double score(HeadId h) const {
    return static_cast<double>(count(h)) / static_cast<double>(needle_length);
  }
  friend bool operator==(const TestTraceResult&, const TestTraceResult&) = default;
};

// Scores a decode incrementally, one step at a time, as traces arrive.
class StreamingScorer {
 public:
  StreamingScorer(const HaystackTask& task, Shape shape)
      : task_(&task), shape_(shape), hit_(shape.size(), std::vector<char>(task.needle_span.size(), 0)) {
    for (std::size_t p = task.needle_span.begin; p < task.needle_span.end; ++p) needle_tokens_.insert(task.prompt[p]);
  }

  void observe(const StepTrace& step) {
    check_step(step, shape_, task_->prompt.size() + steps_);
    ++steps_;
    if (!needle_tokens_.count(step.emitted)) return;
    for (std::size_t h = 0; h < step.argmax.size(); ++h) {
      const Position j = step.argmax[h];
      if (task_->needle_span.contains(j) && task_->prompt[static_cast<std::size_t>(j)] == step.emitted) {
        hit_[h][static_cast<std::size_t>(j) - task_->needle_span.begin] = 1;
      }
    }
  }

  std::size_t steps() const { return steps_; }

  TestTraceResult result() const {
    TestTraceResult r;
    r.shape = shape_;
    r.needle_length = task_->needle_span.size();
    r.matched.resize(shape_.size());
    for (std::size_t h = 0; h < hit_.size(); ++h) {
      for (std::size_t k = 0; k < hit_[h].size(); ++k) {
        if (hit_[h][k]) r.matched[h].push_back(static_cast<Position>(task_->needle_span.begin + k));
      }
    }
    return r;
  }

 private:
  const HaystackTask* task_;
  Shape shape_;
  std::size_t steps_ = 0;
  std::unordered_set<TokenId> needle_tokens_;
  std::vector<std::vector<char>> hit_;
};

inline TestTraceResult score_test(const std::vector<StepTrace>& steps, const HaystackTask& task, Shape shape) {
  StreamingScorer scorer(task, shape);
  for (const auto& s : steps) scorer.observe(s);
  return scorer.result();
}

struct HeadScoreMatrix {
  std::string model_id;
  Shape shape;
  std::vector<double> retrieval_score;       // row-major
  std::vector<double> activation_frequency;  // row-major
  std::size_t num_tests = 0;

  double score(HeadId h) const { return retrieval_score[shape.index(h)]; }
  double frequency(HeadId h) const { return activation_frequency[shape.index(h)]; }

  void validate() const {
    if (shape.layers < 1 || shape.heads < 1) throw InputError("score matrix shape must be at least (1, 1)");
    if (retrieval_score.size() != shape.size() || activation_frequency.size() != shape.size()) {
      throw InputError("score matrix arrays do not match shape " + shape.str());
    }
    for (std::size_t i = 0; i < shape.size(); ++i) {
      const double s = retrieval_score[i], f = activation_frequency[i];
      if (!(s >= 0.0 && s <= 1.0) || !(f >= 0.0 && f <= 1.0)) throw InputError("score matrix value outside [0, 1]");
      if (f < s) throw InputError("activation frequency below retrieval score at head " + shape.at(i).str());
    }
  }
  friend bool operator==(const HeadScoreMatrix&, const HeadScoreMatrix&) = default;
};

// Mean per-test score and fraction of tests with at least one match. Per-test
// scores are summed in sorted order so the result does not depend on the
// order of `results`.
inline HeadScoreMatrix aggregate(const std::vector<TestTraceResult>& results, Shape shape, std::string model_id = {}) {
  if (results.empty()) throw InputError("cannot aggregate zero test results");
  HeadScoreMatrix m;
  m.model_id = std::move(model_id);
  m.shape = shape;
  m.num_tests = results.size();
  m.retrieval_score.assign(shape.size(), 0.0);
  m.activation_frequency.assign(shape.size(), 0.0);
  const double n = static_cast<double>(results.size());
  std::vector<double> per_test(results.size());
  for (std::size_t h = 0; h < shape.size(); ++h) {
    std::size_t active = 0;
    for (std::size_t t = 0; t < results.size(); ++t) {
      const auto& r = results[t];
      if (r.shape != shape) throw InputError("test result shape " + r.shape.str() + " != " + shape.str());
      const std::size_t c = r.matched[h].size();
      per_test[t] = static_cast<double>(c) / static_cast<double>(r.needle_length);
      if (c > 0) ++active;
    }
    std::sort(per_test.begin(), per_test.end());
    double sum = 0.0;
    for (double s : per_test) sum += s;
    m.retrieval_score[h] = sum / n;
    m.activation_frequency[h] = static_cast<double>(active) / n;
  }
  return m;
}

// Every head ordered by (score desc, layer asc, head asc).
inline std::vector<HeadId> rank_heads(const HeadScoreMatrix& m) {
  std::vector<HeadId> heads;
  heads.reserve(m.shape.size());
  for (std::size_t i = 0; i < m.shape.size(); ++i) heads.push_back(m.shape.at(i));
  std::stable_sort(heads.begin(), heads.end(), [&](HeadId a, HeadId b) { return m.score(a) > m.score(b); });
  return heads;
}

inline std::vector<HeadId> detect_heads(const HeadScoreMatrix& m, double threshold = kDefaultThreshold) {
  auto ranked = rank_heads(m);
  std::erase_if(ranked, [&](HeadId h) { return !(m.score(h) > threshold); });
  return ranked;
}

// k distinct heads with score <= threshold, chosen by a seeded partial
// Fisher-Yates shuffle over the eligible heads in (layer, head) order.
inline std::vector<HeadId> select_random_nonretrieval(const HeadScoreMatrix& m, std::size_t k, double threshold,
                                                      std::uint64_t seed) {
  std::vector<HeadId> eligible;
  for (std::size_t i = 0; i < m.shape.size(); ++i) {
    if (m.retrieval_score[i] <= threshold) eligible.push_back(m.shape.at(i));
  }
  if (eligible.size() < k) {
    throw InputError("requested " + std::to_string(k) + " random non-retrieval heads but only " +
                     std::to_string(eligible.size()) + " are eligible");
  }
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(bounded_draw(rng, eligible.size() - i));
    std::swap(eligible[i], eligible[j]);
  }
  eligible.resize(k);
  return eligible;
}

// Fractions of heads with score = 0, in (0, 0.1], (0.1, 0.5], (0.5, 1].
struct ScoreDistribution {
  double zero = 0.0;
  double low = 0.0;
  double mid = 0.0;
  double high = 0.0;
  friend bool operator==(const ScoreDistribution&, const ScoreDistribution&) = default;
};

inline ScoreDistribution score_distribution(const HeadScoreMatrix& m) {
  std::size_t c[4] = {0, 0, 0, 0};
  for (double s : m.retrieval_score) {
    if (s == 0.0) ++c[0];
    else if (s <= 0.1) ++c[1];
    else if (s <= 0.5) ++c[2];
    else ++c[3];
  }
  const double n = static_cast<double>(m.retrieval_score.size());
  return {c[0] / n, c[1] / n, c[2] / n, c[3] / n};
}

// Pearson r over the flattened retrieval-score vectors.
inline double pearson(const HeadScoreMatrix& a, const HeadScoreMatrix& b) {
  if (a.shape != b.shape) throw InputError("shape mismatch: " + a.shape.str() + " vs " + b.shape.str());
  const std::size_t n = a.retrieval_score.size();
  if (n < 2) throw InputError("correlation needs at least 2 heads");
  double ma = 0.0, mb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    ma += a.retrieval_score[i];
    mb += b.retrieval_score[i];
  }
  ma /= static_cast<double>(n);
  mb /= static_cast<double>(n);
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = a.retrieval_score[i] - ma, db = b.retrieval_score[i] - mb;
    sab += da * db;
    saa += da * da;
    sbb += db * db;
  }
  if (saa == 0.0 || sbb == 0.0) throw UndefinedCorrelationError("correlation undefined: zero variance in a score matrix");
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

// ---------------------------------------------------------------------------
// serialization

// Shortest round-trip decimal form, identical to what the JSON writer emits.
inline std::string format_double(double v) { return nlohmann::json(v).dump(); }

inline nlohmann::json to_json(const HeadScoreMatrix& m) {
  return {{"model_id", m.model_id},
          {"shape", {m.shape.layers, m.shape.heads}},
          {"retrieval_score", m.retrieval_score},
          {"activation_frequency", m.activation_frequency},
          {"num_tests", m.num_tests}};
}

inline HeadScoreMatrix matrix_from_json(const nlohmann::json& j) {
  HeadScoreMatrix m;
  try {
    m.model_id = j.at("model_id").get<std::string>();
    m.shape = {j.at("shape").at(0).get<int>(), j.at("shape").at(1).get<int>()};
    m.retrieval_score = j.at("retrieval_score").get<std::vector<double>>();
    m.activation_frequency = j.at("activation_frequency").get<std::vector<double>>();
    m.num_tests = j.at("num_tests").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed score matrix: ") + e.what());
  }
  m.validate();
  return m;
}

inline std::string matrix_to_csv(const HeadScoreMatrix& m) {
  std::ostringstream os;
  os << "layer,head,retrieval_score,activation_frequency\n";
  for (std::size_t i = 0; i < m.shape.size(); ++i) {
    const HeadId h = m.shape.at(i);
    os << h.layer << ',' << h.head << ',' << format_double(m.retrieval_score[i]) << ','
       << format_double(m.activation_frequency[i]) << '\n';
  }
  return os.str();
}

inline nlohmann::json to_json(const ScoreDistribution& d) {
  return {{"zero", d.zero}, {"le_0.1", d.low}, {"le_0.5", d.mid}, {"le_1", d.high}};
}

inline nlohmann::json heads_to_json(const std::vector<HeadId>& heads) {
  auto arr = nlohmann::json::array();
  for (const auto& h : heads) arr.push_back({h.layer, h.head});
  return arr;
}

inline HeadMask heads_from_json(const nlohmann::json& j) {
  HeadMask out;
  for (const auto& e : j) out.push_back({e.at(0).get<int>(), e.at(1).get<int>()});
  return out;
}

}  // namespace rhead
