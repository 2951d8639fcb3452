#pragma once

// End-to-end runs: detection over a task grid, paired top-K / random-K
// masking sweeps, needle recall, error labels and report files.

#include <algorithm>
#include <atomic>
#include <exception>
#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "rhead/error.hpp"
#include "rhead/harness.hpp"
#include "rhead/hash.hpp"
#include "rhead/protocol.hpp"
#include "rhead/scoring.hpp"

namespace rhead {

// 100 x (needle tokens found in `emitted`, multiset-capped) / |needle|.
inline double needle_recall(const Tokens& emitted, const Tokens& needle) {
  if (needle.empty()) throw InputError("needle_recall of an empty needle");
  std::map<TokenId, std::size_t> want;
  for (TokenId t : needle) ++want[t];
  std::map<TokenId, std::size_t> have;
  for (TokenId t : emitted) ++have[t];
  std::size_t hits = 0;
  for (const auto& [tok, n] : want) hits += std::min(n, have[tok]);
  return 100.0 * static_cast<double>(hits) / static_cast<double>(needle.size());
}

enum class ErrorLabel { full_retrieval, incomplete_retrieval, hallucination, wrong_extraction };

inline const char* to_string(ErrorLabel l) {
  switch (l) {
    case ErrorLabel::full_retrieval: return "full_retrieval";
    case ErrorLabel::incomplete_retrieval: return "incomplete_retrieval";
    case ErrorLabel::hallucination: return "hallucination";
    case ErrorLabel::wrong_extraction: return "wrong_extraction";
  }
  return "hallucination";
}

inline constexpr std::size_t kExtractionWindow = 4;

struct Outcome {
  ErrorLabel label = ErrorLabel::hallucination;
  double recall = 0.0;
  std::optional<std::size_t> window_start;  // prompt position of the matched haystack window
  friend bool operator==(const Outcome&, const Outcome&) = default;
};

inline Outcome classify_error(const Tokens& emitted, const HaystackTask& task) {
  Outcome o;
  o.recall = needle_recall(emitted, task.needle());
  if (o.recall == 100.0) {
    o.label = ErrorLabel::full_retrieval;
    return o;
  }
  if (o.recall > 0.0) {
    o.label = ErrorLabel::incomplete_retrieval;
    return o;
  }
  o.label = ErrorLabel::hallucination;
  const std::size_t w = kExtractionWindow;
  if (emitted.size() < w) return o;
  const auto& hs = task.haystack_span;
  const auto& ns = task.needle_span;
  for (std::size_t e = 0; e + w <= emitted.size(); ++e) {
    for (std::size_t p = hs.begin; p + w <= hs.end; ++p) {
      if (p < ns.end && p + w > ns.begin) continue;
      if (std::equal(emitted.begin() + static_cast<std::ptrdiff_t>(e), emitted.begin() + static_cast<std::ptrdiff_t>(e + w),
                     task.prompt.begin() + static_cast<std::ptrdiff_t>(p))) {
        o.label = ErrorLabel::wrong_extraction;
        o.window_start = p;
        return o;
      }
    }
  }
  return o;
}

// ---------------------------------------------------------------------------
// runner pool

// One runner per worker thread. Requests to one runner are strictly
// sequential; results are written by job index so the reduction does not
// depend on completion order.
class RunnerPool {
 public:
  explicit RunnerPool(std::vector<std::unique_ptr<Runner>> runners) : runners_(std::move(runners)) {
    if (runners_.empty()) throw InputError("runner pool is empty");
    info_ = runners_.front()->info();
    validate_info(info_);
    for (std::size_t i = 1; i < runners_.size(); ++i) {
      const auto other = runners_[i]->info();
      if (other.model_id != info_.model_id || other.shape() != info_.shape()) {
        throw RunnerError("runner instances disagree on model identity");
      }
    }
  }

  static RunnerPool single(std::unique_ptr<Runner> r) {
    std::vector<std::unique_ptr<Runner>> v;
    v.push_back(std::move(r));
    return RunnerPool(std::move(v));
  }

  const RunnerInfo& info() const { return info_; }
  Runner& front() { return *runners_.front(); }
  std::size_t size() const { return runners_.size(); }

  // Calls fn(runner, job) for every job in `jobs`. Stops handing out work
  // after the first failure and rethrows it.
  template <class Fn>
  void run(const std::vector<std::size_t>& jobs, Fn&& fn) {
    std::atomic<std::size_t> next{0};
    std::atomic<bool> failed{false};
    std::exception_ptr first;
    std::mutex mu;
    auto worker = [&](Runner& r) {
      for (;;) {
        if (failed.load()) return;
        const std::size_t i = next.fetch_add(1);
        if (i >= jobs.size()) return;
        try {
          fn(r, jobs[i]);
        } catch (...) {
          std::lock_guard lock(mu);
          if (!first) first = std::current_exception();
          failed = true;
          return;
        }
      }
    };
    if (runners_.size() == 1) {
      worker(*runners_.front());
    } else {
      std::vector<std::thread> threads;
      for (auto& r : runners_) threads.emplace_back(worker, std::ref(*r));
      for (auto& t : threads) t.join();
    }
    if (first) std::rethrow_exception(first);
  }

 private:
  std::vector<std::unique_ptr<Runner>> runners_;
  RunnerInfo info_;
};

// ---------------------------------------------------------------------------
// checkpoints

// JSON-lines file: a header {"checkpoint":"rhead/1","fingerprint":...}
// followed by one {"key":..., ...} record per completed task. A torn final
// line is ignored on resume.
class Checkpoint {
 public:
  Checkpoint() = default;

  Checkpoint(std::string path, std::string fingerprint, bool resume) : path_(std::move(path)), fingerprint_(std::move(fingerprint)) {
    if (path_.empty()) return;
    if (resume && std::filesystem::exists(path_)) {
      std::ifstream in(path_);
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        auto j = nlohmann::json::parse(line, nullptr, false);
        if (j.is_discarded() || !j.is_object()) continue;
        if (header) {
          if (j.value("fingerprint", std::string{}) != fingerprint_) {
            throw InputError("checkpoint " + path_ + " belongs to a different run (fingerprint mismatch)");
          }
          header = false;
          continue;
        }
        if (j.contains("key") && j["key"].is_string()) {
          auto key = j["key"].get<std::string>();
          records_[std::move(key)] = std::move(j);
        }
      }
      out_.open(path_, std::ios::app);
      if (header) write_header();
    } else {
      out_.open(path_, std::ios::trunc);
      write_header();
    }
    if (!out_) throw IoError("cannot write checkpoint " + path_);
  }

  const std::string& path() const { return path_; }
  const std::string& fingerprint() const { return fingerprint_; }

  const nlohmann::json* find(const std::string& key) const {
    auto it = records_.find(key);
    return it == records_.end() ? nullptr : &it->second;
  }

  void record(const std::string& key, nlohmann::json rec) {
    if (path_.empty()) return;
    rec["key"] = key;
    std::lock_guard lock(mu_);
    out_ << rec.dump() << '\n';
    out_.flush();
  }

 private:
  void write_header() {
    out_ << nlohmann::json{{"checkpoint", "rhead/1"}, {"fingerprint", fingerprint_}}.dump() << '\n';
    out_.flush();
  }

  std::string path_;
  std::string fingerprint_;
  std::unordered_map<std::string, nlohmann::json> records_;
  std::ofstream out_;
  std::mutex mu_;
};

// Raised when a run stops on a runner failure. Completed tasks are in the
// checkpoint; rerunning with resume enabled continues from there.
class RunAborted : public Error {
 public:
  RunAborted(std::string cause_kind, const std::string& message, std::string checkpoint, std::string fingerprint,
             std::size_t completed, std::size_t total)
      : Error(message), cause_kind_(std::move(cause_kind)), checkpoint_(std::move(checkpoint)),
        fingerprint_(std::move(fingerprint)), completed_(completed), total_(total) {}
  const char* kind() const noexcept override { return cause_kind_.c_str(); }
  const std::string& checkpoint() const { return checkpoint_; }
  const std::string& fingerprint() const { return fingerprint_; }
  std::size_t completed() const { return completed_; }
  std::size_t total() const { return total_; }

 private:
  std::string cause_kind_, checkpoint_, fingerprint_;
  std::size_t completed_, total_;
};

namespace detail {

template <class Fn>
void run_checkpointed(RunnerPool& pool, Checkpoint& ckpt, const std::vector<std::size_t>& pending, std::size_t total, Fn&& fn) {
  std::atomic<std::size_t> done{total - pending.size()};
  try {
    pool.run(pending, [&](Runner& r, std::size_t job) {
      fn(r, job);
      ++done;
    });
  } catch (const InputError&) {
    throw;
  } catch (const Error& e) {
    throw RunAborted(e.kind(), e.what(), ckpt.path(), ckpt.fingerprint(), done.load(), total);
  }
}

inline std::string mask_key(const HeadMask& heads) {
  std::string s;
  for (const auto& h : heads) {
    if (!s.empty()) s += ';';
    s += h.str();
  }
  return s.empty() ? "-" : s;
}

inline std::size_t max_prompt_plus_decode(const std::vector<HaystackTask>& tasks, std::size_t extra) {
  std::size_t m = 0;
  for (const auto& t : tasks) m = std::max(m, t.prompt.size() + t.needle_span.size() + extra);
  return m;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// detection

struct DetectOptions {
  double threshold = kDefaultThreshold;
  std::size_t extra_new_tokens = 0;  // decode |needle| + extra tokens per task
  std::string checkpoint_path;       // empty: no checkpoint
  bool resume = false;
  std::string config_fingerprint;
};

struct CellRecall {
  std::size_t length = 0;
  double depth = 0.0;
  double mean_recall = 0.0;
};

struct DetectionReport {
  HeadScoreMatrix matrix;
  double threshold = kDefaultThreshold;
  std::vector<HeadId> detected;
  ScoreDistribution distribution;
  std::vector<std::size_t> lengths;
  std::vector<double> depths;
  std::vector<std::string> needle_ids;
  std::uint64_t seed = 0;
  std::vector<CellRecall> cells;
  std::vector<Tokens> emitted;       // per task, grid order
  std::vector<double> task_recall;   // per task, grid order
  std::string config_fingerprint;

  double mean_recall() const {
    double s = 0.0;
    for (double r : task_recall) s += r;
    return task_recall.empty() ? 0.0 : s / static_cast<double>(task_recall.size());
  }
};

inline std::string work_fingerprint(const std::string& kind, const RunnerInfo& info, const std::vector<HaystackTask>& tasks,
                                    std::size_t extra) {
  std::uint64_t h = fnv1a64(kind);
  h = fnv1a64(info.model_id, h);
  h = fnv1a64(info.shape().str(), h);
  h = fnv1a64(tasks_to_jsonl(tasks), h);
  h = fnv1a64(std::to_string(extra), h);
  return hex64(h);
}

inline DetectionReport run_detection(RunnerPool& pool, const GridConfig& grid, const Tokens& corpus, const DetectOptions& opt = {}) {
  const RunnerInfo info = pool.info();
  const Shape shape = info.shape();
  const auto tasks = build_grid(grid, corpus);
  if (detail::max_prompt_plus_decode(tasks, opt.extra_new_tokens) > info.max_context) {
    throw InputError("grid does not fit the runner context of " + std::to_string(info.max_context) + " tokens");
  }

  Checkpoint ckpt(opt.checkpoint_path, work_fingerprint("detect", info, tasks, opt.extra_new_tokens), opt.resume);
  std::vector<std::optional<TestTraceResult>> results(tasks.size());
  std::vector<Tokens> emitted(tasks.size());
  std::vector<std::size_t> pending;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    if (const auto* rec = ckpt.find("detect/" + std::to_string(i))) {
      TestTraceResult r{shape, tasks[i].needle_span.size(), rec->at("matched").get<std::vector<std::vector<Position>>>()};
      if (r.matched.size() != shape.size()) throw InputError("checkpoint record does not match model shape");
      results[i] = std::move(r);
      emitted[i] = rec->at("tokens").get<Tokens>();
    } else {
      pending.push_back(i);
    }
  }

  detail::run_checkpointed(pool, ckpt, pending, tasks.size(), [&](Runner& runner, std::size_t i) {
    const auto& task = tasks[i];
    GenerateRequest req{task.prompt, task.needle_span.size() + opt.extra_new_tokens, {}, TraceMode::argmax, 0, false};
    const auto resp = runner.generate(req);
    if (resp.trace.size() != resp.tokens.size()) throw TraceIntegrityError("runner returned no trace");
    StreamingScorer scorer(task, shape);
    for (const auto& step : resp.trace) scorer.observe(step);
    auto r = scorer.result();
    ckpt.record("detect/" + std::to_string(i), {{"tokens", resp.tokens}, {"matched", r.matched}});
    emitted[i] = resp.tokens;
    results[i] = std::move(r);
  });

  std::vector<TestTraceResult> flat;
  flat.reserve(results.size());
  for (auto& r : results) flat.push_back(std::move(*r));

  DetectionReport rep;
  rep.matrix = aggregate(flat, shape, info.model_id);
  rep.threshold = opt.threshold;
  rep.detected = detect_heads(rep.matrix, opt.threshold);
  rep.distribution = score_distribution(rep.matrix);
  rep.lengths = grid.lengths;
  rep.depths = grid.depths;
  for (const auto& n : grid.needles) rep.needle_ids.push_back(n.id);
  rep.seed = grid.seed;
  rep.config_fingerprint = opt.config_fingerprint;
  rep.emitted = std::move(emitted);
  for (std::size_t i = 0; i < tasks.size(); ++i) rep.task_recall.push_back(needle_recall(rep.emitted[i], tasks[i].needle()));
  // Tasks are length-major, then depth, then needle.
  const std::size_t per_cell = grid.needles.size();
  for (std::size_t c = 0; c * per_cell < tasks.size(); ++c) {
    double s = 0.0;
    for (std::size_t k = 0; k < per_cell; ++k) s += rep.task_recall[c * per_cell + k];
    rep.cells.push_back({tasks[c * per_cell].context_length, tasks[c * per_cell].depth, s / static_cast<double>(per_cell)});
  }
  return rep;
}

// ---------------------------------------------------------------------------
// mask sweep

struct SweepOptions {
  std::uint64_t seed = 0;
  double threshold = kDefaultThreshold;
  std::size_t extra_new_tokens = 0;
  std::string checkpoint_path;
  bool resume = false;
  std::string config_fingerprint;
};

struct SweepCell {
  std::size_t k = 0;
  std::string arm;  // "top" or "random"
  HeadMask heads;
  double score_cutoff = 0.0;  // min score in the top arm, max score in the random arm
  std::vector<Tokens> emitted;
  std::vector<Outcome> outcomes;

  double mean_recall() const {
    double s = 0.0;
    for (const auto& o : outcomes) s += o.recall;
    return outcomes.empty() ? 0.0 : s / static_cast<double>(outcomes.size());
  }
  std::size_t count(ErrorLabel l) const {
    return static_cast<std::size_t>(std::count_if(outcomes.begin(), outcomes.end(), [&](const Outcome& o) { return o.label == l; }));
  }
};

struct MaskSweepReport {
  std::string model_id;
  std::vector<std::size_t> ks;
  std::uint64_t seed = 0;
  double threshold = kDefaultThreshold;
  std::vector<SweepCell> cells;  // ks order, top arm then random arm
  std::string config_fingerprint;

  const SweepCell& cell(std::size_t k, const std::string& arm) const {
    for (const auto& c : cells) {
      if (c.k == k && c.arm == arm) return c;
    }
    throw InputError("no sweep cell for K=" + std::to_string(k) + " arm " + arm);
  }

  // Tasks whose label differs from the same arm's K=0 cell, if present.
  std::optional<std::size_t> label_changes(const SweepCell& c) const {
    for (const auto& base : cells) {
      if (base.k == 0 && base.arm == c.arm) {
        std::size_t n = 0;
        for (std::size_t i = 0; i < c.outcomes.size(); ++i) n += c.outcomes[i].label != base.outcomes[i].label;
        return n;
      }
    }
    return std::nullopt;
  }
};

// Masks chosen for each K: the K best-ranked heads, and K seeded draws from
// the heads at or below threshold. The same seed is used for every K, so
// random masks are nested as K grows.
inline std::vector<std::pair<std::string, HeadMask>> sweep_masks(const HeadScoreMatrix& m, std::size_t k, double threshold,
                                                                 std::uint64_t seed) {
  auto ranked = rank_heads(m);
  if (k > ranked.size()) throw InputError("K=" + std::to_string(k) + " exceeds the " + std::to_string(ranked.size()) + " heads of the model");
  ranked.resize(k);
  return {{"top", ranked}, {"random", select_random_nonretrieval(m, k, threshold, seed)}};
}

inline MaskSweepReport run_mask_sweep(RunnerPool& pool, const HeadScoreMatrix& matrix, const std::vector<std::size_t>& ks,
                                      const GridConfig& grid, const Tokens& corpus, const SweepOptions& opt = {}) {
  const RunnerInfo info = pool.info();
  if (info.shape() != matrix.shape) {
    throw InputError("score matrix shape " + matrix.shape.str() + " does not match runner shape " + info.shape().str());
  }
  if (ks.empty()) throw InputError("mask sweep needs at least one K");
  const auto tasks = build_grid(grid, corpus);
  if (detail::max_prompt_plus_decode(tasks, opt.extra_new_tokens) > info.max_context) {
    throw InputError("grid does not fit the runner context of " + std::to_string(info.max_context) + " tokens");
  }

  MaskSweepReport rep;
  rep.model_id = info.model_id;
  rep.ks = ks;
  rep.seed = opt.seed;
  rep.threshold = opt.threshold;
  rep.config_fingerprint = opt.config_fingerprint;
  for (std::size_t k : ks) {
    for (auto& [arm, heads] : sweep_masks(matrix, k, opt.threshold, opt.seed)) {
      SweepCell c;
      c.k = k;
      c.arm = arm;
      c.heads = std::move(heads);
      if (!c.heads.empty()) {
        double lo = 1.0, hi = 0.0;
        for (const auto& h : c.heads) {
          lo = std::min(lo, matrix.score(h));
          hi = std::max(hi, matrix.score(h));
        }
        c.score_cutoff = c.arm == "top" ? lo : hi;
      }
      c.emitted.resize(tasks.size());
      c.outcomes.resize(tasks.size());
      rep.cells.push_back(std::move(c));
    }
  }

  Checkpoint ckpt(opt.checkpoint_path, work_fingerprint("sweep", info, tasks, opt.extra_new_tokens), opt.resume);
  auto key = [&](std::size_t cell, std::size_t task) {
    const auto& c = rep.cells[cell];
    return "sweep/" + detail::mask_key(c.heads) + "/" + std::to_string(task);
  };
  std::vector<std::size_t> pending;
  const std::size_t n_tasks = tasks.size();
  for (std::size_t c = 0; c < rep.cells.size(); ++c) {
    for (std::size_t t = 0; t < n_tasks; ++t) {
      if (const auto* rec = ckpt.find(key(c, t))) {
        rep.cells[c].emitted[t] = rec->at("tokens").get<Tokens>();
      } else {
        pending.push_back(c * n_tasks + t);
      }
    }
  }

  detail::run_checkpointed(pool, ckpt, pending, rep.cells.size() * n_tasks, [&](Runner& runner, std::size_t job) {
    const std::size_t c = job / n_tasks, t = job % n_tasks;
    const auto& task = tasks[t];
    GenerateRequest req{task.prompt, task.needle_span.size() + opt.extra_new_tokens, rep.cells[c].heads, TraceMode::none, 0, false};
    auto resp = runner.generate(req);
    ckpt.record(key(c, t), {{"tokens", resp.tokens}});
    rep.cells[c].emitted[t] = std::move(resp.tokens);
  });

  for (auto& c : rep.cells) {
    for (std::size_t t = 0; t < n_tasks; ++t) c.outcomes[t] = classify_error(c.emitted[t], tasks[t]);
  }
  return rep;
}

// ---------------------------------------------------------------------------
// reports

inline nlohmann::json to_json(const DetectionReport& r) {
  auto detected = nlohmann::json::array();
  for (const auto& h : r.detected) {
    detected.push_back({{"layer", h.layer}, {"head", h.head}, {"retrieval_score", r.matrix.score(h)},
                        {"activation_frequency", r.matrix.frequency(h)}});
  }
  auto cells = nlohmann::json::array();
  for (const auto& c : r.cells) cells.push_back({{"length", c.length}, {"depth", c.depth}, {"mean_recall", c.mean_recall}});
  return {{"schema", "rhead.detection/1"},
          {"model_id", r.matrix.model_id},
          {"matrix", to_json(r.matrix)},
          {"threshold", r.threshold},
          {"detected_heads", std::move(detected)},
          {"distribution", to_json(r.distribution)},
          {"grid", {{"lengths", r.lengths}, {"depths", r.depths}, {"needles", r.needle_ids}, {"seed", r.seed}, {"num_tasks", r.task_recall.size()}}},
          {"recall", {{"mean", r.mean_recall()}, {"cells", std::move(cells)}, {"tasks", r.task_recall}}},
          {"emitted", r.emitted},
          {"config_fingerprint", r.config_fingerprint},
          {"seed", r.seed}};
}

// Accepts a detection report or a bare score matrix document.
inline HeadScoreMatrix matrix_from_report(const nlohmann::json& j) {
  if (j.contains("matrix")) return matrix_from_json(j["matrix"]);
  return matrix_from_json(j);
}

inline nlohmann::json to_json(const Outcome& o) {
  nlohmann::json j{{"label", to_string(o.label)}, {"recall", o.recall}, {"window_start", nullptr}};
  if (o.window_start) j["window_start"] = *o.window_start;
  return j;
}

inline nlohmann::json to_json(const MaskSweepReport& r) {
  auto cells = nlohmann::json::array();
  for (const auto& c : r.cells) {
    auto tasks = nlohmann::json::array();
    for (std::size_t i = 0; i < c.outcomes.size(); ++i) {
      auto t = to_json(c.outcomes[i]);
      t["emitted"] = c.emitted[i];
      tasks.push_back(std::move(t));
    }
    nlohmann::json counts;
    for (auto l : {ErrorLabel::full_retrieval, ErrorLabel::incomplete_retrieval, ErrorLabel::hallucination, ErrorLabel::wrong_extraction}) {
      counts[to_string(l)] = c.count(l);
    }
    const auto changes = r.label_changes(c);
    cells.push_back({{"k", c.k},
                     {"arm", c.arm},
                     {"heads", heads_to_json(c.heads)},
                     {"score_cutoff", c.score_cutoff},
                     {"mean_recall", c.mean_recall()},
                     {"label_counts", std::move(counts)},
                     {"label_changes_vs_k0", changes ? nlohmann::json(*changes) : nlohmann::json(nullptr)},
                     {"tasks", std::move(tasks)}});
  }
  return {{"schema", "rhead.mask_sweep/1"},
          {"model_id", r.model_id},
          {"ks", r.ks},
          {"seed", r.seed},
          {"threshold", r.threshold},
          {"config_fingerprint", r.config_fingerprint},
          {"cells", std::move(cells)}};
}

inline std::string sweep_to_csv(const MaskSweepReport& r) {
  std::ostringstream os;
  os << "k,arm,num_heads,heads,score_cutoff,mean_recall,full_retrieval,incomplete_retrieval,hallucination,wrong_extraction\n";
  for (const auto& c : r.cells) {
    os << c.k << ',' << c.arm << ',' << c.heads.size() << ',' << detail::mask_key(c.heads) << ',' << format_double(c.score_cutoff)
       << ',' << format_double(c.mean_recall()) << ',' << c.count(ErrorLabel::full_retrieval) << ','
       << c.count(ErrorLabel::incomplete_retrieval) << ',' << c.count(ErrorLabel::hallucination) << ','
       << c.count(ErrorLabel::wrong_extraction) << '\n';
  }
  return os.str();
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
  std::error_code ec;
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << content;
  out.close();
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::string canonical_dump(const nlohmann::json& j) { return j.dump(2) + "\n"; }

// detection.json + detection_heads.csv under `dir`.
inline void emit_report(const DetectionReport& r, const std::filesystem::path& dir) {
  write_text_file(dir / "detection.json", canonical_dump(to_json(r)));
  write_text_file(dir / "detection_heads.csv", matrix_to_csv(r.matrix));
}

// mask_sweep.json + mask_sweep.csv under `dir`.
inline void emit_report(const MaskSweepReport& r, const std::filesystem::path& dir) {
  write_text_file(dir / "mask_sweep.json", canonical_dump(to_json(r)));
  write_text_file(dir / "mask_sweep.csv", sweep_to_csv(r));
}

}  // namespace rhead
