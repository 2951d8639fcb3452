// rhead: retrieval-head detection and masking experiments from the command
// line. Exit codes: 0 success, 2 usage/config, 3 runner failure, 4 internal.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "rhead/rhead.hpp"

namespace fs = std::filesystem;
using namespace rhead;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;
constexpr int kExitRunner = 3;
constexpr int kExitInternal = 4;

// Flags shared by detect and mask-sweep. Unset flags leave the config alone.
struct RunFlags {
  std::string config_path;
  std::optional<std::string> runner, corpus, out;
  std::optional<std::uint64_t> grid_seed, sweep_seed;
  std::optional<double> threshold;
  std::optional<std::size_t> parallelism, timeout_ms, extra_new_tokens;
  std::vector<std::size_t> ks;
  std::optional<int> vocab, positions, heads;
  std::optional<double> sharpness;
  bool resume = false;

  void attach(CLI::App* cmd) {
    cmd->add_option("-c,--config", config_path, "Run configuration file (JSON)")->check(CLI::ExistingFile);
    cmd->add_option("--runner", runner, "Runner command line, or 'builtin-toy'");
    cmd->add_option("--corpus", corpus, "Haystack corpus: JSON array or raw uint32 token ids");
    cmd->add_option("--out", out, "Output directory (overrides config and RHEAD_OUTPUT_DIR)");
    cmd->add_option("--grid-seed", grid_seed, "Seed for haystack windows");
    cmd->add_option("--threshold", threshold, "Retrieval-score threshold for detection (default 0.1)");
    cmd->add_option("--parallelism", parallelism, "Number of runner instances");
    cmd->add_option("--timeout-ms", timeout_ms, "Per-request runner timeout in milliseconds");
    cmd->add_option("--extra-new-tokens", extra_new_tokens, "Decode this many tokens beyond the needle length");
    cmd->add_flag("--resume", resume, "Continue from the checkpoint in the output directory");
    cmd->add_option("--vocab", vocab, "builtin-toy: vocabulary size");
    cmd->add_option("--positions", positions, "builtin-toy: context length");
    cmd->add_option("--heads", heads, "builtin-toy: heads per layer");
    cmd->add_option("--sharpness", sharpness, "builtin-toy: attention logit scale");
  }

  RunConfig resolve() const {
    RunConfig c = config_path.empty() ? RunConfig{} : load_run_config(config_path);
    if (const char* env = std::getenv("RHEAD_OUTPUT_DIR"); env && *env) c.output_dir = env;
    if (runner) c.runner = *runner;
    if (corpus) c.corpus = *corpus;
    if (out) c.output_dir = *out;
    if (grid_seed) c.grid_seed = *grid_seed;
    if (sweep_seed) c.sweep_seed = *sweep_seed;
    if (threshold) c.threshold = *threshold;
    if (parallelism) c.parallelism = *parallelism;
    if (timeout_ms) c.timeout_ms = *timeout_ms;
    if (extra_new_tokens) c.extra_new_tokens = *extra_new_tokens;
    if (!ks.empty()) c.ks = ks;
    if (vocab) c.toy.vocab_size = *vocab;
    if (positions) c.toy.max_positions = *positions;
    if (heads) c.toy.heads_per_layer = *heads;
    if (sharpness) c.toy.sharpness = *sharpness;
    c.validate();
    return c;
  }
};

struct ToyFlags {
  ToyConfig cfg;
  void attach(CLI::App* cmd) {
    cmd->add_option("--vocab", cfg.vocab_size, "Toy vocabulary size")->capture_default_str();
    cmd->add_option("--positions", cfg.max_positions, "Toy context length")->capture_default_str();
    cmd->add_option("--heads", cfg.heads_per_layer, "Heads per layer")->capture_default_str();
    cmd->add_option("--sharpness", cfg.sharpness, "Attention logit scale")->capture_default_str();
  }
};

void print_error(const std::string& kind, const std::string& message, const nlohmann::json& extra = nullptr) {
  nlohmann::json j{{"error", kind}, {"message", message}};
  if (!extra.is_null()) j["resume"] = extra;
  std::cerr << j.dump() << std::endl;
}

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(prec) << v;
  return os.str();
}

void print_heads(const DetectionReport& r) {
  std::cout << "model " << r.matrix.model_id << "  shape " << r.matrix.shape.str() << "  tests " << r.matrix.num_tests
            << "  threshold " << r.threshold << "\n";
  std::cout << "detected " << r.detected.size() << " retrieval head(s)\n";
  std::cout << "  layer  head  retrieval_score  activation_frequency\n";
  for (const auto& h : r.detected) {
    std::cout << "  " << std::setw(5) << h.layer << "  " << std::setw(4) << h.head << "  " << std::setw(15) << fmt(r.matrix.score(h))
              << "  " << std::setw(20) << fmt(r.matrix.frequency(h)) << "\n";
  }
  std::cout << "mean needle recall " << fmt(r.mean_recall(), 2) << "\n";
}

DetectionReport detect_with(const RunConfig& c, RunnerPool& pool, bool resume) {
  const auto grid = resolve_grid(c, &pool.front());
  const auto corpus = resolve_corpus(c);
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  write_text_file(out / "tasks.jsonl", tasks_to_jsonl(build_grid(grid, corpus)));
  DetectOptions opt;
  opt.threshold = c.threshold;
  opt.extra_new_tokens = c.extra_new_tokens;
  opt.checkpoint_path = (out / "detection.ckpt.jsonl").string();
  opt.resume = resume;
  opt.config_fingerprint = c.fingerprint();
  auto report = run_detection(pool, grid, corpus, opt);
  emit_report(report, out);
  return report;
}

int cmd_detect(const RunFlags& flags) {
  const RunConfig c = flags.resolve();
  auto pool = make_pool(c);
  const auto report = detect_with(c, pool, flags.resume);
  print_heads(report);
  std::cout << "wrote " << (fs::path(c.output_dir) / "detection.json").string() << "\n";
  return kExitOk;
}

int cmd_mask_sweep(const RunFlags& flags, const std::string& detection_path) {
  const RunConfig c = flags.resolve();
  if (c.ks.empty()) throw ConfigError("mask-sweep needs at least one K");
  auto pool = make_pool(c);
  HeadScoreMatrix matrix;
  if (!detection_path.empty()) {
    std::ifstream in(detection_path);
    if (!in) throw ConfigError("cannot open detection report " + detection_path);
    auto j = nlohmann::json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("detection report " + detection_path + " is not valid JSON");
    matrix = matrix_from_report(j);
  } else {
    matrix = detect_with(c, pool, flags.resume).matrix;
  }
  for (std::size_t k : c.ks) sweep_masks(matrix, k, c.threshold, c.sweep_seed);

  const auto grid = resolve_grid(c, &pool.front());
  const auto corpus = resolve_corpus(c);
  const fs::path out = c.output_dir;
  fs::create_directories(out);
  SweepOptions opt;
  opt.seed = c.sweep_seed;
  opt.threshold = c.threshold;
  opt.extra_new_tokens = c.extra_new_tokens;
  opt.checkpoint_path = (out / "mask_sweep.ckpt.jsonl").string();
  opt.resume = flags.resume;
  opt.config_fingerprint = c.fingerprint();
  const auto report = run_mask_sweep(pool, matrix, c.ks, grid, corpus, opt);
  emit_report(report, out);

  std::cout << "   K  arm      mean_recall  full  incomplete  hallucination  wrong_extraction  heads\n";
  for (const auto& cell : report.cells) {
    std::cout << std::setw(4) << cell.k << "  " << std::left << std::setw(7) << cell.arm << std::right << "  " << std::setw(11)
              << fmt(cell.mean_recall(), 2) << "  " << std::setw(4) << cell.count(ErrorLabel::full_retrieval) << "  " << std::setw(10)
              << cell.count(ErrorLabel::incomplete_retrieval) << "  " << std::setw(13) << cell.count(ErrorLabel::hallucination) << "  "
              << std::setw(16) << cell.count(ErrorLabel::wrong_extraction) << "  " << detail::mask_key(cell.heads) << "\n";
  }
  std::cout << "wrote " << (out / "mask_sweep.json").string() << "\n";
  return kExitOk;
}

nlohmann::json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError(path + " is not valid JSON");
  return j;
}

int cmd_compare(const std::string& a_path, const std::string& b_path, const std::optional<std::string>& out) {
  const auto a = matrix_from_report(read_json_file(a_path));
  const auto b = matrix_from_report(read_json_file(b_path));
  if (a.shape != b.shape) {
    throw InputError("shape mismatch: " + a_path + " has " + a.shape.str() + ", " + b_path + " has " + b.shape.str());
  }
  const double r = pearson(a, b);
  const auto da = score_distribution(a), db = score_distribution(b);
  const ScoreDistribution delta{db.zero - da.zero, db.low - da.low, db.mid - da.mid, db.high - da.high};
  nlohmann::json j{{"schema", "rhead.compare/1"},
                   {"a", {{"path", a_path}, {"model_id", a.model_id}, {"distribution", to_json(da)}}},
                   {"b", {{"path", b_path}, {"model_id", b.model_id}, {"distribution", to_json(db)}}},
                   {"shape", {a.shape.layers, a.shape.heads}},
                   {"pearson", r},
                   {"distribution_delta", to_json(delta)}};
  std::cout << "pearson r = " << fmt(r, 6) << "\n";
  std::cout << "bucket        a        b        delta\n";
  const char* names[] = {"=0", "(0,0.1]", "(0.1,0.5]", "(0.5,1]"};
  const double av[] = {da.zero, da.low, da.mid, da.high}, bv[] = {db.zero, db.low, db.mid, db.high};
  for (int i = 0; i < 4; ++i) {
    std::cout << std::left << std::setw(10) << names[i] << std::right << "  " << fmt(av[i]) << "  " << fmt(bv[i]) << "  "
              << fmt(bv[i] - av[i]) << "\n";
  }
  if (out) {
    write_text_file(*out, canonical_dump(j));
    std::cout << "wrote " << *out << "\n";
  }
  return kExitOk;
}

int cmd_classify(const std::string& tasks_path, const std::string& emitted_path, const std::optional<std::string>& out) {
  const auto tasks = read_tasks_jsonl(tasks_path);
  std::ifstream in(emitted_path);
  if (!in) throw ConfigError("cannot open " + emitted_path);
  std::vector<Tokens> emitted;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded()) throw ConfigError(emitted_path + ":" + std::to_string(lineno) + ": invalid JSON");
    try {
      emitted.push_back(j.is_object() ? j.at("tokens").get<Tokens>() : j.get<Tokens>());
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(emitted_path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (emitted.size() != tasks.size()) {
    throw ConfigError("task file has " + std::to_string(tasks.size()) + " tasks but emitted file has " + std::to_string(emitted.size()) + " lines");
  }
  std::string lines;
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    auto o = to_json(classify_error(emitted[i], tasks[i]));
    o["needle_id"] = tasks[i].needle_id;
    o["context_length"] = tasks[i].context_length;
    o["depth"] = tasks[i].depth;
    lines += o.dump() + "\n";
  }
  if (out) write_text_file(*out, lines);
  else std::cout << lines;
  return kExitOk;
}

int cmd_toy_demo(const ToyConfig& cfg) {
  const auto model = construct_copy_circuit(cfg);
  const auto grid = toy_grid(cfg);
  const auto& needle = grid.needles.front();
  const auto task = build_task(toy_corpus(cfg), 24, 0.5, needle, grid.tmpl, 0);
  const Shape shape = model.shape();
  auto show = [](const Tokens& t) {
    std::string s;
    for (TokenId x : t) s += (s.empty() ? "" : " ") + std::to_string(x);
    return s;
  };
  std::cout << "copy circuit " << toy_model_id(cfg) << ", designed head " << model.designed_head.str() << ", support head "
            << model.support_head.str() << "\n";
  std::cout << "prompt (" << task.prompt.size() << " tokens): " << show(task.prompt) << "\n";
  std::cout << "needle '" << needle.id << "' at [" << task.needle_span.begin << ", " << task.needle_span.end << "): " << show(task.needle())
            << "\n\n";
  for (const HeadMask& mask : {HeadMask{}, HeadMask{model.designed_head}}) {
    const auto res = greedy_decode_with_trace(model, task.prompt, task.needle_span.size(), mask);
    std::cout << (mask.empty() ? "unmasked decode" : "decode with head " + model.designed_head.str() + " masked") << "\n";
    std::cout << "  step  emitted  argmax(" << model.designed_head.str() << ")  prompt[j]  copy-paste\n";
    for (std::size_t t = 0; t < res.trace.size(); ++t) {
      const Position j = res.trace[t].at(shape, model.designed_head);
      const std::string at = static_cast<std::size_t>(j) < task.prompt.size() ? std::to_string(task.prompt[static_cast<std::size_t>(j)]) : "-";
      const bool hit = copy_paste_match(res.trace[t], t, model.designed_head, shape, task).has_value();
      std::cout << "  " << std::setw(4) << t << "  " << std::setw(7) << res.tokens[t] << "  " << std::setw(12) << j << "  "
                << std::setw(9) << at << "  " << (hit ? "yes" : "no") << "\n";
    }
    const auto o = classify_error(res.tokens, task);
    std::cout << "  recall " << fmt(o.recall, 2) << ", label " << to_string(o.label) << "\n\n";
  }
  return kExitOk;
}

// Exits the process after a fixed number of generate requests; used to
// exercise crash handling and resume.
class CrashingRunner : public Runner {
 public:
  CrashingRunner(Runner& inner, std::size_t after) : inner_(inner), left_(after) {}
  RunnerInfo info() override { return inner_.info(); }
  GenerateResponse generate(const GenerateRequest& req) override {
    if (left_ == 0) std::_Exit(1);
    --left_;
    return inner_.generate(req);
  }
  Tokens tokenize(std::string_view t) override { return inner_.tokenize(t); }
  std::string detokenize(std::span<const TokenId> t) override { return inner_.detokenize(t); }

 private:
  Runner& inner_;
  std::size_t left_;
};

int cmd_serve_toy(const ToyConfig& cfg, const std::string& weights, std::optional<std::size_t> crash_after) {
  std::shared_ptr<const ToyModel> model;
  if (weights.empty()) {
    model = std::make_shared<const ToyModel>(construct_copy_circuit(cfg));
  } else {
    model = std::make_shared<const ToyModel>(toy_model_from_json(read_json_file(weights)));
  }
  ToyRunner toy(model);
  std::ios::sync_with_stdio(false);
  if (crash_after) {
    CrashingRunner r(toy, *crash_after);
    serve(r, std::cin, std::cout);
  } else {
    serve(toy, std::cin, std::cout);
  }
  return kExitOk;
}

int cmd_export(const ToyConfig& cfg, const std::string& out) {
  write_text_file(out, to_json(construct_copy_circuit(cfg)).dump() + "\n");
  std::cout << "wrote " << out << "\n";
  return kExitOk;
}

int cmd_conformance(const std::string& runner, std::vector<TokenId> prompt, std::size_t timeout_ms) {
  std::unique_ptr<Runner> r;
  if (runner == kBuiltinToy) r = std::make_unique<ToyRunner>();
  else r = std::make_unique<SubprocessRunner>(runner, std::chrono::milliseconds(timeout_ms));
  const auto checks = run_conformance(*r, prompt);
  bool ok = true;
  for (const auto& c : checks) {
    std::cout << (c.passed ? "PASS  " : "FAIL  ") << c.name << (c.detail.empty() ? "" : "  (" + c.detail + ")") << "\n";
    ok = ok && c.passed;
  }
  return ok ? kExitOk : kExitRunner;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"rhead: detect retrieval heads with needle-in-a-haystack copy-paste scoring"};
  app.require_subcommand(1);

  RunFlags detect_flags;
  auto* detect = app.add_subcommand("detect", "Score every head over the task grid and report retrieval heads");
  detect_flags.attach(detect);

  RunFlags sweep_flags;
  std::string detection_path;
  auto* sweep = app.add_subcommand("mask-sweep", "Mask top-K vs random-K heads and measure needle recall");
  sweep_flags.attach(sweep);
  sweep->add_option("--ks", sweep_flags.ks, "Comma-separated K values")->delimiter(',');
  sweep->add_option("--sweep-seed", sweep_flags.sweep_seed, "Seed for the random-head arm");
  sweep->add_option("--detection", detection_path, "Existing detection.json (otherwise detection runs first)")->check(CLI::ExistingFile);

  std::string cmp_a, cmp_b;
  std::optional<std::string> cmp_out;
  auto* compare = app.add_subcommand("compare", "Pearson correlation and bucket deltas between two score matrices");
  compare->add_option("report_a", cmp_a, "Detection report or score matrix JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("report_b", cmp_b, "Detection report or score matrix JSON")->required()->check(CLI::ExistingFile);
  compare->add_option("--out", cmp_out, "Write the comparison JSON here");

  std::string cls_tasks, cls_emitted;
  std::optional<std::string> cls_out;
  auto* classify = app.add_subcommand("classify", "Label decodes as full/incomplete retrieval, hallucination or wrong extraction");
  classify->add_option("--tasks", cls_tasks, "Task JSON-lines file")->required()->check(CLI::ExistingFile);
  classify->add_option("--emitted", cls_emitted, "One JSON token array per line, aligned with the tasks")->required()->check(CLI::ExistingFile);
  classify->add_option("--out", cls_out, "Write labels here instead of stdout");

  ToyFlags demo_toy;
  auto* demo = app.add_subcommand("toy-demo", "Print a worked copy-circuit decode with its trace");
  demo_toy.attach(demo);

  ToyFlags export_toy;
  std::string export_out = "toy_weights.json";
  auto* exp = app.add_subcommand("export-toy-weights", "Write the copy-circuit weights as JSON");
  export_toy.attach(exp);
  exp->add_option("--out", export_out, "Output file")->capture_default_str();

  ToyFlags serve_flags;
  std::string serve_weights;
  std::optional<std::size_t> crash_after;
  auto* serve_cmd = app.add_subcommand("serve-toy", "Serve the copy circuit over the runner protocol on stdin/stdout");
  serve_flags.attach(serve_cmd);
  serve_cmd->add_option("--weights", serve_weights, "Load exported weights instead of constructing")->check(CLI::ExistingFile);
  serve_cmd->add_option("--crash-after", crash_after, "Exit abruptly after this many generate requests (testing)");

  std::string conf_runner = kBuiltinToy;
  std::vector<TokenId> conf_prompt = {0, 24, 25, 2, 8, 9, 10, 30, 31, 2};
  std::size_t conf_timeout = 60000;
  auto* conf = app.add_subcommand("conformance", "Check that a runner honours the protocol contract");
  conf->add_option("--runner", conf_runner, "Runner command line, or 'builtin-toy'")->capture_default_str();
  conf->add_option("--prompt", conf_prompt, "Comma-separated probe prompt token ids")->delimiter(',');
  conf->add_option("--timeout-ms", conf_timeout, "Per-request timeout")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*detect) return cmd_detect(detect_flags);
    if (*sweep) return cmd_mask_sweep(sweep_flags, detection_path);
    if (*compare) return cmd_compare(cmp_a, cmp_b, cmp_out);
    if (*classify) return cmd_classify(cls_tasks, cls_emitted, cls_out);
    if (*demo) return cmd_toy_demo(demo_toy.cfg);
    if (*exp) return cmd_export(export_toy.cfg, export_out);
    if (*serve_cmd) return cmd_serve_toy(serve_flags.cfg, serve_weights, crash_after);
    if (*conf) return cmd_conformance(conf_runner, conf_prompt, conf_timeout);
  } catch (const RunAborted& e) {
    print_error(e.kind(), e.what(),
                {{"checkpoint", e.checkpoint()}, {"fingerprint", e.fingerprint()}, {"completed", e.completed()}, {"total", e.total()}});
    return kExitRunner;
  } catch (const InputError& e) {
    print_error(e.kind(), e.what());
    return kExitUsage;
  } catch (const UndefinedCorrelationError& e) {
    print_error(e.kind(), e.what());
    return kExitUsage;
  } catch (const RunnerError& e) {
    print_error(e.kind(), e.what());
    return kExitRunner;
  } catch (const RunnerCrash& e) {
    print_error(e.kind(), e.what());
    return kExitRunner;
  } catch (const RunnerTimeout& e) {
    print_error(e.kind(), e.what());
    return kExitRunner;
  } catch (const ProtocolError& e) {
    print_error(e.kind(), e.what());
    return kExitRunner;
  } catch (const IoError& e) {
    print_error(e.kind(), e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    print_error("internal", e.what());
    return kExitInternal;
  }
  return kExitInternal;
}
