#pragma once

// Declarative run configuration (one JSON file, every field optional).
//
//   {
//     "runner": "builtin-toy",            // or a shell command speaking the runner protocol
//     "corpus": "haystack.json",          // JSON id array or raw uint32 LE; required unless builtin-toy
//     "toy": {"vocab_size": 64, ...},     // builtin-toy circuit config
//     "grid": {
//       "lengths": [1000, 2000],
//       "depths": [0.0, 0.5, 1.0],        // or "num_depths": 10
//       "needles": [{"id": "n1", "needle": [..], "question": [..]},
//                   {"id": "n2", "needle_text": "...", "question_text": "..."}],
//       "template": {"prefix": [..], "needle_lead": [..], "question_join": [..]},
//       "seed": 0
//     },
//     "threshold": 0.1, "ks": [0, 1, 2], "sweep_seed": 0, "extra_new_tokens": 0,
//     "output_dir": "rhead-out", "parallelism": 1, "timeout_ms": 120000
//   }

#include <chrono>
#include <cstdint>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "rhead/error.hpp"
#include "rhead/experiments.hpp"
#include "rhead/harness.hpp"
#include "rhead/hash.hpp"
#include "rhead/protocol.hpp"
#include "rhead/subprocess.hpp"
#include "rhead/toy_circuit.hpp"
#include "rhead/toy_runner.hpp"

namespace rhead {

class ConfigError : public InputError {
 public:
  using InputError::InputError;
  const char* kind() const noexcept override { return "config_error"; }
};

inline constexpr const char* kBuiltinToy = "builtin-toy";

struct RunConfig {
  std::string runner = kBuiltinToy;
  std::optional<std::string> corpus;
  ToyConfig toy;
  std::optional<nlohmann::json> grid;
  std::optional<std::uint64_t> grid_seed;  // overrides grid.seed
  double threshold = kDefaultThreshold;
  std::vector<std::size_t> ks = {0, 1, 2};
  std::uint64_t sweep_seed = 0;
  std::size_t extra_new_tokens = 0;
  std::string output_dir = "rhead-out";
  std::size_t parallelism = 1;
  std::size_t timeout_ms = 120000;

  bool is_toy() const { return runner == kBuiltinToy; }

  // Fields that determine results. output_dir, parallelism and timeout_ms
  // are left out: they never change a report's content.
  nlohmann::json fingerprint_json() const {
    nlohmann::json j{{"runner", runner},
                     {"corpus", corpus ? nlohmann::json(*corpus) : nlohmann::json(nullptr)},
                     {"grid", grid ? *grid : nlohmann::json(nullptr)},
                     {"grid_seed", grid_seed ? nlohmann::json(*grid_seed) : nlohmann::json(nullptr)},
                     {"threshold", threshold},
                     {"ks", ks},
                     {"sweep_seed", sweep_seed},
                     {"extra_new_tokens", extra_new_tokens}};
    if (is_toy()) j["toy"] = to_json(toy);
    return j;
  }

  std::string fingerprint() const { return hex64(fnv1a64(fingerprint_json().dump())); }

  void validate() const {
    if (runner.empty()) throw ConfigError("runner must not be empty");
    if (!is_toy() && !corpus) throw ConfigError("a corpus is required for runner '" + runner + "'");
    if (!is_toy() && !grid) throw ConfigError("a grid with needles is required for runner '" + runner + "'");
    if (!(threshold >= 0.0 && threshold <= 1.0)) throw ConfigError("threshold must be within [0, 1]");
    if (parallelism < 1) throw ConfigError("parallelism must be >= 1");
    if (timeout_ms < 1) throw ConfigError("timeout_ms must be >= 1");
    if (is_toy()) toy.validate();
  }
};

inline RunConfig parse_run_config(const nlohmann::json& j) {
  static const std::set<std::string> known = {"runner", "corpus", "toy", "grid", "grid_seed", "threshold", "ks", "sweep_seed",
                                              "extra_new_tokens", "output_dir", "parallelism", "timeout_ms"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [k, v] : j.items()) {
    if (!known.count(k)) throw ConfigError("unknown config field '" + k + "'");
  }
  RunConfig c;
  try {
    c.runner = j.value("runner", c.runner);
    if (j.contains("corpus") && !j["corpus"].is_null()) c.corpus = j["corpus"].get<std::string>();
    if (j.contains("toy")) c.toy = toy_config_from_json(j["toy"]);
    if (j.contains("grid") && !j["grid"].is_null()) c.grid = j["grid"];
    if (j.contains("grid_seed") && !j["grid_seed"].is_null()) c.grid_seed = j["grid_seed"].get<std::uint64_t>();
    c.threshold = j.value("threshold", c.threshold);
    if (j.contains("ks")) c.ks = j["ks"].get<std::vector<std::size_t>>();
    c.sweep_seed = j.value("sweep_seed", c.sweep_seed);
    c.extra_new_tokens = j.value("extra_new_tokens", c.extra_new_tokens);
    c.output_dir = j.value("output_dir", c.output_dir);
    c.parallelism = j.value("parallelism", c.parallelism);
    c.timeout_ms = j.value("timeout_ms", c.timeout_ms);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }
  return c;
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  auto j = nlohmann::json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config " + path + " is not valid JSON");
  return parse_run_config(j);
}

namespace detail {

inline Tokens tokens_or_text(const nlohmann::json& j, const std::string& ids_key, Runner* runner) {
  if (j.contains(ids_key)) return j[ids_key].get<Tokens>();
  const std::string text_key = ids_key + "_text";
  if (j.contains(text_key)) {
    if (!runner) throw ConfigError("'" + text_key + "' needs a runner with a tokenizer");
    return runner->tokenize(j[text_key].get<std::string>());
  }
  return {};
}

}  // namespace detail

// Grid from the config, tokenizing any *_text fields through `runner`.
inline GridConfig resolve_grid(const RunConfig& c, Runner* runner) {
  GridConfig g;
  if (!c.grid) {
    if (!c.is_toy()) throw ConfigError("a grid with needles is required for runner '" + c.runner + "'");
    g = toy_grid(c.toy);
  } else {
    const auto& j = *c.grid;
    try {
      g.lengths = j.at("lengths").get<std::vector<std::size_t>>();
      if (j.contains("depths")) g.depths = j["depths"].get<std::vector<double>>();
      else g.depths = uniform_depths(j.value("num_depths", std::size_t{10}));
      for (const auto& n : j.at("needles")) {
        g.needles.push_back({n.at("id").get<std::string>(), detail::tokens_or_text(n, "needle", runner),
                             detail::tokens_or_text(n, "question", runner)});
      }
      if (j.contains("template")) {
        const auto& t = j["template"];
        g.tmpl = {detail::tokens_or_text(t, "prefix", runner), detail::tokens_or_text(t, "needle_lead", runner),
                  detail::tokens_or_text(t, "question_join", runner)};
      } else if (c.is_toy()) {
        g.tmpl = toy_template(c.toy);
      }
      g.seed = j.value("seed", std::uint64_t{0});
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("bad grid: ") + e.what());
    }
  }
  if (c.grid_seed) g.seed = *c.grid_seed;
  g.validate();
  return g;
}

inline Tokens resolve_corpus(const RunConfig& c) {
  if (c.corpus) return load_corpus(*c.corpus);
  if (!c.is_toy()) throw ConfigError("a corpus is required for runner '" + c.runner + "'");
  return toy_corpus(c.toy);
}

inline RunnerPool make_pool(const RunConfig& c) {
  std::vector<std::unique_ptr<Runner>> runners;
  if (c.is_toy()) {
    auto model = std::make_shared<const ToyModel>(construct_copy_circuit(c.toy));
    for (std::size_t i = 0; i < c.parallelism; ++i) runners.push_back(std::make_unique<ToyRunner>(model));
  } else {
    for (std::size_t i = 0; i < c.parallelism; ++i) {
      runners.push_back(std::make_unique<SubprocessRunner>(c.runner, std::chrono::milliseconds(c.timeout_ms)));
    }
  }
  return RunnerPool(std::move(runners));
}

}  // namespace rhead
