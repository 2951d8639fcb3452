#pragma once

// Needle-in-a-haystack task synthesis in token-id space.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rhead/error.hpp"
#include "rhead/hash.hpp"
#include "rhead/types.hpp"

namespace rhead {

// Half-open index range [begin, end).
struct Span {
  std::size_t begin = 0;
  std::size_t end = 0;

  friend bool operator==(const Span&, const Span&) = default;
  std::size_t size() const { return end - begin; }
  bool contains(Position p) const {
    return p >= 0 && static_cast<std::size_t>(p) >= begin && static_cast<std::size_t>(p) < end;
  }
};

struct NeedleSpec {
  std::string id;
  Tokens needle;    // the answer inserted into the haystack
  Tokens question;  // appended after the haystack

  void validate() const {
    if (needle.empty()) throw InputError("needle '" + id + "' is empty");
    if (question.empty()) throw InputError("question of needle '" + id + "' is empty");
  }
};

// [prefix][haystack ... needle_lead needle ... ][question_join][question]
struct PromptTemplate {
  Tokens prefix;
  Tokens needle_lead;
  Tokens question_join;

  std::size_t overhead() const { return prefix.size() + needle_lead.size() + question_join.size(); }
};

struct HaystackTask {
  Tokens prompt;
  Span needle_span;
  Span haystack_span;  // haystack region including the inserted needle
  std::string needle_id;
  std::size_t context_length = 0;
  double depth = 0.0;
  std::uint64_t seed = 0;

  Tokens needle() const {
    return Tokens(prompt.begin() + static_cast<std::ptrdiff_t>(needle_span.begin),
                  prompt.begin() + static_cast<std::ptrdiff_t>(needle_span.end));
  }

  friend bool operator==(const HaystackTask&, const HaystackTask&) = default;
};

struct GridConfig {
  std::vector<std::size_t> lengths;
  std::vector<double> depths;
  std::vector<NeedleSpec> needles;
  PromptTemplate tmpl;
  std::uint64_t seed = 0;

  std::size_t size() const { return lengths.size() * depths.size() * needles.size(); }

  void validate() const {
    if (lengths.empty()) throw InputError("grid has no lengths");
    if (depths.empty()) throw InputError("grid has no depths");
    if (needles.empty()) throw InputError("grid has no needles");
    for (std::size_t i = 0; i < lengths.size(); ++i) {
      if (lengths[i] == 0) throw InputError("grid length must be positive");
      if (i > 0 && lengths[i] <= lengths[i - 1]) throw InputError("grid lengths must be strictly ascending");
    }
    for (double d : depths) {
      if (!(d >= 0.0 && d <= 1.0)) throw InputError("grid depth " + std::to_string(d) + " outside [0, 1]");
    }
    for (const auto& n : needles) n.validate();
  }
};

// `n` depths evenly spaced over [0, 1], endpoints included.
inline std::vector<double> uniform_depths(std::size_t n) {
  if (n == 0) return {};
  if (n == 1) return {0.0};
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<double>(i) / static_cast<double>(n - 1);
  return out;
}

inline Tokens build_haystack(const Tokens& corpus, std::size_t target_length, std::uint64_t seed) {
  if (corpus.empty()) throw InputError("haystack corpus is empty");
  if (target_length == 0) throw InputError("haystack target length must be at least 1");
  Tokens out;
  out.reserve(target_length);
  if (corpus.size() >= target_length) {
    const std::size_t windows = corpus.size() - target_length + 1;
    const std::size_t start = static_cast<std::size_t>(splitmix64(seed) % windows);
    out.assign(corpus.begin() + static_cast<std::ptrdiff_t>(start),
               corpus.begin() + static_cast<std::ptrdiff_t>(start + target_length));
  } else {
    for (std::size_t i = 0; i < target_length; ++i) out.push_back(corpus[i % corpus.size()]);
  }
  return out;
}

inline std::pair<Tokens, Span> insert_needle(const Tokens& haystack, const Tokens& needle, double depth) {
  if (!(depth >= 0.0 && depth <= 1.0)) throw InputError("needle depth " + std::to_string(depth) + " outside [0, 1]");
  const auto start = static_cast<std::size_t>(std::floor(depth * static_cast<double>(haystack.size())));
  Tokens out;
  out.reserve(haystack.size() + needle.size());
  out.insert(out.end(), haystack.begin(), haystack.begin() + static_cast<std::ptrdiff_t>(start));
  out.insert(out.end(), needle.begin(), needle.end());
  out.insert(out.end(), haystack.begin() + static_cast<std::ptrdiff_t>(start), haystack.end());
  return {std::move(out), Span{start, start + needle.size()}};
}

inline std::uint64_t derive_task_seed(std::uint64_t grid_seed, std::size_t length, double depth, const std::string& needle_id) {
  std::uint64_t h = hash_combine64(grid_seed, length);
  h = hash_combine64(h, std::bit_cast<std::uint64_t>(depth));
  return hash_combine64(h, fnv1a64(needle_id));
}

inline HaystackTask build_task(const Tokens& corpus, std::size_t length, double depth, const NeedleSpec& spec,
                               const PromptTemplate& tmpl, std::uint64_t grid_seed) {
  HaystackTask task;
  task.needle_id = spec.id;
  task.context_length = length;
  task.depth = depth;
  task.seed = derive_task_seed(grid_seed, length, depth, spec.id);

  Tokens unit = tmpl.needle_lead;
  unit.insert(unit.end(), spec.needle.begin(), spec.needle.end());
  auto [body, span] = insert_needle(build_haystack(corpus, length, task.seed), unit, depth);

  const std::size_t base = tmpl.prefix.size();
  task.prompt = tmpl.prefix;
  task.prompt.insert(task.prompt.end(), body.begin(), body.end());
  task.haystack_span = {base, base + body.size()};
  task.prompt.insert(task.prompt.end(), tmpl.question_join.begin(), tmpl.question_join.end());
  task.prompt.insert(task.prompt.end(), spec.question.begin(), spec.question.end());
  task.needle_span = {base + span.begin + tmpl.needle_lead.size(), base + span.end};

  if (task.needle() != spec.needle) throw InputError("needle audit failed for '" + spec.id + "'");
  return task;
}

// Cross product lengths x depths x needles, length-major.
inline std::vector<HaystackTask> build_grid(const GridConfig& grid, const Tokens& corpus) {
  grid.validate();
  if (corpus.empty()) throw InputError("haystack corpus is empty");
  std::size_t longest_needle = 0;
  for (const auto& n : grid.needles) longest_needle = std::max(longest_needle, n.needle.size());
  for (std::size_t len : grid.lengths) {
    if (len < grid.tmpl.overhead() + longest_needle) {
      throw InputError("grid length " + std::to_string(len) + " is smaller than template overhead + needle length (" +
                       std::to_string(grid.tmpl.overhead() + longest_needle) + ")");
    }
  }
  std::vector<HaystackTask> tasks;
  tasks.reserve(grid.size());
  for (std::size_t len : grid.lengths) {
    for (double depth : grid.depths) {
      for (const auto& needle : grid.needles) {
        tasks.push_back(build_task(corpus, len, depth, needle, grid.tmpl, grid.seed));
      }
    }
  }
  return tasks;
}

// ---------------------------------------------------------------------------
// serialization

inline nlohmann::json to_json(const HaystackTask& t) {
  return {{"prompt", t.prompt},
          {"needle_span", {t.needle_span.begin, t.needle_span.end}},
          {"haystack_span", {t.haystack_span.begin, t.haystack_span.end}},
          {"needle_id", t.needle_id},
          {"context_length", t.context_length},
          {"depth", t.depth},
          {"seed", t.seed}};
}

inline HaystackTask task_from_json(const nlohmann::json& j) {
  HaystackTask t;
  try {
    t.prompt = j.at("prompt").get<Tokens>();
    t.needle_span = {j.at("needle_span").at(0).get<std::size_t>(), j.at("needle_span").at(1).get<std::size_t>()};
    if (j.contains("haystack_span")) {
      t.haystack_span = {j["haystack_span"].at(0).get<std::size_t>(), j["haystack_span"].at(1).get<std::size_t>()};
    } else {
      t.haystack_span = {0, t.prompt.size()};
    }
    t.needle_id = j.at("needle_id").get<std::string>();
    t.context_length = j.at("context_length").get<std::size_t>();
    t.depth = j.at("depth").get<double>();
    t.seed = j.at("seed").get<std::uint64_t>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed task: ") + e.what());
  }
  if (t.needle_span.begin > t.needle_span.end || t.needle_span.end > t.prompt.size() || t.needle_span.size() == 0) {
    throw InputError("task needle_span out of range");
  }
  return t;
}

inline std::string tasks_to_jsonl(const std::vector<HaystackTask>& tasks) {
  std::string out;
  for (const auto& t : tasks) {
    out += to_json(t).dump();
    out += '\n';
  }
  return out;
}

inline std::vector<HaystackTask> read_tasks_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open task file " + path);
  std::vector<HaystackTask> tasks;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      tasks.push_back(task_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::parse_error& e) {
      throw InputError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return tasks;
}

// A corpus file is either a JSON array of token ids or raw little-endian
// uint32 ids.
inline Tokens load_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open corpus " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  auto first = bytes.find_first_not_of(" \t\r\n");
  if (first != std::string::npos && bytes[first] == '[') {
    try {
      return nlohmann::json::parse(bytes).get<Tokens>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError("corpus " + path + " is not a JSON array of token ids: " + e.what());
    }
  }
  if (bytes.size() % 4 != 0) throw InputError("binary corpus " + path + " length is not a multiple of 4");
  Tokens out(bytes.size() / 4);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto* p = reinterpret_cast<const unsigned char*>(bytes.data() + 4 * i);
    const std::uint32_t v = std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
    out[i] = static_cast<TokenId>(v);
  }
  return out;
}

}  // namespace rhead
