#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>

#include <unistd.h>

#include "rhead/harness.hpp"
#include "rhead/toy_circuit.hpp"

using namespace rhead;

namespace {

Tokens iota_tokens(std::size_t n, TokenId first = 0) {
  Tokens t(n);
  for (std::size_t i = 0; i < n; ++i) t[i] = first + static_cast<TokenId>(i);
  return t;
}

GridConfig small_grid(std::size_t n_lengths, std::size_t n_depths, std::size_t n_needles) {
  GridConfig g;
  for (std::size_t i = 0; i < n_lengths; ++i) g.lengths.push_back(40 + 10 * i);
  g.depths = uniform_depths(n_depths);
  for (std::size_t i = 0; i < n_needles; ++i) {
    g.needles.push_back({"n" + std::to_string(i), {500 + static_cast<TokenId>(i), 600, 601}, {700}});
  }
  g.tmpl = {{1}, {2}, {3}};
  return g;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("rhead_harness_" + std::to_string(::getpid()) + "_" + name);
}

}  // namespace

TEST(BuildHaystack, WindowIsContiguousAndSeedDeterministic) {
  const Tokens corpus = iota_tokens(100);
  for (std::uint64_t seed : {0u, 1u, 17u, 9999u}) {
    const Tokens a = build_haystack(corpus, 50, seed);
    ASSERT_EQ(a.size(), 50u);
    for (std::size_t i = 1; i < a.size(); ++i) EXPECT_EQ(a[i], a[i - 1] + 1);
    EXPECT_EQ(a, build_haystack(corpus, 50, seed));
  }
}

TEST(BuildHaystack, ShortCorpusRepeatsCyclically) {
  EXPECT_EQ(build_haystack({1, 2, 3}, 7, 0), (Tokens{1, 2, 3, 1, 2, 3, 1}));
  EXPECT_EQ(build_haystack({1, 2, 3}, 7, 123), (Tokens{1, 2, 3, 1, 2, 3, 1}));
}

TEST(BuildHaystack, EmptyCorpusIsInputError) {
  EXPECT_THROW(build_haystack({}, 5, 0), InputError);
}

TEST(InsertNeedle, MidDepth) {
  const Tokens hay = iota_tokens(50);
  const Tokens needle = iota_tokens(5, 900);
  auto [out, span] = insert_needle(hay, needle, 0.5);
  EXPECT_EQ(span.begin, 25u);
  EXPECT_EQ(span.end, 30u);
  ASSERT_EQ(out.size(), 55u);
  EXPECT_EQ(Tokens(out.begin() + 25, out.begin() + 30), needle);
  EXPECT_EQ(out[24], 24);
  EXPECT_EQ(out[30], 25);
}

TEST(InsertNeedle, Boundaries) {
  const Tokens hay = iota_tokens(50);
  const Tokens needle = {900, 901};
  auto [front, s0] = insert_needle(hay, needle, 0.0);
  EXPECT_EQ(s0.begin, 0u);
  EXPECT_EQ(front[0], 900);
  auto [back, s1] = insert_needle(hay, needle, 1.0);
  EXPECT_EQ(s1.begin, 50u);
  EXPECT_EQ(back[50], 900);
  EXPECT_EQ(back[51], 901);
  EXPECT_THROW(insert_needle(hay, needle, 1.5), InputError);
  EXPECT_THROW(insert_needle(hay, needle, -0.1), InputError);
}

TEST(InsertNeedle, StartIsFloorOfDepthTimesLength) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 200; ++i) {
    const std::size_t n = 1 + rng() % 300;
    const double d = static_cast<double>(rng() % 1001) / 1000.0;
    auto [out, span] = insert_needle(iota_tokens(n), {7, 7, 7}, d);
    EXPECT_EQ(span.begin, static_cast<std::size_t>(std::floor(d * static_cast<double>(n))));
    EXPECT_EQ(out.size(), n + 3);
  }
}

TEST(BuildGrid, PaperSizedGridHas600Tasks) {
  GridConfig g = small_grid(20, 10, 3);
  EXPECT_EQ(build_grid(g, iota_tokens(300, 10)).size(), 600u);
}

TEST(BuildGrid, DefaultToyGridHas90Tasks) {
  const ToyConfig cfg;
  EXPECT_EQ(build_grid(toy_grid(cfg), toy_corpus(cfg)).size(), 90u);
}

TEST(BuildGrid, Deterministic) {
  const auto g = small_grid(3, 5, 2);
  const Tokens corpus = iota_tokens(400, 10);
  EXPECT_EQ(build_grid(g, corpus), build_grid(g, corpus));
}

TEST(BuildGrid, GridSeedChangesHaystackOnly) {
  auto g = small_grid(2, 4, 2);
  const Tokens corpus = iota_tokens(400, 10);
  const auto a = build_grid(g, corpus);
  g.seed = 99;
  const auto b = build_grid(g, corpus);
  ASSERT_EQ(a.size(), b.size());
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].needle_span, b[i].needle_span);
    EXPECT_EQ(a[i].needle(), b[i].needle());
    differs |= a[i].prompt != b[i].prompt;
  }
  EXPECT_TRUE(differs);
}

TEST(BuildGrid, EveryTaskPassesNeedleAudit) {
  const auto g = small_grid(4, 10, 3);
  for (const auto& t : build_grid(g, iota_tokens(50, 10))) {
    const auto& spec = *std::find_if(g.needles.begin(), g.needles.end(), [&](const NeedleSpec& n) { return n.id == t.needle_id; });
    EXPECT_EQ(t.needle(), spec.needle);
    // prompt = prefix + haystack(length) + lead + needle + join + question
    EXPECT_EQ(t.prompt.size(), 1 + t.context_length + 1 + spec.needle.size() + 1 + spec.question.size());
    EXPECT_EQ(t.prompt.front(), 1);
    EXPECT_EQ(t.prompt[t.needle_span.begin - 1], 2);
    EXPECT_EQ(t.prompt.back(), 700);
    EXPECT_LE(t.haystack_span.begin, t.needle_span.begin);
    EXPECT_GE(t.haystack_span.end, t.needle_span.end);
  }
}

TEST(BuildGrid, DepthMonotonicity) {
  auto g = small_grid(3, 11, 2);
  const auto tasks = build_grid(g, iota_tokens(500, 10));
  for (const auto& a : tasks) {
    for (const auto& b : tasks) {
      if (a.context_length == b.context_length && a.needle_id == b.needle_id && a.depth < b.depth) {
        EXPECT_LE(a.needle_span.begin, b.needle_span.begin);
      }
    }
  }
}

TEST(BuildGrid, TaskSeedDependsOnCoordinates) {
  const auto s = derive_task_seed(0, 100, 0.5, "a");
  EXPECT_EQ(s, derive_task_seed(0, 100, 0.5, "a"));
  EXPECT_NE(s, derive_task_seed(1, 100, 0.5, "a"));
  EXPECT_NE(s, derive_task_seed(0, 101, 0.5, "a"));
  EXPECT_NE(s, derive_task_seed(0, 100, 0.6, "a"));
  EXPECT_NE(s, derive_task_seed(0, 100, 0.5, "b"));
}

TEST(BuildGrid, RejectsInvalidGrids) {
  const Tokens corpus = iota_tokens(100);
  auto g = small_grid(2, 2, 1);
  EXPECT_THROW(build_grid(g, {}), InputError);

  auto empty = g;
  empty.needles.clear();
  EXPECT_THROW(build_grid(empty, corpus), InputError);
  empty = g;
  empty.lengths.clear();
  EXPECT_THROW(build_grid(empty, corpus), InputError);

  auto bad = g;
  bad.depths = {0.2, 1.2};
  EXPECT_THROW(build_grid(bad, corpus), InputError);
  bad = g;
  bad.lengths = {50, 40};
  EXPECT_THROW(build_grid(bad, corpus), InputError);
  bad = g;
  bad.lengths = {4};
  EXPECT_THROW(build_grid(bad, corpus), InputError);
  bad = g;
  bad.needles[0].needle.clear();
  EXPECT_THROW(build_grid(bad, corpus), InputError);
}

TEST(UniformDepths, EndpointsIncluded) {
  const auto d = uniform_depths(10);
  ASSERT_EQ(d.size(), 10u);
  EXPECT_EQ(d.front(), 0.0);
  EXPECT_EQ(d.back(), 1.0);
  EXPECT_EQ(uniform_depths(1), std::vector<double>{0.0});
}

TEST(TaskJson, RoundTripProperty) {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 50; ++i) {
    auto g = small_grid(1 + rng() % 3, 1 + rng() % 6, 1 + rng() % 3);
    g.seed = rng();
    const auto tasks = build_grid(g, iota_tokens(30 + rng() % 200, 10));
    const auto path = temp_file("tasks.jsonl");
    std::ofstream(path) << tasks_to_jsonl(tasks);
    EXPECT_EQ(read_tasks_jsonl(path.string()), tasks);
    std::filesystem::remove(path);
  }
}

TEST(TaskJson, RejectsMalformedTasks) {
  EXPECT_THROW(task_from_json(nlohmann::json::object()), InputError);
  auto j = to_json(build_task(iota_tokens(50), 20, 0.5, {"x", {7, 8}, {9}}, {}, 0));
  j["needle_span"] = {5, 500};
  EXPECT_THROW(task_from_json(j), InputError);
  EXPECT_THROW(read_tasks_jsonl("/nonexistent/tasks.jsonl"), IoError);
}

TEST(LoadCorpus, JsonAndBinaryForms) {
  const auto jpath = temp_file("corpus.json");
  std::ofstream(jpath) << "  [5, 6, 7, 70000]";
  EXPECT_EQ(load_corpus(jpath.string()), (Tokens{5, 6, 7, 70000}));

  const auto bpath = temp_file("corpus.bin");
  {
    std::ofstream out(bpath, std::ios::binary);
    const unsigned char bytes[] = {5, 0, 0, 0, 0x70, 0x11, 0x01, 0x00};
    out.write(reinterpret_cast<const char*>(bytes), sizeof bytes);
  }
  EXPECT_EQ(load_corpus(bpath.string()), (Tokens{5, 0x011170}));

  std::ofstream(bpath, std::ios::binary) << "abc";
  EXPECT_THROW(load_corpus(bpath.string()), InputError);
  std::ofstream(jpath) << "[1, \"x\"]";
  EXPECT_THROW(load_corpus(jpath.string()), InputError);
  EXPECT_THROW(load_corpus("/nonexistent/corpus"), IoError);
  std::filesystem::remove(jpath);
  std::filesystem::remove(bpath);
}
