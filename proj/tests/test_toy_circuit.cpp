#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <set>
#include <tuple>

#include "oracles.hpp"
#include "rhead/toy_circuit.hpp"

using namespace rhead;

namespace {

const ToyModel& toy() {
  static const ToyModel m = construct_copy_circuit(ToyConfig{});
  return m;
}

const std::vector<HaystackTask>& toy_tasks() {
  static const std::vector<HaystackTask> tasks = [] {
    const ToyConfig cfg;
    return build_grid(toy_grid(cfg), toy_corpus(cfg));
  }();
  return tasks;
}

// [bos] haystack.. [M p1 p2 p3] haystack.. [M]
Tokens marker_prompt(std::size_t before, std::size_t after, const Tokens& payload) {
  const ToyConfig cfg;
  const auto alpha = ToyAlphabet::of(cfg);
  Tokens p = {cfg.bos};
  TokenId h = alpha.haystack_begin;
  auto filler = [&](std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      p.push_back(h);
      h = h + 1 == alpha.haystack_end ? alpha.haystack_begin : h + 1;
    }
  };
  filler(before);
  p.push_back(cfg.marker);
  p.insert(p.end(), payload.begin(), payload.end());
  filler(after);
  p.push_back(cfg.marker);
  return p;
}

}  // namespace

TEST(ToyConfig, Validation) {
  EXPECT_NO_THROW(ToyConfig{}.validate());
  ToyConfig c;
  c.vocab_size = 7;
  EXPECT_THROW(construct_copy_circuit(c), InputError);
  c = {};
  c.max_positions = 15;
  EXPECT_THROW(construct_copy_circuit(c), InputError);
  c = {};
  c.heads_per_layer = 0;
  EXPECT_THROW(construct_copy_circuit(c), InputError);
  c = {};
  c.sharpness = 0;
  EXPECT_THROW(construct_copy_circuit(c), InputError);
  c = {};
  c.marker = c.bos;
  EXPECT_THROW(construct_copy_circuit(c), InputError);
}

TEST(ToyModel, ShapeAndNullHeads) {
  const auto& m = toy();
  EXPECT_EQ(m.shape(), (Shape{2, 4}));
  EXPECT_EQ(m.designed_head, (HeadId{1, 0}));
  const auto nulls = m.null_heads();
  EXPECT_EQ(nulls.size(), 6u);
  EXPECT_EQ(std::count(nulls.begin(), nulls.end(), m.designed_head), 0);
  EXPECT_EQ(std::count(nulls.begin(), nulls.end(), m.support_head), 0);
}

TEST(ToyDecode, CopiesPayloadAfterMarker) {
  const Tokens payload = {10, 11, 12};
  const Tokens prompt = marker_prompt(20, 15, payload);
  const auto r = greedy_decode_with_trace(toy(), prompt, 3);
  EXPECT_EQ(r.tokens, payload);
}

TEST(ToyDecode, DesignedHeadArgmaxWalksTheNeedle) {
  const Tokens payload = {10, 11, 12, 13};
  const Tokens prompt = marker_prompt(20, 15, payload);
  const std::size_t needle_start = 22;
  ASSERT_EQ(prompt[needle_start], 10);
  const auto r = greedy_decode_with_trace(toy(), prompt, 4);
  const Shape s = toy().shape();
  for (std::size_t t = 0; t < 4; ++t) {
    EXPECT_EQ(r.trace[t].at(s, toy().designed_head), static_cast<Position>(needle_start + t));
    EXPECT_EQ(r.trace[t].emitted, r.tokens[t]);
  }
}

TEST(ToyDecode, MaskingDesignedHeadBreaksCopy) {
  const Tokens payload = {10, 11, 12};
  const auto r = greedy_decode_with_trace(toy(), marker_prompt(20, 15, payload), 3, {toy().designed_head});
  EXPECT_NE(r.tokens, payload);
  // masked heads keep a defined trace
  ASSERT_EQ(r.trace.size(), 3u);
  EXPECT_EQ(r.trace[0].argmax.size(), 8u);
}

TEST(ToyDecode, ZeroNewTokens) {
  const auto r = greedy_decode_with_trace(toy(), {0, 30}, 0);
  EXPECT_TRUE(r.tokens.empty());
  EXPECT_TRUE(r.trace.empty());
}

TEST(ToyDecode, RejectsContextOverflowAndBadInput) {
  EXPECT_THROW(greedy_decode_with_trace(toy(), Tokens(510, 30), 3), InputError);
  EXPECT_NO_THROW(greedy_decode_with_trace(toy(), Tokens(509, 30), 3));
  EXPECT_THROW(greedy_decode_with_trace(toy(), {}, 1), InputError);
  EXPECT_THROW(greedy_decode_with_trace(toy(), {0, 64}, 1), InputError);
  EXPECT_THROW(greedy_decode_with_trace(toy(), {0, 1}, 1, {{2, 0}}), InputError);
}

TEST(ToyDecode, EveryNullHeadPairLeavesOutputUnchanged) {
  const auto& task = toy_tasks()[37];
  const std::size_t n = task.needle_span.size();
  const auto base = greedy_decode_with_trace(toy(), task.prompt, n);
  const auto nulls = toy().null_heads();
  for (std::size_t a = 0; a < nulls.size(); ++a) {
    for (std::size_t b = a + 1; b < nulls.size(); ++b) {
      EXPECT_EQ(greedy_decode_with_trace(toy(), task.prompt, n, {nulls[a], nulls[b]}), base)
          << nulls[a].str() << " + " << nulls[b].str();
    }
  }
}

TEST(ToyMask, EmptyMaskIsBitwiseIdentity) {
  const auto& task = toy_tasks()[5];
  ToyDecoder plain(ToyModelView{&toy(), std::vector<char>(8, 0)});
  ToyDecoder masked(apply_head_mask(toy(), {}));
  for (TokenId t : task.prompt) {
    plain.push(t);
    masked.push(t);
    const auto a = plain.logits(), b = masked.logits();
    ASSERT_EQ(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)), 0);
    ASSERT_EQ(plain.argmax(), masked.argmax());
  }
}

TEST(ToyMask, AllHeadsMaskedLeavesOnlyDirectPath) {
  HeadMask all;
  for (int l = 0; l < 2; ++l) {
    for (int h = 0; h < 4; ++h) all.push_back({l, h});
  }
  std::vector<double> first;
  for (std::size_t i : {0u, 17u, 44u, 89u}) {
    const auto& task = toy_tasks()[i];
    ToyDecoder dec(apply_head_mask(toy(), all));
    for (TokenId t : task.prompt) dec.push(t);
    const auto logits = dec.logits();
    if (first.empty()) first = logits;
    EXPECT_EQ(logits, first);
  }
  // direct path: every token maps to the fallback id with weight 0.5
  EXPECT_EQ(argmax_token(first), ToyConfig{}.fallback);
  EXPECT_EQ(first[static_cast<std::size_t>(ToyConfig{}.fallback)], 0.5);
}

TEST(ToyAttention, RowsAreCausalDistributions) {
  for (std::size_t i : {0u, 45u, 89u}) {
    const auto& task = toy_tasks()[i];
    ToyDecoder dec(apply_head_mask(toy(), {}), true);
    for (TokenId t : task.prompt) dec.push(t);
    for (int l = 0; l < 2; ++l) {
      for (int h = 0; h < 4; ++h) {
        for (std::size_t pos = 0; pos < task.prompt.size(); pos += 7) {
          const auto& row = dec.row({l, h}, pos);
          ASSERT_EQ(row.size(), pos + 1);  // no entries past the query
          double sum = 0.0;
          for (double a : row) {
            EXPECT_GE(a, 0.0);
            sum += a;
          }
          EXPECT_NEAR(sum, 1.0, 1e-9);
        }
      }
    }
  }
}

// Deviation from one-hot for the support head at every prompt position and
// for the designed head at every decode query, on every toy grid prompt.
TEST(ToyAttention, ConstructedHeadsAreOneHotAtDefaultSharpness) {
  const auto& m = toy();
  double worst = 0.0;
  for (const auto& task : toy_tasks()) {
    const auto decoded = greedy_decode_with_trace(m, task.prompt, task.needle_span.size());
    ToyDecoder dec(apply_head_mask(m, {}), true);
    Tokens seq = task.prompt;
    seq.insert(seq.end(), decoded.tokens.begin(), decoded.tokens.end() - 1);
    for (TokenId t : seq) dec.push(t);
    auto deviation = [](const std::vector<double>& row) {
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      double d = 0.0;
      for (std::size_t j = 0; j < row.size(); ++j) d = std::max(d, std::abs(row[j] - (j == best ? 1.0 : 0.0)));
      return d;
    };
    for (std::size_t pos = 1; pos < seq.size(); ++pos) {
      const auto& row = dec.row(m.support_head, pos);
      EXPECT_EQ(std::max_element(row.begin(), row.end()) - row.begin(), static_cast<std::ptrdiff_t>(pos - 1));
      worst = std::max(worst, deviation(row));
    }
    for (std::size_t pos = task.prompt.size() - 1; pos < seq.size(); ++pos) {
      worst = std::max(worst, deviation(dec.row(m.designed_head, pos)));
    }
  }
  EXPECT_LE(worst, 1e-6);
}

// The forward pass against the induction rule it is built to realize.
TEST(ToyOracle, DecodeMatchesInductionRuleOnEveryGridTask) {
  const auto& m = toy();
  const Shape s = m.shape();
  for (const auto& task : toy_tasks()) {
    const std::size_t n = task.needle_span.size();
    const auto got = greedy_decode_with_trace(m, task.prompt, n);
    const auto want = oracle::induction_rule(task.prompt, n, m.config.fallback);
    ASSERT_EQ(got.tokens, want.tokens) << task.needle_id << " len " << task.context_length << " depth " << task.depth;
    EXPECT_EQ(got.tokens, task.needle());
    for (std::size_t t = 0; t < n; ++t) {
      ASSERT_TRUE(want.attended[t].has_value());
      EXPECT_EQ(got.trace[t].at(s, m.designed_head), *want.attended[t]);
    }
  }
}

TEST(ToyOracle, BrokenCircuitFallsBackOnEveryGridTask) {
  const auto& m = toy();
  for (std::size_t i = 0; i < toy_tasks().size(); i += 3) {
    const auto& task = toy_tasks()[i];
    const std::size_t n = task.needle_span.size();
    const auto want = oracle::induction_rule(task.prompt, n, m.config.fallback, false);
    EXPECT_EQ(greedy_decode_with_trace(m, task.prompt, n, {m.designed_head}).tokens, want.tokens);
    EXPECT_EQ(greedy_decode_with_trace(m, task.prompt, n, {m.support_head}).tokens, want.tokens);
  }
}

TEST(ToyOracle, NonDefaultConfigsStillCopy) {
  for (auto [v, p, h] : {std::tuple{32, 128, 1}, std::tuple{96, 300, 3}, std::tuple{64, 512, 8}}) {
    ToyConfig cfg;
    cfg.vocab_size = v;
    cfg.max_positions = p;
    cfg.heads_per_layer = h;
    const auto m = construct_copy_circuit(cfg);
    const auto tasks = build_grid(toy_grid(cfg), toy_corpus(cfg));
    for (std::size_t i = 0; i < tasks.size(); i += 7) {
      const auto& t = tasks[i];
      EXPECT_EQ(greedy_decode_with_trace(m, t.prompt, t.needle_span.size()).tokens, t.needle()) << v << "/" << p << "/" << h;
    }
  }
}

TEST(ToyGrid, FitsContextAndUsesDisjointAlphabets) {
  const ToyConfig cfg;
  const auto alpha = ToyAlphabet::of(cfg);
  const auto grid = toy_grid(cfg);
  EXPECT_EQ(grid.size(), 90u);
  for (const auto& n : grid.needles) {
    std::set<TokenId> uniq(n.needle.begin(), n.needle.end());
    EXPECT_EQ(uniq.size(), n.needle.size());
    for (TokenId t : n.needle) {
      EXPECT_GE(t, alpha.needle_begin);
      EXPECT_LT(t, alpha.needle_end);
    }
  }
  for (TokenId t : toy_corpus(cfg)) {
    EXPECT_GE(t, alpha.haystack_begin);
    EXPECT_LT(t, alpha.haystack_end);
  }
  for (const auto& t : toy_tasks()) {
    EXPECT_LE(t.prompt.size() + t.needle_span.size(), static_cast<std::size_t>(cfg.max_positions));
  }
}

TEST(ToyWeights, ExportImportRoundTrip) {
  const auto j = to_json(toy());
  const auto back = toy_model_from_json(nlohmann::json::parse(j.dump()));
  EXPECT_EQ(back.config, toy().config);
  EXPECT_EQ(back.layers, toy().layers);
  EXPECT_EQ(back.w_u, toy().w_u);
  for (std::size_t i : {3u, 50u}) {
    const auto& t = toy_tasks()[i];
    EXPECT_EQ(greedy_decode_with_trace(back, t.prompt, t.needle_span.size()),
              greedy_decode_with_trace(toy(), t.prompt, t.needle_span.size()));
  }
}

TEST(ToyWeights, ImportRejectsInconsistentDimensions) {
  auto j = to_json(construct_copy_circuit(ToyConfig{.vocab_size = 16, .max_positions = 32, .heads_per_layer = 1}));
  auto bad = j;
  bad["w_u"].erase(0);
  EXPECT_THROW(toy_model_from_json(bad), InputError);
  bad = j;
  bad["schema"] = "other";
  EXPECT_THROW(toy_model_from_json(bad), InputError);
  EXPECT_THROW(toy_model_from_json(nlohmann::json::object()), InputError);
}
