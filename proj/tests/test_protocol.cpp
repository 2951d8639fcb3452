#include <gtest/gtest.h>

#include <chrono>
#include <random>
#include <sstream>

#include "rhead/conformance.hpp"
#include "rhead/protocol.hpp"
#include "rhead/subprocess.hpp"
#include "rhead/toy_runner.hpp"

using namespace rhead;
using namespace std::chrono_literals;

namespace {

const std::string kCli = RHEAD_CLI_PATH;
const std::string kFake = FAKE_RUNNER_PATH;

std::shared_ptr<const ToyModel> shared_toy() {
  static const auto m = std::make_shared<const ToyModel>(construct_copy_circuit(ToyConfig{}));
  return m;
}

const std::vector<HaystackTask>& toy_tasks() {
  static const auto tasks = [] {
    const ToyConfig cfg;
    return build_grid(toy_grid(cfg), toy_corpus(cfg));
  }();
  return tasks;
}

GenerateRequest traced(const Tokens& prompt, std::size_t n, HeadMask mask = {}) {
  return {prompt, n, std::move(mask), TraceMode::argmax, 0, false};
}

}  // namespace

TEST(Wire, MinimalRequestRoundTrips) {
  const GenerateRequest r{{1, 2}, 1, {}, TraceMode::none, 0, false};
  EXPECT_EQ(decode_generate_request(encode(r), 1), r);
}

TEST(Wire, RequestRoundTripProperty) {
  std::mt19937_64 rng(9);
  for (int i = 0; i < 200; ++i) {
    GenerateRequest r;
    r.prompt.resize(rng() % 20);
    for (auto& t : r.prompt) t = static_cast<TokenId>(rng() % 50000);
    r.max_new_tokens = rng() % 30;
    for (std::size_t k = rng() % 4; k > 0; --k) r.head_mask.push_back({static_cast<int>(rng() % 40), static_cast<int>(rng() % 40)});
    r.trace = static_cast<TraceMode>(rng() % 3);
    if (r.trace == TraceMode::topk) r.topk = 1 + rng() % 5;
    r.stop_at_eos = rng() % 2;
    ASSERT_EQ(decode_generate_request(encode(r), 1), r);
  }
}

TEST(Wire, ResponseRoundTripProperty) {
  std::mt19937_64 rng(10);
  for (int i = 0; i < 200; ++i) {
    GenerateResponse r;
    const std::size_t n = rng() % 8;
    const bool with_trace = rng() % 2, with_topk = rng() % 2;
    for (std::size_t t = 0; t < n; ++t) {
      r.tokens.push_back(static_cast<TokenId>(rng() % 1000));
      if (!with_trace) continue;
      StepTrace s{r.tokens.back(), {}, {}};
      for (int h = 0; h < 6; ++h) s.argmax.push_back(static_cast<Position>(rng() % 100));
      if (with_topk) {
        for (int h = 0; h < 6; ++h) s.topk.push_back({s.argmax[h], static_cast<Position>(rng() % 100)});
      }
      r.trace.push_back(std::move(s));
    }
    ASSERT_EQ(decode_generate_response(encode(r), 1), r);
  }
}

TEST(Wire, InfoRoundTrip) {
  RunnerInfo i{"m", 32, 32, 4096, 2, AttentionReport::pre_softmax_argmax, kZeroHeadOutput, true};
  EXPECT_EQ(decode_info(encode(i), 1), i);
  EXPECT_EQ(decode_info(encode(i), 1).shape(), (Shape{32, 32}));
  i.eos_token.reset();
  EXPECT_EQ(decode_info(encode(i), 1), i);
}

TEST(Wire, TraceLengthMismatchIsProtocolError) {
  EXPECT_THROW(decode_generate_response(R"({"tokens":[1,2],"trace":[[0,0]]})", 3), ProtocolError);
  try {
    decode_generate_response(R"({"tokens":[1,2],"trace":[[0,0]]})", 3);
  } catch (const ProtocolError& e) {
    EXPECT_NE(std::string(e.what()).find("3"), std::string::npos);
  }
}

TEST(Wire, MalformedFramesAreProtocolErrors) {
  EXPECT_THROW(decode_generate_response("not json", 1), ProtocolError);
  EXPECT_THROW(decode_generate_response("[1,2]", 1), ProtocolError);
  EXPECT_THROW(decode_generate_response(R"({"tokens":"x"})", 1), ProtocolError);
  EXPECT_THROW(decode_generate_request(R"({"op":"generate","prompt":[1],"max_new_tokens":1,"trace":"full"})", 1), ProtocolError);
  EXPECT_THROW(decode_generate_request(R"({"op":"generate","prompt":[1],"max_new_tokens":1,"head_mask":[[1]]})", 1), ProtocolError);
  EXPECT_THROW(decode_generate_request(R"({"op":"info"})", 1), ProtocolError);
  EXPECT_THROW(decode_info(R"({"model_id":"m"})", 1), ProtocolError);
}

TEST(Wire, ErrorFramesRaiseRunnerErrors) {
  EXPECT_THROW(decode_generate_response(encode_error("boom", "input_error"), 1), RunnerError);
  EXPECT_THROW(decode_generate_response(encode_error("nope", "unsupported_op"), 1), UnsupportedOpError);
}

TEST(Wire, ValidateResponseChecksShapeAndPositions) {
  const auto req = traced({5, 6, 7}, 2);
  GenerateResponse ok{{5, 6}, {{5, {0, 2}, {}}, {6, {3, 1}, {}}}};
  EXPECT_NO_THROW(validate_response(ok, req, {1, 2}, 1));
  auto bad = ok;
  bad.trace[0].argmax[1] = 3;  // step 0 sees 3 tokens
  EXPECT_THROW(validate_response(bad, req, {1, 2}, 1), ProtocolError);
  EXPECT_THROW(validate_response(ok, req, {2, 2}, 1), ProtocolError);
  bad = ok;
  bad.tokens.pop_back();
  bad.trace.pop_back();
  EXPECT_THROW(validate_response(bad, req, {1, 2}, 1), ProtocolError);
  auto eos = req;
  eos.stop_at_eos = true;
  EXPECT_NO_THROW(validate_response(bad, eos, {1, 2}, 1));
}

TEST(Wire, TraceWireSizeIsIndependentOfContextLength) {
  ToyRunner runner(shared_toy());
  const auto& short_task = toy_tasks()[0];
  const auto& long_task = toy_tasks()[89];
  const auto a = encode(runner.generate(traced(short_task.prompt, 6)));
  const auto b = encode(runner.generate(traced(long_task.prompt, 6)));
  // positions gain at most one digit; nothing scales with the context
  EXPECT_LT(b.size(), a.size() + 6 * 8 + 16);
}

TEST(Server, RejectsOutOfShapeMaskWithErrorFrame) {
  ToyRunner runner(shared_toy());
  const auto reply = handle_frame(runner, encode(GenerateRequest{{0, 30}, 1, {{99, 0}}, TraceMode::none, 0, false}), 1);
  const auto j = nlohmann::json::parse(reply);
  ASSERT_TRUE(j.contains("error"));
  EXPECT_EQ(j["kind"], "input_error");
}

TEST(Server, UnknownOpAndGarbage) {
  ToyRunner runner(shared_toy());
  EXPECT_EQ(nlohmann::json::parse(handle_frame(runner, R"({"op":"fly"})", 1))["kind"], "unsupported_op");
  EXPECT_TRUE(nlohmann::json::parse(handle_frame(runner, "{{{", 1)).contains("error"));
  EXPECT_EQ(nlohmann::json::parse(handle_frame(runner, R"({"op":"tokenize","text":"x"})", 1))["kind"], "unsupported_op");
}

TEST(Server, ServeAnswersEveryLineInOrder) {
  ToyRunner runner(shared_toy());
  std::istringstream in(encode_info_request() + "\n\n" + encode(traced({0, 30, 31}, 2)) + "\n" + R"({"op":"bad"})" + "\n");
  std::ostringstream out;
  serve(runner, in, out);
  std::istringstream lines(out.str());
  std::string l1, l2, l3, extra;
  ASSERT_TRUE(std::getline(lines, l1) && std::getline(lines, l2) && std::getline(lines, l3));
  EXPECT_FALSE(std::getline(lines, extra));
  EXPECT_EQ(decode_info(l1, 1).shape(), (Shape{2, 4}));
  EXPECT_EQ(decode_generate_response(l2, 2).tokens.size(), 2u);
  EXPECT_TRUE(nlohmann::json::parse(l3).contains("error"));
}

TEST(ToyRunnerTest, InfoHandshake) {
  ToyRunner runner(shared_toy());
  const auto info = runner.info();
  EXPECT_EQ(info.shape(), (Shape{2, 4}));
  EXPECT_EQ(info.mask_semantics, kZeroHeadOutput);
  EXPECT_FALSE(info.text_ops);
  EXPECT_EQ(info.model_id, "toy-copy-circuit/V64-P512-H4");
  EXPECT_THROW(runner.tokenize("x"), UnsupportedOpError);
  EXPECT_THROW(runner.detokenize(Tokens{1}), UnsupportedOpError);
}

TEST(ToyRunnerTest, PassesConformance) {
  ToyRunner runner(shared_toy());
  for (const auto& c : run_conformance(runner, toy_tasks()[0].prompt)) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Subprocess, ServeToyHandshakeAndEquivalence) {
  SubprocessRunner remote(kCli + " serve-toy", 30s);
  ToyRunner local(shared_toy());
  EXPECT_EQ(remote.info(), local.info());
  for (std::size_t i = 0; i < toy_tasks().size(); i += 11) {
    const auto& t = toy_tasks()[i];
    const std::size_t n = t.needle_span.size();
    for (const HeadMask& mask : {HeadMask{}, HeadMask{{1, 0}}, HeadMask{{0, 2}, {1, 3}}}) {
      const auto req = traced(t.prompt, n, mask);
      EXPECT_EQ(remote.generate(req), local.generate(req)) << "task " << i;
    }
  }
  const GenerateRequest tk{toy_tasks()[3].prompt, 4, {}, TraceMode::topk, 3, false};
  EXPECT_EQ(remote.generate(tk), local.generate(tk));
}

TEST(Subprocess, ServeToyErrorsAndTextOps) {
  SubprocessRunner remote(kCli + " serve-toy", 30s);
  EXPECT_THROW(remote.generate(GenerateRequest{{0, 30}, 1, {{99, 0}}, TraceMode::none, 0, false}), RunnerError);
  EXPECT_THROW(remote.tokenize("x"), UnsupportedOpError);
  // the runner keeps serving after an error frame
  EXPECT_EQ(remote.generate(traced({0, 30}, 1)).tokens.size(), 1u);
}

TEST(Subprocess, ServeToyPassesConformance) {
  SubprocessRunner remote(kCli + " serve-toy", 30s);
  for (const auto& c : run_conformance(remote, toy_tasks()[0].prompt)) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Subprocess, FakeRunnerTextOpsAndConformance) {
  SubprocessRunner remote(kFake + " ok", 10s);
  EXPECT_TRUE(remote.tokenize("").empty());
  const std::string text = "Needle in a haystack, 42!";
  EXPECT_EQ(remote.detokenize(remote.tokenize(text)), text);
  for (const auto& c : run_conformance(remote, {72, 105, 33, 10})) EXPECT_TRUE(c.passed) << c.name << ": " << c.detail;
}

TEST(Subprocess, CrashIsReportedNotHung) {
  SubprocessRunner remote(kFake + " crash", 10s);
  const auto start = std::chrono::steady_clock::now();
  try {
    remote.generate(traced({1, 2}, 1));
    FAIL() << "expected RunnerCrash";
  } catch (const RunnerCrash& e) {
    EXPECT_NE(std::string(e.what()).find("exit status 3"), std::string::npos) << e.what();
  }
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
  EXPECT_THROW(remote.generate(traced({1, 2}, 1)), RunnerCrash);
}

TEST(Subprocess, KilledRunnerIsACrash) {
  SubprocessRunner remote(kCli + " serve-toy", 10s);
  ::kill(-remote.pid(), SIGKILL);  // the runner and its shell
  EXPECT_THROW(remote.generate(traced({0, 30}, 1)), RunnerCrash);
}

TEST(Subprocess, ShellCommandThatExitsMidRequest) {
  // answers the handshake, then dies on the next request
  const std::string cmd =
      "read l; echo '{\"model_id\":\"sh\",\"num_layers\":2,\"num_heads\":2,\"max_context\":64,"
      "\"mask_semantics\":\"zero_head_output\"}'; read l; exit 1";
  SubprocessRunner remote(cmd, 10s);
  try {
    remote.generate(traced({1}, 1));
    FAIL() << "expected RunnerCrash";
  } catch (const RunnerCrash& e) {
    EXPECT_NE(std::string(e.what()).find("exit status 1"), std::string::npos) << e.what();
  }
}

TEST(Subprocess, TimeoutIsDistinctFromCrash) {
  SubprocessRunner remote(kFake + " hang", 300ms);
  const auto start = std::chrono::steady_clock::now();
  EXPECT_THROW(remote.generate(traced({1, 2}, 1)), RunnerTimeout);
  EXPECT_LT(std::chrono::steady_clock::now() - start, 5s);
}

TEST(Subprocess, MalformedRepliesAreProtocolErrors) {
  {
    SubprocessRunner remote(kFake + " bad-trace", 10s);
    EXPECT_THROW(remote.generate(traced({1, 2}, 3)), ProtocolError);
  }
  {
    SubprocessRunner remote(kFake + " bad-position", 10s);
    EXPECT_THROW(remote.generate(traced({1, 2}, 3)), ProtocolError);
  }
  {
    SubprocessRunner remote(kFake + " garbage", 10s);
    EXPECT_THROW(remote.generate(traced({1, 2}, 3)), ProtocolError);
  }
}

TEST(Subprocess, HandshakeFailures) {
  EXPECT_THROW(SubprocessRunner(kFake + " uniform-mask", 10s), RunnerError);
  EXPECT_THROW(SubprocessRunner(kFake + " silent", 10s), RunnerCrash);
  EXPECT_THROW(SubprocessRunner("/nonexistent/runner-binary", 10s), RunnerCrash);
}

TEST(Subprocess, ConformanceFlagsBrokenRunners) {
  SubprocessRunner remote(kFake + " bad-position", 10s);
  const auto checks = run_conformance(remote, {1, 2, 3});
  EXPECT_TRUE(std::any_of(checks.begin(), checks.end(), [](const ConformanceCheck& c) { return !c.passed; }));
}
