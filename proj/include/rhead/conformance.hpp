#pragma once

// Behavioural checks any runner must pass before the core drives it.

#include <functional>
#include <string>
#include <vector>

#include "rhead/error.hpp"
#include "rhead/protocol.hpp"

namespace rhead {

struct ConformanceCheck {
  std::string name;
  bool passed = false;
  std::string detail;
};

// `prompt` must be valid token ids for the runner's vocabulary.
inline std::vector<ConformanceCheck> run_conformance(Runner& runner, const Tokens& prompt, std::size_t max_new = 3) {
  std::vector<ConformanceCheck> out;
  auto check = [&](const std::string& name, const std::function<std::string()>& body) {
    ConformanceCheck c{name, false, {}};
    try {
      c.detail = body();
      c.passed = c.detail.empty();
    } catch (const std::exception& e) {
      c.detail = e.what();
    }
    out.push_back(std::move(c));
  };

  RunnerInfo info;
  check("info handshake", [&]() -> std::string {
    info = runner.info();
    validate_info(info);
    return {};
  });
  if (!out.back().passed) return out;
  const Shape shape = info.shape();
  const GenerateRequest traced{prompt, max_new, {}, TraceMode::argmax, 0, false};

  GenerateResponse first;
  check("generate with argmax trace", [&]() -> std::string {
    first = runner.generate(traced);
    validate_response(first, traced, shape, 0);
    return {};
  });
  check("greedy decode is repeatable", [&]() -> std::string {
    const auto again = runner.generate(traced);
    return again == first ? "" : "second identical request produced a different response";
  });
  check("trace none returns tokens only", [&]() -> std::string {
    const GenerateRequest plain{prompt, max_new, {}, TraceMode::none, 0, false};
    const auto r = runner.generate(plain);
    if (!r.trace.empty()) return "trace present although none was requested";
    return r.tokens == first.tokens ? "" : "tokens differ from the traced request";
  });
  check("topk trace covers every head", [&]() -> std::string {
    const GenerateRequest tk{prompt, max_new, {}, TraceMode::topk, 2, false};
    const auto r = runner.generate(tk);
    validate_response(r, tk, shape, 0);
    for (std::size_t t = 0; t < r.trace.size(); ++t) {
      for (std::size_t h = 0; h < r.trace[t].topk.size(); ++h) {
        const auto& l = r.trace[t].topk[h];
        if (l.empty() || l.front() != r.trace[t].argmax[h]) return "topk list does not start at the argmax";
      }
    }
    return {};
  });
  check("max_new_tokens = 0 yields nothing", [&]() -> std::string {
    const GenerateRequest none{prompt, 0, {}, TraceMode::argmax, 0, false};
    const auto r = runner.generate(none);
    return r.tokens.empty() && r.trace.empty() ? "" : "non-empty response";
  });
  check("out-of-range mask is rejected", [&]() -> std::string {
    const GenerateRequest bad{prompt, 1, {{shape.layers, 0}}, TraceMode::none, 0, false};
    try {
      runner.generate(bad);
    } catch (const RunnerError&) {
      return {};
    } catch (const InputError&) {
      return {};
    }
    return "runner accepted a head outside its shape";
  });
  check("runner still answers after an error", [&]() -> std::string {
    return runner.generate(traced) == first ? "" : "response changed after an error frame";
  });
  check("text ops match declared capability", [&]() -> std::string {
    if (!info.text_ops) {
      try {
        runner.tokenize("x");
      } catch (const UnsupportedOpError&) {
        return {};
      }
      return "runner without text_ops accepted tokenize";
    }
    if (!runner.tokenize("").empty()) return "tokenize(\"\") is not empty";
    const std::string probe = "The best thing to do";
    const auto ids = runner.tokenize(probe);
    return runner.detokenize(ids) == probe ? "" : "detokenize(tokenize(t)) != t on plain ASCII";
  });
  return out;
}

}  // namespace rhead
