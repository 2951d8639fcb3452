#pragma once

// JSON-lines runner protocol: one frame per line in each direction.
//
//   -> {"op":"info"}
//   <- {"model_id":..., "num_layers":L, "num_heads":H, "max_context":N,
//       "eos_token":id|null, "attention_report":"post_softmax_argmax",
//       "mask_semantics":"zero_head_output", "text_ops":bool}
//   -> {"op":"generate", "prompt":[...], "max_new_tokens":n,
//       "head_mask":[[l,h],...], "trace":"none"|"argmax"|"topk", "topk":k,
//       "stop_at_eos":bool}
//   <- {"tokens":[...], "trace":[[pos per head, row-major]...],
//       "topk":[[[pos,...] per head]...]}
//   -> {"op":"tokenize", "text":"..."}        <- {"tokens":[...]}
//   -> {"op":"detokenize", "tokens":[...]}    <- {"text":"..."}
//   <- {"error":"reason", "kind":"..."}       on any failure
//
// Unknown fields are ignored on input.

#include <cstdint>
#include <istream>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "rhead/error.hpp"
#include "rhead/scoring.hpp"
#include "rhead/types.hpp"

namespace rhead {

inline constexpr const char* kZeroHeadOutput = "zero_head_output";

enum class AttentionReport { post_softmax_argmax, pre_softmax_argmax };
enum class TraceMode { none, argmax, topk };

struct RunnerInfo {
  std::string model_id;
  int num_layers = 0;
  int num_heads = 0;
  std::size_t max_context = 0;
  std::optional<TokenId> eos_token;
  AttentionReport attention_report = AttentionReport::post_softmax_argmax;
  std::string mask_semantics = kZeroHeadOutput;
  bool text_ops = false;

  Shape shape() const { return {num_layers, num_heads}; }
  friend bool operator==(const RunnerInfo&, const RunnerInfo&) = default;
};

struct GenerateRequest {
  Tokens prompt;
  std::size_t max_new_tokens = 0;
  HeadMask head_mask;
  TraceMode trace = TraceMode::none;
  std::size_t topk = 0;
  bool stop_at_eos = false;
  friend bool operator==(const GenerateRequest&, const GenerateRequest&) = default;
};

struct GenerateResponse {
  Tokens tokens;
  std::vector<StepTrace> trace;  // empty when the request asked for none
  friend bool operator==(const GenerateResponse&, const GenerateResponse&) = default;
};

// A model reachable by the core: in-process or over the wire.
class Runner {
 public:
  virtual ~Runner() = default;
  virtual RunnerInfo info() = 0;
  virtual GenerateResponse generate(const GenerateRequest& req) = 0;
  virtual Tokens tokenize(std::string_view text) = 0;
  virtual std::string detokenize(std::span<const TokenId> tokens) = 0;
};

// The core only drives runners that zero a masked head's output.
inline void validate_info(const RunnerInfo& info) {
  if (info.num_layers < 1 || info.num_heads < 1) throw RunnerError("runner reports an empty head grid");
  if (info.max_context < 1) throw RunnerError("runner reports max_context < 1");
  if (info.mask_semantics != kZeroHeadOutput) {
    throw RunnerError("refusing runner with mask semantics '" + info.mask_semantics + "'; expected " + kZeroHeadOutput);
  }
}

// ---------------------------------------------------------------------------
// frames

namespace wire {

inline nlohmann::json parse(std::string_view line, std::size_t lineno) {
  nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
  if (j.is_discarded()) throw ProtocolError(lineno, "invalid JSON");
  if (!j.is_object()) throw ProtocolError(lineno, "frame is not a JSON object");
  return j;
}

template <class T>
T field(const nlohmann::json& j, const char* key, std::size_t lineno) {
  auto it = j.find(key);
  if (it == j.end()) throw ProtocolError(lineno, std::string("missing field '") + key + "'");
  try {
    return it->get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ProtocolError(lineno, std::string("field '") + key + "' has the wrong type");
  }
}

inline const char* to_string(AttentionReport r) {
  return r == AttentionReport::post_softmax_argmax ? "post_softmax_argmax" : "pre_softmax_argmax";
}

inline const char* to_string(TraceMode m) {
  switch (m) {
    case TraceMode::none: return "none";
    case TraceMode::argmax: return "argmax";
    case TraceMode::topk: return "topk";
  }
  return "none";
}

// An error frame from the runner becomes a RunnerError (or the more specific
// UnsupportedOpError).
inline void raise_if_error(const nlohmann::json& j) {
  auto it = j.find("error");
  if (it == j.end()) return;
  const std::string reason = it->is_string() ? it->get<std::string>() : it->dump();
  if (j.value("kind", std::string{}) == "unsupported_op") throw UnsupportedOpError(reason);
  throw RunnerError("runner error: " + reason);
}

}  // namespace wire

inline std::string encode_error(std::string_view reason, std::string_view kind) {
  return nlohmann::json{{"error", reason}, {"kind", kind}}.dump();
}

inline std::string encode_info_request() { return R"({"op":"info"})"; }

inline std::string encode(const RunnerInfo& info) {
  nlohmann::json j{{"model_id", info.model_id},
                   {"num_layers", info.num_layers},
                   {"num_heads", info.num_heads},
                   {"max_context", info.max_context},
                   {"eos_token", nullptr},
                   {"attention_report", wire::to_string(info.attention_report)},
                   {"mask_semantics", info.mask_semantics},
                   {"text_ops", info.text_ops}};
  if (info.eos_token) j["eos_token"] = *info.eos_token;
  return j.dump();
}

inline RunnerInfo decode_info(std::string_view line, std::size_t lineno) {
  const auto j = wire::parse(line, lineno);
  wire::raise_if_error(j);
  RunnerInfo info;
  info.model_id = wire::field<std::string>(j, "model_id", lineno);
  info.num_layers = wire::field<int>(j, "num_layers", lineno);
  info.num_heads = wire::field<int>(j, "num_heads", lineno);
  info.max_context = wire::field<std::size_t>(j, "max_context", lineno);
  if (auto it = j.find("eos_token"); it != j.end() && !it->is_null()) info.eos_token = wire::field<TokenId>(j, "eos_token", lineno);
  const auto report = j.value("attention_report", std::string("post_softmax_argmax"));
  if (report == "post_softmax_argmax") info.attention_report = AttentionReport::post_softmax_argmax;
  else if (report == "pre_softmax_argmax") info.attention_report = AttentionReport::pre_softmax_argmax;
  else throw ProtocolError(lineno, "unknown attention_report '" + report + "'");
  info.mask_semantics = wire::field<std::string>(j, "mask_semantics", lineno);
  info.text_ops = j.value("text_ops", false);
  return info;
}

inline std::string encode(const GenerateRequest& r) {
  nlohmann::json j{{"op", "generate"},
                   {"prompt", r.prompt},
                   {"max_new_tokens", r.max_new_tokens},
                   {"head_mask", heads_to_json(r.head_mask)},
                   {"trace", wire::to_string(r.trace)},
                   {"stop_at_eos", r.stop_at_eos}};
  if (r.trace == TraceMode::topk) j["topk"] = r.topk;
  return j.dump();
}

inline GenerateRequest generate_request_from_json(const nlohmann::json& j, std::size_t lineno) {
  GenerateRequest r;
  r.prompt = wire::field<Tokens>(j, "prompt", lineno);
  r.max_new_tokens = wire::field<std::size_t>(j, "max_new_tokens", lineno);
  if (j.contains("head_mask")) {
    for (const auto& e : j["head_mask"]) {
      if (!e.is_array() || e.size() != 2 || !e[0].is_number_integer() || !e[1].is_number_integer()) {
        throw ProtocolError(lineno, "head_mask entries must be [layer, head]");
      }
      r.head_mask.push_back({e[0].get<int>(), e[1].get<int>()});
    }
  }
  const auto mode = j.value("trace", std::string("none"));
  if (mode == "none") r.trace = TraceMode::none;
  else if (mode == "argmax") r.trace = TraceMode::argmax;
  else if (mode == "topk") {
    r.trace = TraceMode::topk;
    r.topk = wire::field<std::size_t>(j, "topk", lineno);
    if (r.topk == 0) throw ProtocolError(lineno, "topk must be >= 1");
  } else {
    throw ProtocolError(lineno, "unknown trace mode '" + mode + "'");
  }
  r.stop_at_eos = j.value("stop_at_eos", false);
  return r;
}

inline GenerateRequest decode_generate_request(std::string_view line, std::size_t lineno) {
  const auto j = wire::parse(line, lineno);
  if (j.value("op", std::string{}) != "generate") throw ProtocolError(lineno, "expected a generate frame");
  return generate_request_from_json(j, lineno);
}

inline std::string encode(const GenerateResponse& r) {
  nlohmann::json j{{"tokens", r.tokens}};
  if (!r.trace.empty()) {
    auto steps = nlohmann::json::array();
    bool has_topk = false;
    for (const auto& s : r.trace) {
      steps.push_back(s.argmax);
      has_topk = has_topk || !s.topk.empty();
    }
    j["trace"] = std::move(steps);
    if (has_topk) {
      auto tk = nlohmann::json::array();
      for (const auto& s : r.trace) tk.push_back(s.topk);
      j["topk"] = std::move(tk);
    }
  }
  return j.dump();
}

// Structural decode only; see validate_response for the shape checks.
inline GenerateResponse decode_generate_response(std::string_view line, std::size_t lineno) {
  const auto j = wire::parse(line, lineno);
  wire::raise_if_error(j);
  GenerateResponse r;
  r.tokens = wire::field<Tokens>(j, "tokens", lineno);
  if (auto it = j.find("trace"); it != j.end() && !it->is_null()) {
    auto steps = wire::field<std::vector<std::vector<Position>>>(j, "trace", lineno);
    if (steps.size() != r.tokens.size()) {
      throw ProtocolError(lineno, "trace has " + std::to_string(steps.size()) + " steps for " +
                                      std::to_string(r.tokens.size()) + " tokens");
    }
    for (std::size_t i = 0; i < steps.size(); ++i) r.trace.push_back({r.tokens[i], std::move(steps[i]), {}});
    if (auto tk = j.find("topk"); tk != j.end() && !tk->is_null()) {
      auto lists = wire::field<std::vector<std::vector<std::vector<Position>>>>(j, "topk", lineno);
      if (lists.size() != r.trace.size()) throw ProtocolError(lineno, "topk step count differs from trace");
      for (std::size_t i = 0; i < lists.size(); ++i) r.trace[i].topk = std::move(lists[i]);
    }
  }
  return r;
}

inline void validate_response(const GenerateResponse& resp, const GenerateRequest& req, Shape shape, std::size_t lineno) {
  if (resp.tokens.size() > req.max_new_tokens) throw ProtocolError(lineno, "runner emitted more than max_new_tokens");
  if (!req.stop_at_eos && resp.tokens.size() != req.max_new_tokens) {
    throw ProtocolError(lineno, "runner emitted " + std::to_string(resp.tokens.size()) + " tokens, expected " +
                                    std::to_string(req.max_new_tokens));
  }
  if (req.trace == TraceMode::none) return;
  if (resp.trace.size() != resp.tokens.size()) throw ProtocolError(lineno, "trace length differs from token count");
  for (std::size_t t = 0; t < resp.trace.size(); ++t) {
    const auto& s = resp.trace[t];
    if (s.argmax.size() != shape.size()) {
      throw ProtocolError(lineno, "trace step " + std::to_string(t) + " has " + std::to_string(s.argmax.size()) +
                                      " heads, expected " + std::to_string(shape.size()));
    }
    const auto limit = static_cast<Position>(req.prompt.size() + t);
    for (Position p : s.argmax) {
      if (p < 0 || p >= limit) throw ProtocolError(lineno, "trace position " + std::to_string(p) + " out of range at step " + std::to_string(t));
    }
    if (req.trace == TraceMode::topk && s.topk.size() != shape.size()) {
      throw ProtocolError(lineno, "topk step " + std::to_string(t) + " does not cover every head");
    }
  }
}

inline std::string encode_tokenize_request(std::string_view text) {
  return nlohmann::json{{"op", "tokenize"}, {"text", text}}.dump();
}

inline std::string encode_detokenize_request(std::span<const TokenId> tokens) {
  return nlohmann::json{{"op", "detokenize"}, {"tokens", Tokens(tokens.begin(), tokens.end())}}.dump();
}

// ---------------------------------------------------------------------------
// server side

// Answers one frame. Never throws: every failure becomes an error frame.
inline std::string handle_frame(Runner& backend, std::string_view line, std::size_t lineno) {
  try {
    const auto j = wire::parse(line, lineno);
    const auto op = j.value("op", std::string{});
    if (op == "info") return encode(backend.info());
    if (op == "generate") {
      const auto req = generate_request_from_json(j, lineno);
      return encode(backend.generate(req));
    }
    if (op == "tokenize") {
      return nlohmann::json{{"tokens", backend.tokenize(wire::field<std::string>(j, "text", lineno))}}.dump();
    }
    if (op == "detokenize") {
      const auto ids = wire::field<Tokens>(j, "tokens", lineno);
      return nlohmann::json{{"text", backend.detokenize(ids)}}.dump();
    }
    return encode_error("unknown op '" + op + "'", "unsupported_op");
  } catch (const Error& e) {
    return encode_error(e.what(), e.kind());
  } catch (const std::exception& e) {
    return encode_error(e.what(), "internal");
  }
}

// Request loop over a pair of streams; returns at end of input.
inline void serve(Runner& backend, std::istream& in, std::ostream& out) {
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    out << handle_frame(backend, line, lineno) << '\n';
    out.flush();
  }
}

}  // namespace rhead
