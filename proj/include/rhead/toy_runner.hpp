#pragma once

#include <memory>
#include <string>
#include <string_view>

#include "rhead/protocol.hpp"
#include "rhead/toy_circuit.hpp"

namespace rhead {

inline std::string toy_model_id(const ToyConfig& c) {
  return "toy-copy-circuit/V" + std::to_string(c.vocab_size) + "-P" + std::to_string(c.max_positions) + "-H" +
         std::to_string(c.heads_per_layer);
}

// In-process runner over the copy circuit. Safe to share the model between
// instances; each generate call is independent.
class ToyRunner : public Runner {
 public:
  explicit ToyRunner(std::shared_ptr<const ToyModel> model) : model_(std::move(model)) {}
  explicit ToyRunner(const ToyConfig& cfg = {}) : model_(std::make_shared<const ToyModel>(construct_copy_circuit(cfg))) {}

  const ToyModel& model() const { return *model_; }

  RunnerInfo info() override {
    RunnerInfo i;
    i.model_id = toy_model_id(model_->config);
    i.num_layers = model_->shape().layers;
    i.num_heads = model_->shape().heads;
    i.max_context = static_cast<std::size_t>(model_->config.max_positions);
    i.attention_report = AttentionReport::post_softmax_argmax;
    i.mask_semantics = kZeroHeadOutput;
    i.text_ops = false;
    return i;
  }

  GenerateResponse generate(const GenerateRequest& req) override {
    const std::size_t topk = req.trace == TraceMode::topk ? req.topk : 0;
    auto res = greedy_decode_with_trace(*model_, req.prompt, req.max_new_tokens, req.head_mask, topk);
    GenerateResponse out{std::move(res.tokens), {}};
    if (req.trace != TraceMode::none) out.trace = std::move(res.trace);
    return out;
  }

  Tokens tokenize(std::string_view) override { throw UnsupportedOpError("toy runner has no tokenizer"); }
  std::string detokenize(std::span<const TokenId>) override { throw UnsupportedOpError("toy runner has no tokenizer"); }

 private:
  std::shared_ptr<const ToyModel> model_;
};

}  // namespace rhead
