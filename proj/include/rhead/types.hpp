#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "rhead/error.hpp"

namespace rhead {

using TokenId = std::int32_t;
using Tokens = std::vector<TokenId>;
using Position = std::int64_t;

struct HeadId {
  int layer = 0;
  int head = 0;

  friend auto operator<=>(const HeadId&, const HeadId&) = default;
  std::string str() const { return std::to_string(layer) + ":" + std::to_string(head); }
};

// (layers, heads) grid of a model's attention heads.
struct Shape {
  int layers = 0;
  int heads = 0;

  friend bool operator==(const Shape&, const Shape&) = default;
  std::size_t size() const { return static_cast<std::size_t>(layers) * static_cast<std::size_t>(heads); }
  bool contains(HeadId h) const { return h.layer >= 0 && h.layer < layers && h.head >= 0 && h.head < heads; }
  std::size_t index(HeadId h) const {
    return static_cast<std::size_t>(h.layer) * static_cast<std::size_t>(heads) + static_cast<std::size_t>(h.head);
  }
  HeadId at(std::size_t flat) const {
    return {static_cast<int>(flat / static_cast<std::size_t>(heads)), static_cast<int>(flat % static_cast<std::size_t>(heads))};
  }
  std::string str() const { return "(" + std::to_string(layers) + ", " + std::to_string(heads) + ")"; }
};

using HeadMask = std::vector<HeadId>;

inline void check_mask(const HeadMask& mask, Shape shape) {
  for (const auto& h : mask) {
    if (!shape.contains(h)) {
      throw InputError("head " + h.str() + " outside model shape " + shape.str());
    }
  }
}

}  // namespace rhead
