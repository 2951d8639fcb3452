#pragma once

// Hand-built two-layer attention-only transformer whose single induction
// head copies the continuation of a previously seen token. It is the
// ground-truth oracle for detection and masking: the retrieval head is
// known by construction.
//
// Residual stream layout (d_model = 3V + P):
//   [0, V)           token one-hot
//   [V, V+P)         position one-hot
//   [V+P, 2V+P)      previous-token subspace, written by the layer-0 support head
//   [2V+P, 3V+P)     copy subspace, written by the layer-1 induction head
//
// The unembedding reads the copy subspace with weight 1 and maps every
// current token to the fallback token with weight 0.5, so once the copy
// signal is gone the model keeps emitting the fallback token.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <optional>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "rhead/error.hpp"
#include "rhead/harness.hpp"
#include "rhead/hash.hpp"
#include "rhead/scoring.hpp"
#include "rhead/types.hpp"

namespace rhead {

struct ToyConfig {
  int vocab_size = 64;
  int max_positions = 512;
  int heads_per_layer = 4;
  double sharpness = 30.0;
  TokenId marker = 2;
  TokenId bos = 0;
  TokenId fallback = 1;

  // First token id past the reserved control tokens.
  int reserved() const { return std::max(3, vocab_size / 8); }

  void validate() const {
    if (vocab_size < 8) throw InputError("toy vocab_size must be >= 8");
    if (max_positions < 16) throw InputError("toy max_positions must be >= 16");
    if (heads_per_layer < 1) throw InputError("toy heads_per_layer must be >= 1");
    if (!(sharpness > 0.0) || !std::isfinite(sharpness)) throw InputError("toy sharpness must be positive");
    for (TokenId t : {marker, bos, fallback}) {
      if (t < 0 || t >= reserved()) throw InputError("toy control tokens must lie below " + std::to_string(reserved()));
    }
    if (marker == bos || marker == fallback || bos == fallback) throw InputError("toy control tokens must be distinct");
  }

  friend bool operator==(const ToyConfig&, const ToyConfig&) = default;
};

// Disjoint vocabulary partition used by toy tasks: control tokens, needle
// tokens, haystack tokens.
struct ToyAlphabet {
  TokenId needle_begin, needle_end;
  TokenId haystack_begin, haystack_end;

  static ToyAlphabet of(const ToyConfig& c) {
    const TokenId nb = c.reserved();
    const TokenId ne = nb + std::max(1, c.vocab_size / 4);
    return {nb, ne, ne, c.vocab_size};
  }
};

namespace detail {

// Compressed sparse rows of a dense row-major matrix. Products skip exact
// zeros only, so results are bit-identical to the dense product.
struct Csr {
  int rows = 0;
  int cols = 0;
  std::vector<int> row_ptr;
  std::vector<int> col;
  std::vector<double> val;

  static Csr from_dense(const std::vector<double>& w, int rows, int cols) {
    Csr m;
    m.rows = rows;
    m.cols = cols;
    m.row_ptr.reserve(static_cast<std::size_t>(rows) + 1);
    m.row_ptr.push_back(0);
    for (int r = 0; r < rows; ++r) {
      for (int c = 0; c < cols; ++c) {
        const double v = w[static_cast<std::size_t>(r) * static_cast<std::size_t>(cols) + static_cast<std::size_t>(c)];
        if (v != 0.0) {
          m.col.push_back(c);
          m.val.push_back(v);
        }
      }
      m.row_ptr.push_back(static_cast<int>(m.col.size()));
    }
    return m;
  }

  void mul(const std::vector<double>& x, std::vector<double>& y) const {
    y.assign(static_cast<std::size_t>(rows), 0.0);
    for (int r = 0; r < rows; ++r) {
      double acc = 0.0;
      for (int k = row_ptr[r]; k < row_ptr[r + 1]; ++k) acc += val[k] * x[static_cast<std::size_t>(col[k])];
      y[static_cast<std::size_t>(r)] = acc;
    }
  }
};

}  // namespace detail

struct ToyHead {
  int d_head = 1;
  int d_value = 1;
  std::vector<double> w_q;  // d_head x d_model
  std::vector<double> w_k;  // d_head x d_model
  std::vector<double> w_v;  // d_value x d_model
  std::vector<double> w_o;  // d_model x d_value

  friend bool operator==(const ToyHead& a, const ToyHead& b) {
    return a.d_head == b.d_head && a.d_value == b.d_value && a.w_q == b.w_q && a.w_k == b.w_k && a.w_v == b.w_v &&
           a.w_o == b.w_o;
  }
};

class ToyModel {
 public:
  ToyConfig config;
  int d_model = 0;
  std::vector<double> w_e;  // d_model x V
  std::vector<double> w_p;  // d_model x P
  std::vector<std::vector<ToyHead>> layers;
  std::vector<double> w_u;  // V x d_model
  HeadId designed_head{1, 0};
  HeadId support_head{0, 0};

  Shape shape() const { return {static_cast<int>(layers.size()), config.heads_per_layer}; }

  // Heads with an all-zero output map.
  std::vector<HeadId> null_heads() const {
    std::vector<HeadId> out;
    for (int l = 0; l < static_cast<int>(layers.size()); ++l) {
      for (int h = 0; h < config.heads_per_layer; ++h) {
        const auto& w = layers[l][h].w_o;
        if (std::all_of(w.begin(), w.end(), [](double v) { return v == 0.0; })) out.push_back({l, h});
      }
    }
    return out;
  }

  const ToyHead& head(HeadId h) const { return layers[h.layer][h.head]; }

  // Builds the sparse operators used by the forward pass. Must be called
  // after the dense weights change.
  void prepare() {
    const int V = config.vocab_size;
    cache_.clear();
    for (const auto& layer : layers) {
      std::vector<HeadOps> ops;
      for (const auto& h : layer) {
        ops.push_back({detail::Csr::from_dense(h.w_q, h.d_head, d_model), detail::Csr::from_dense(h.w_k, h.d_head, d_model),
                       detail::Csr::from_dense(h.w_v, h.d_value, d_model), detail::Csr::from_dense(h.w_o, d_model, h.d_value)});
      }
      cache_.push_back(std::move(ops));
    }
    unembed_ = detail::Csr::from_dense(w_u, V, d_model);
  }

  struct HeadOps {
    detail::Csr q, k, v, o;
  };
  const HeadOps& ops(int layer, int head) const { return cache_[layer][head]; }
  const detail::Csr& unembed() const { return unembed_; }

 private:
  std::vector<std::vector<HeadOps>> cache_;
  detail::Csr unembed_;
};

inline ToyModel construct_copy_circuit(const ToyConfig& cfg) {
  cfg.validate();
  const int V = cfg.vocab_size, P = cfg.max_positions, H = cfg.heads_per_layer;
  const double beta = cfg.sharpness;
  const int tok = 0, pos = V, prev = V + P, out = 2 * V + P;

  ToyModel m;
  m.config = cfg;
  m.d_model = 3 * V + P;
  const auto D = static_cast<std::size_t>(m.d_model);
  auto at = [](std::vector<double>& w, std::size_t cols, int r, int c) -> double& {
    return w[static_cast<std::size_t>(r) * cols + static_cast<std::size_t>(c)];
  };

  m.w_e.assign(D * V, 0.0);
  for (int t = 0; t < V; ++t) at(m.w_e, V, tok + t, t) = 1.0;
  m.w_p.assign(D * P, 0.0);
  for (int i = 0; i < P; ++i) at(m.w_p, P, pos + i, i) = 1.0;

  auto null_head = [&] {
    ToyHead h;
    h.w_q.assign(D, 0.0);
    h.w_k.assign(D, 0.0);
    h.w_v.assign(D, 0.0);
    h.w_o.assign(D, 0.0);
    return h;
  };
  m.layers.assign(2, std::vector<ToyHead>(static_cast<std::size_t>(H)));
  for (auto& layer : m.layers) {
    for (auto& h : layer) h = null_head();
  }

  // Layer 0, head 0: the query at position i matches the key of position i-1
  // and writes that position's token into the previous-token subspace.
  ToyHead support;
  support.d_head = P;
  support.d_value = V;
  support.w_q.assign(static_cast<std::size_t>(P) * D, 0.0);
  support.w_k.assign(static_cast<std::size_t>(P) * D, 0.0);
  for (int i = 1; i < P; ++i) at(support.w_q, D, i - 1, pos + i) = beta;
  for (int j = 0; j < P; ++j) at(support.w_k, D, j, pos + j) = 1.0;
  support.w_v.assign(static_cast<std::size_t>(V) * D, 0.0);
  for (int t = 0; t < V; ++t) at(support.w_v, D, t, tok + t) = 1.0;
  support.w_o.assign(D * V, 0.0);
  for (int t = 0; t < V; ++t) at(support.w_o, V, prev + t, t) = 1.0;
  m.layers[0][0] = std::move(support);

  // Layer 1, head 0: the current token queries the previous-token subspace,
  // landing on the position right after an earlier occurrence of itself, and
  // copies that position's token into the copy subspace.
  ToyHead induction;
  induction.d_head = V;
  induction.d_value = V;
  induction.w_q.assign(static_cast<std::size_t>(V) * D, 0.0);
  induction.w_k.assign(static_cast<std::size_t>(V) * D, 0.0);
  for (int t = 0; t < V; ++t) {
    at(induction.w_q, D, t, tok + t) = beta;
    at(induction.w_k, D, t, prev + t) = 1.0;
  }
  induction.w_v.assign(static_cast<std::size_t>(V) * D, 0.0);
  for (int t = 0; t < V; ++t) at(induction.w_v, D, t, tok + t) = 1.0;
  induction.w_o.assign(D * V, 0.0);
  for (int t = 0; t < V; ++t) at(induction.w_o, V, out + t, t) = 1.0;
  m.layers[1][0] = std::move(induction);

  m.w_u.assign(static_cast<std::size_t>(V) * D, 0.0);
  for (int t = 0; t < V; ++t) {
    at(m.w_u, D, t, out + t) = 1.0;
    at(m.w_u, D, cfg.fallback, tok + t) = 0.5;
  }
  m.designed_head = {1, 0};
  m.support_head = {0, 0};
  m.prepare();
  return m;
}

// A model with a set of heads whose output contribution is zeroed. Masked
// heads still compute attention, so their traces stay defined.
struct ToyModelView {
  const ToyModel* model = nullptr;
  std::vector<char> masked;  // per flat head

  bool is_masked(HeadId h) const { return masked[model->shape().index(h)] != 0; }
};

inline ToyModelView apply_head_mask(const ToyModel& model, const HeadMask& mask) {
  const Shape shape = model.shape();
  check_mask(mask, shape);
  ToyModelView view{&model, std::vector<char>(shape.size(), 0)};
  for (const auto& h : mask) view.masked[shape.index(h)] = 1;
  return view;
}

// Incremental forward pass with a key/value cache. Each pushed token gets
// its attention computed for every head; logits are read at the last
// position.
class ToyDecoder {
 public:
  explicit ToyDecoder(ToyModelView view, bool keep_rows = false, std::size_t topk = 0)
      : view_(std::move(view)), keep_rows_(keep_rows), topk_(topk) {
    const auto& m = *view_.model;
    const Shape s = m.shape();
    keys_.resize(s.size());
    values_.resize(s.size());
    argmax_.resize(s.size());
    topk_pos_.resize(s.size());
    if (keep_rows_) rows_.resize(s.size());
  }

  std::size_t size() const { return length_; }

  void push(TokenId token) {
    const auto& m = *view_.model;
    const int V = m.config.vocab_size, P = m.config.max_positions;
    if (token < 0 || token >= V) throw InputError("token " + std::to_string(token) + " outside toy vocabulary");
    if (length_ >= static_cast<std::size_t>(P)) throw InputError("toy context overflow");
    const std::size_t i = length_;
    const auto D = static_cast<std::size_t>(m.d_model);

    std::vector<double> x(D);
    for (std::size_t r = 0; r < D; ++r) {
      x[r] = m.w_e[r * static_cast<std::size_t>(V) + static_cast<std::size_t>(token)] +
             m.w_p[r * static_cast<std::size_t>(P) + i];
    }

    const Shape shape = m.shape();
    std::vector<double> q, k, v, head_out, proj;
    for (int l = 0; l < shape.layers; ++l) {
      std::vector<double> next = x;
      for (int h = 0; h < shape.heads; ++h) {
        const HeadId id{l, h};
        const std::size_t flat = shape.index(id);
        const auto& ops = m.ops(l, h);
        ops.q.mul(x, q);
        ops.k.mul(x, k);
        ops.v.mul(x, v);
        keys_[flat].push_back(k);
        SparseVec sv;
        for (std::size_t d = 0; d < v.size(); ++d) {
          if (v[d] != 0.0) sv.emplace_back(static_cast<int>(d), v[d]);
        }
        values_[flat].push_back(std::move(sv));

        attend(flat, q, static_cast<std::size_t>(m.head(id).d_value), head_out);
        if (!view_.masked[flat]) {
          ops.o.mul(head_out, proj);
          for (std::size_t r = 0; r < D; ++r) next[r] += proj[r];
        }
      }
      x = std::move(next);
    }
    last_residual_ = std::move(x);
    ++length_;
  }

  std::vector<double> logits() const {
    if (length_ == 0) throw InputError("logits of an empty sequence");
    std::vector<double> out;
    view_.model->unembed().mul(last_residual_, out);
    return out;
  }

  // Argmax attended position per flat head at the last position.
  const std::vector<Position>& argmax() const { return argmax_; }
  const std::vector<std::vector<Position>>& topk() const { return topk_pos_; }

  // Attention row of `head` at query position `pos`; requires keep_rows.
  const std::vector<double>& row(HeadId head, std::size_t pos) const {
    return rows_[view_.model->shape().index(head)].at(pos);
  }

 private:
  using SparseVec = std::vector<std::pair<int, double>>;

  void attend(std::size_t flat, const std::vector<double>& q, std::size_t d_value, std::vector<double>& out) {
    const std::size_t n = length_ + 1;
    const auto& keys = keys_[flat];
    std::vector<std::pair<std::size_t, double>> qnz;
    for (std::size_t d = 0; d < q.size(); ++d) {
      if (q[d] != 0.0) qnz.emplace_back(d, q[d]);
    }

    std::vector<double> a(n);
    if (qnz.empty()) {
      std::fill(a.begin(), a.end(), 1.0 / static_cast<double>(n));
    } else {
      double mx = -std::numeric_limits<double>::infinity();
      for (std::size_t j = 0; j < n; ++j) {
        double s = 0.0;
        for (const auto& [d, qv] : qnz) s += qv * keys[j][d];
        a[j] = s;
        mx = std::max(mx, s);
      }
      double z = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        a[j] = std::exp(a[j] - mx);
        z += a[j];
      }
      for (std::size_t j = 0; j < n; ++j) a[j] /= z;
    }

    std::size_t best = 0;
    for (std::size_t j = 1; j < n; ++j) {
      if (a[j] > a[best]) best = j;
    }
    argmax_[flat] = static_cast<Position>(best);
    if (topk_ > 0) {
      std::vector<std::size_t> idx(n);
      std::iota(idx.begin(), idx.end(), std::size_t{0});
      const std::size_t k = std::min(topk_, n);
      std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                        [&](std::size_t x, std::size_t y) { return a[x] > a[y] || (a[x] == a[y] && x < y); });
      topk_pos_[flat].assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k));
    }

    out.assign(d_value, 0.0);
    const auto& values = values_[flat];
    for (std::size_t j = 0; j < n; ++j) {
      for (const auto& [d, vv] : values[j]) out[static_cast<std::size_t>(d)] += a[j] * vv;
    }
    if (keep_rows_) rows_[flat].push_back(std::move(a));
  }

  ToyModelView view_;
  bool keep_rows_;
  std::size_t topk_;
  std::size_t length_ = 0;
  std::vector<std::vector<std::vector<double>>> keys_;
  std::vector<std::vector<SparseVec>> values_;
  std::vector<Position> argmax_;
  std::vector<std::vector<Position>> topk_pos_;
  std::vector<std::vector<std::vector<double>>> rows_;
  std::vector<double> last_residual_;
};

struct DecodeResult {
  Tokens tokens;
  std::vector<StepTrace> trace;
  friend bool operator==(const DecodeResult&, const DecodeResult&) = default;
};

inline TokenId argmax_token(const std::vector<double>& logits) {
  return static_cast<TokenId>(std::max_element(logits.begin(), logits.end()) - logits.begin());
}

// Greedy decoding. Step t's trace holds the argmax of every head at the
// query that produced token t.
inline DecodeResult greedy_decode_with_trace(const ToyModelView& view, const Tokens& prompt, std::size_t max_new,
                                             std::size_t topk = 0) {
  const auto& cfg = view.model->config;
  if (prompt.size() + max_new > static_cast<std::size_t>(cfg.max_positions)) {
    throw InputError("prompt length " + std::to_string(prompt.size()) + " + max_new " + std::to_string(max_new) +
                     " exceeds toy context " + std::to_string(cfg.max_positions));
  }
  DecodeResult res;
  if (max_new == 0) return res;
  if (prompt.empty()) throw InputError("cannot decode from an empty prompt");
  ToyDecoder dec(view, false, topk);
  for (TokenId t : prompt) dec.push(t);
  for (std::size_t step = 0; step < max_new; ++step) {
    const TokenId next = argmax_token(dec.logits());
    StepTrace st{next, dec.argmax(), {}};
    if (topk > 0) {
      for (const auto& v : dec.topk()) {
        st.topk.emplace_back(v.begin(), v.end());
      }
    }
    res.tokens.push_back(next);
    res.trace.push_back(std::move(st));
    if (step + 1 < max_new) dec.push(next);
  }
  return res;
}

inline DecodeResult greedy_decode_with_trace(const ToyModel& model, const Tokens& prompt, std::size_t max_new,
                                             const HeadMask& mask = {}, std::size_t topk = 0) {
  return greedy_decode_with_trace(apply_head_mask(model, mask), prompt, max_new, topk);
}

// ---------------------------------------------------------------------------
// default toy task set

// Haystack corpus over the haystack alphabet.
inline Tokens toy_corpus(const ToyConfig& cfg, std::size_t size = 4096, std::uint64_t seed = 7) {
  const auto alpha = ToyAlphabet::of(cfg);
  std::mt19937_64 rng(seed);
  Tokens out(size);
  const auto n = static_cast<std::uint64_t>(alpha.haystack_end - alpha.haystack_begin);
  for (auto& t : out) t = alpha.haystack_begin + static_cast<TokenId>(bounded_draw(rng, n));
  return out;
}

inline PromptTemplate toy_template(const ToyConfig& cfg) { return {{cfg.bos}, {cfg.marker}, {}}; }

// Three needles of distinct needle-alphabet tokens (10, 8 and 6 long when the
// alphabet allows).
inline std::vector<NeedleSpec> toy_needles(const ToyConfig& cfg) {
  const auto alpha = ToyAlphabet::of(cfg);
  std::vector<TokenId> pool(static_cast<std::size_t>(alpha.needle_end - alpha.needle_begin));
  std::iota(pool.begin(), pool.end(), alpha.needle_begin);
  std::vector<NeedleSpec> out;
  const char* names[] = {"alpha", "beta", "gamma"};
  const std::size_t lens[] = {10, 8, 6};
  for (std::size_t i = 0; i < 3; ++i) {
    std::mt19937_64 rng(100 + i);
    auto p = pool;
    for (std::size_t a = 0; a + 1 < p.size(); ++a) {
      std::swap(p[a], p[a + static_cast<std::size_t>(bounded_draw(rng, p.size() - a))]);
    }
    p.resize(std::min(lens[i], p.size()));
    out.push_back({names[i], p, {cfg.marker}});
  }
  return out;
}

// 3 lengths x 10 depths x 3 needles. The longest length fills the context
// once the needle has been decoded.
inline GridConfig toy_grid(const ToyConfig& cfg, std::uint64_t seed = 0) {
  GridConfig g;
  g.needles = toy_needles(cfg);
  g.tmpl = toy_template(cfg);
  g.depths = uniform_depths(10);
  g.seed = seed;
  std::size_t longest = 0, question = 0;
  for (const auto& n : g.needles) {
    longest = std::max(longest, n.needle.size());
    question = std::max(question, n.question.size());
  }
  const std::size_t fixed = g.tmpl.overhead() + 2 * longest + question;
  if (static_cast<std::size_t>(cfg.max_positions) < fixed + 4) throw InputError("toy context too small for the default grid");
  const std::size_t max_len = static_cast<std::size_t>(cfg.max_positions) - fixed;
  g.lengths = {max_len / 4, max_len / 2, max_len};
  return g;
}

// ---------------------------------------------------------------------------
// weight export / import

inline nlohmann::json to_json(const ToyConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"max_positions", c.max_positions}, {"heads_per_layer", c.heads_per_layer},
          {"sharpness", c.sharpness},   {"marker", c.marker},               {"bos", c.bos},
          {"fallback", c.fallback}};
}

inline ToyConfig toy_config_from_json(const nlohmann::json& j) {
  ToyConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.max_positions = j.value("max_positions", c.max_positions);
  c.heads_per_layer = j.value("heads_per_layer", c.heads_per_layer);
  c.sharpness = j.value("sharpness", c.sharpness);
  c.marker = j.value("marker", c.marker);
  c.bos = j.value("bos", c.bos);
  c.fallback = j.value("fallback", c.fallback);
  return c;
}

inline nlohmann::json to_json(const ToyModel& m) {
  auto layers = nlohmann::json::array();
  for (const auto& layer : m.layers) {
    auto heads = nlohmann::json::array();
    for (const auto& h : layer) {
      heads.push_back({{"d_head", h.d_head}, {"d_value", h.d_value}, {"w_q", h.w_q}, {"w_k", h.w_k}, {"w_v", h.w_v}, {"w_o", h.w_o}});
    }
    layers.push_back(std::move(heads));
  }
  return {{"schema", "rhead.toy/1"},
          {"config", to_json(m.config)},
          {"d_model", m.d_model},
          {"designed_head", {m.designed_head.layer, m.designed_head.head}},
          {"support_head", {m.support_head.layer, m.support_head.head}},
          {"w_e", m.w_e},
          {"w_p", m.w_p},
          {"layers", std::move(layers)},
          {"w_u", m.w_u}};
}

inline ToyModel toy_model_from_json(const nlohmann::json& j) {
  ToyModel m;
  try {
    if (j.at("schema").get<std::string>() != "rhead.toy/1") throw InputError("unsupported toy weight schema");
    m.config = toy_config_from_json(j.at("config"));
    m.config.validate();
    m.d_model = j.at("d_model").get<int>();
    m.designed_head = {j.at("designed_head").at(0).get<int>(), j.at("designed_head").at(1).get<int>()};
    m.support_head = {j.at("support_head").at(0).get<int>(), j.at("support_head").at(1).get<int>()};
    m.w_e = j.at("w_e").get<std::vector<double>>();
    m.w_p = j.at("w_p").get<std::vector<double>>();
    m.w_u = j.at("w_u").get<std::vector<double>>();
    for (const auto& layer : j.at("layers")) {
      std::vector<ToyHead> heads;
      for (const auto& h : layer) {
        ToyHead th;
        th.d_head = h.at("d_head").get<int>();
        th.d_value = h.at("d_value").get<int>();
        th.w_q = h.at("w_q").get<std::vector<double>>();
        th.w_k = h.at("w_k").get<std::vector<double>>();
        th.w_v = h.at("w_v").get<std::vector<double>>();
        th.w_o = h.at("w_o").get<std::vector<double>>();
        heads.push_back(std::move(th));
      }
      m.layers.push_back(std::move(heads));
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed toy weights: ") + e.what());
  }
  const auto D = static_cast<std::size_t>(m.d_model);
  const auto V = static_cast<std::size_t>(m.config.vocab_size), P = static_cast<std::size_t>(m.config.max_positions);
  if (m.d_model < 1 || m.w_e.size() != D * V || m.w_p.size() != D * P || m.w_u.size() != V * D) {
    throw InputError("toy weight dimensions do not match config");
  }
  for (const auto& layer : m.layers) {
    if (layer.size() != static_cast<std::size_t>(m.config.heads_per_layer)) throw InputError("toy layer head count mismatch");
    for (const auto& h : layer) {
      const auto dh = static_cast<std::size_t>(h.d_head), dv = static_cast<std::size_t>(h.d_value);
      if (h.d_head < 1 || h.d_value < 1 || h.w_q.size() != dh * D || h.w_k.size() != dh * D || h.w_v.size() != dv * D ||
          h.w_o.size() != D * dv) {
        throw InputError("toy head weight dimensions mismatch");
      }
    }
  }
  if (m.layers.empty() || !m.shape().contains(m.designed_head) || !m.shape().contains(m.support_head)) {
    throw InputError("toy weights name heads outside the model");
  }
  m.prepare();
  return m;
}

}  // namespace rhead
