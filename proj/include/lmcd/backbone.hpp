#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "lmcd/errors.hpp"
#include "lmcd/graph.hpp"
#include "lmcd/rng.hpp"
#include "lmcd/tensor.hpp"

namespace lmcd {

struct BackboneConfig {
  int layers = 2;
  int hidden = 64;
  int heads = 4;
  int s_max = 128;
  int adapter_rank = 8;
  double adapter_alpha = 16.0;
  // Whether the appended student row receives the positional embedding for
  // position S. Config switch because either reading is defensible.
  bool student_pos_embedding = true;

  void validate() const {
    if (layers < 1) throw ConfigError("backbone: layers must be >= 1");
    if (hidden < 1) throw ConfigError("backbone: hidden must be >= 1");
    if (heads < 1 || hidden % heads != 0) {
      throw ConfigError("backbone: hidden (" + std::to_string(hidden) +
                        ") must be divisible by heads (" +
                        std::to_string(heads) + ")");
    }
    if (s_max < 2) throw ConfigError("backbone: s_max must be >= 2");
    if (adapter_rank < 0) throw ConfigError("backbone: adapter rank >= 0");
  }
};

// Ordered name -> tensor collection. Tensors share their buffers with graph
// leaves bound from them, so gradients accumulate here across sample graphs.
template <typename R>
class ParamSet {
 public:
  Tensor<R>& add(const std::string& name, Tensor<R> t) {
    if (index_.count(name)) throw StateError("duplicate parameter " + name);
    index_.emplace(name, items_.size());
    items_.emplace_back(name, std::move(t));
    return items_.back().second;
  }

  bool contains(const std::string& name) const { return index_.count(name); }

  Tensor<R>& at(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter " + name);
    return items_[it->second].second;
  }
  const Tensor<R>& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw StateError("unknown parameter " + name);
    return items_[it->second].second;
  }

  std::vector<std::pair<std::string, Tensor<R>>>& items() { return items_; }
  const std::vector<std::pair<std::string, Tensor<R>>>& items() const {
    return items_;
  }
  size_t size() const { return items_.size(); }

 private:
  std::vector<std::pair<std::string, Tensor<R>>> items_;
  std::unordered_map<std::string, size_t> index_;
};

// ---- parameter naming and initialization -----------------------------------

inline std::string block_prefix(int layer) {
  return "blk" + std::to_string(layer) + ".";
}

// Every tensor draws from an rng seeded by (master seed, its own name), so
// adding/removing other tensors (e.g. toggling adapters) never shifts its
// initial values.
template <typename R>
Tensor<R> init_named_tensor(const std::string& name, int rows, int cols,
                            uint64_t seed) {
  Tensor<R> t(rows, cols);
  const size_t dot = name.find_last_of('.');
  const std::string tail = dot == std::string::npos ? name
                                                    : name.substr(dot + 1);
  const bool is_bias = tail == "b" || tail == "b1" || tail == "b2";
  const bool is_gain = tail == "g";
  const bool is_lora_up = name.size() > 8 && name.compare(name.size() - 8, 8,
                                                          ".lora.up") == 0;
  if (is_gain) {
    for (R& x : t.data()) x = R(1);
  } else if (is_bias || is_lora_up) {
    // zeros: affine offsets start neutral; zero "up" factors make adapters a
    // no-op at step 0
  } else {
    Rng rng(sub_seed(seed, name));
    t.fill_xavier(rng);
  }
  return t;
}

// Backbone block weights are frozen; adapters and the embedding tables train.
template <typename R>
ParamSet<R> init_backbone_params(const BackboneConfig& cfg, int vocab_size,
                                 int num_students, uint64_t seed) {
  cfg.validate();
  if (vocab_size < 1) throw ConfigError("backbone: empty vocabulary");
  if (num_students < 1) throw ConfigError("backbone: no students");
  ParamSet<R> p;
  const int H = cfg.hidden;
  auto put = [&](const std::string& name, int rows, int cols, bool train) {
    p.add(name, init_named_tensor<R>(name, rows, cols, seed))
        .set_requires_grad(train);
  };
  put("tok.emb", vocab_size, H, true);
  put("pos.emb", cfg.s_max, H, false);
  put("cog.emb", num_students, H, true);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string b = block_prefix(l);
    put(b + "ln1.g", 1, H, false);
    put(b + "ln1.b", 1, H, false);
    put(b + "attn.wq", H, H, false);
    put(b + "attn.wk", H, H, false);
    put(b + "attn.wv", H, H, false);
    put(b + "attn.wo", H, H, false);
    put(b + "ln2.g", 1, H, false);
    put(b + "ln2.b", 1, H, false);
    put(b + "ffn.w1", H, 4 * H, false);
    put(b + "ffn.b1", 1, 4 * H, false);
    put(b + "ffn.w2", 4 * H, H, false);
    put(b + "ffn.b2", 1, H, false);
    if (cfg.adapter_rank > 0) {
      const int r = cfg.adapter_rank;
      put(b + "attn.wq.lora.down", H, r, true);
      put(b + "attn.wq.lora.up", r, H, true);
      put(b + "attn.wv.lora.down", H, r, true);
      put(b + "attn.wv.lora.up", r, H, true);
    }
  }
  put("final.ln.g", 1, H, false);
  put("final.ln.b", 1, H, false);
  return p;
}

// Registers every parameter as a graph leaf; returns name -> leaf node id.
template <typename R>
std::unordered_map<std::string, NodeId> bind_params(Graph<R>& g,
                                                    ParamSet<R>& params) {
  std::unordered_map<std::string, NodeId> leaf;
  for (auto& [name, tensor] : params.items()) {
    leaf.emplace(name, g.input(name, tensor));
  }
  return leaf;
}

using LeafMap = std::unordered_map<std::string, NodeId>;

inline NodeId leaf_of(const LeafMap& leaf, const std::string& name) {
  auto it = leaf.find(name);
  if (it == leaf.end()) throw StateError("missing graph leaf " + name);
  return it->second;
}

// ---- token sequence shaping -------------------------------------------------

struct TruncationStats {
  long description_tokens_dropped = 0;
  long stem_tokens_dropped = 0;  // stem-tail truncations, warned upstream
};

// Keeps at most budget tokens, discarding the description head first and, if
// the stem alone overflows, the stem tail.
inline std::vector<int> truncate_tokens(const std::vector<int>& desc_ids,
                                        const std::vector<int>& stem_ids,
                                        int budget, TruncationStats* stats) {
  if (budget < 1) throw ArgumentError("truncate_tokens: budget must be >= 1");
  std::vector<int> out;
  if (static_cast<int>(stem_ids.size()) >= budget) {
    out.assign(stem_ids.begin(), stem_ids.begin() + budget);
    if (stats) {
      stats->stem_tokens_dropped +=
          static_cast<long>(stem_ids.size()) - budget;
      stats->description_tokens_dropped +=
          static_cast<long>(desc_ids.size());
    }
    return out;
  }
  const int room = budget - static_cast<int>(stem_ids.size());
  const int keep = std::min<int>(room, static_cast<int>(desc_ids.size()));
  out.assign(desc_ids.end() - keep, desc_ids.end());
  out.insert(out.end(), stem_ids.begin(), stem_ids.end());
  if (stats) {
    stats->description_tokens_dropped +=
        static_cast<long>(desc_ids.size()) - keep;
  }
  return out;
}

// ---- graph builders ---------------------------------------------------------

// Text embedding: token rows plus positional rows. s == 0 (empty text) yields
// node == -1; fuse() then emits the student row alone.
struct EmbeddedText {
  NodeId node = -1;
  int s = 0;
  bool fused = false;
};

struct FusionResult {
  NodeId node = -1;  // (S+1) x H
  int s = 0;         // text token count
};

template <typename R>
EmbeddedText embed_text(Graph<R>& g, const LeafMap& leaf,
                        const std::vector<int>& token_ids, int s_max) {
  if (static_cast<int>(token_ids.size()) > s_max - 1) {
    throw ArgumentError("embed_text: sequence of " +
                        std::to_string(token_ids.size()) +
                        " tokens exceeds budget " + std::to_string(s_max - 1));
  }
  EmbeddedText out;
  out.s = static_cast<int>(token_ids.size());
  if (out.s == 0) return out;
  std::vector<int> positions(token_ids.size());
  std::iota(positions.begin(), positions.end(), 0);
  const NodeId tok = g.embed_rows(leaf_of(leaf, "tok.emb"), token_ids);
  const NodeId pos = g.embed_rows(leaf_of(leaf, "pos.emb"),
                                  std::move(positions));
  out.node = g.add(tok, pos);
  return out;
}

template <typename R>
NodeId cognitive_embed(Graph<R>& g, const LeafMap& leaf, int student_row) {
  return g.take_row(leaf_of(leaf, "cog.emb"), student_row);
}

// Row-concatenates the student embedding as the final sequence position. The
// marker flag rejects fusing the same text embedding twice.
template <typename R>
FusionResult fuse(Graph<R>& g, const LeafMap& leaf, EmbeddedText& ev,
                  NodeId eu_row, const BackboneConfig& cfg) {
  if (ev.fused) throw StateError("fuse: embedding already fused");
  ev.fused = true;
  if (g.value_of(eu_row).rows() != 1 ||
      g.value_of(eu_row).cols() != cfg.hidden) {
    throw ShapeError("fuse: student row must be 1x" +
                     std::to_string(cfg.hidden) + ", got " +
                     g.value_of(eu_row).shape_str());
  }
  if (ev.s > 0 && g.value_of(ev.node).cols() != cfg.hidden) {
    throw ShapeError("fuse: text width " + g.value_of(ev.node).shape_str() +
                     " != hidden " + std::to_string(cfg.hidden));
  }
  NodeId stu = eu_row;
  if (cfg.student_pos_embedding) {
    stu = g.add(stu, g.embed_rows(leaf_of(leaf, "pos.emb"), {ev.s}));
  }
  FusionResult out;
  out.s = ev.s;
  out.node = ev.s == 0 ? stu : g.concat_rows(ev.node, stu);
  return out;
}

// Linear projection with optional additive low-rank adapter on top of the
// frozen base matrix: y = x W + (alpha/r) (x A) B.
template <typename R>
NodeId adapted_matmul(Graph<R>& g, const LeafMap& leaf, NodeId x,
                      const std::string& base, const BackboneConfig& cfg) {
  NodeId y = g.matmul(x, leaf_of(leaf, base));
  if (cfg.adapter_rank > 0 && leaf.count(base + ".lora.down")) {
    NodeId lo = g.matmul(g.matmul(x, leaf_of(leaf, base + ".lora.down")),
                         leaf_of(leaf, base + ".lora.up"));
    y = g.add(y, g.scale(lo, cfg.adapter_alpha / cfg.adapter_rank));
  }
  return y;
}

// Pre-norm transformer stack: causal multi-head self-attention plus a GELU
// FFN of inner width 4H per block, residual connections, final layer norm.
template <typename R>
NodeId backbone_forward(Graph<R>& g, const LeafMap& leaf, NodeId e_fusion,
                        const BackboneConfig& cfg) {
  const int H = cfg.hidden;
  if (g.value_of(e_fusion).cols() != H) {
    throw ShapeError("backbone: input width " +
                     g.value_of(e_fusion).shape_str() + " != hidden " +
                     std::to_string(H));
  }
  const int dh = H / cfg.heads;
  NodeId h = e_fusion;
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string b = block_prefix(l);
    NodeId u = g.layer_norm(h, leaf_of(leaf, b + "ln1.g"),
                            leaf_of(leaf, b + "ln1.b"));
    NodeId q = adapted_matmul(g, leaf, u, b + "attn.wq", cfg);
    NodeId k = g.matmul(u, leaf_of(leaf, b + "attn.wk"));
    NodeId v = adapted_matmul(g, leaf, u, b + "attn.wv", cfg);
    std::vector<NodeId> ctx;
    for (int hd = 0; hd < cfg.heads; ++hd) {
      const int c0 = hd * dh;
      const int c1 = c0 + dh;
      NodeId scores = g.scale(g.matmul(g.slice_cols(q, c0, c1),
                                       g.slice_cols(k, c0, c1), false, true),
                              1.0 / std::sqrt(static_cast<double>(dh)));
      ctx.push_back(g.matmul(g.softmax_causal(scores),
                             g.slice_cols(v, c0, c1)));
    }
    NodeId joined = ctx.size() == 1 ? ctx[0] : g.concat_cols(ctx);
    h = g.add(h, g.matmul(joined, leaf_of(leaf, b + "attn.wo")));
    NodeId u2 = g.layer_norm(h, leaf_of(leaf, b + "ln2.g"),
                             leaf_of(leaf, b + "ln2.b"));
    NodeId f = g.gelu(g.add_rowvec(g.matmul(u2, leaf_of(leaf, b + "ffn.w1")),
                                   leaf_of(leaf, b + "ffn.b1")));
    h = g.add(h, g.add_rowvec(g.matmul(f, leaf_of(leaf, b + "ffn.w2")),
                              leaf_of(leaf, b + "ffn.b2")));
  }
  return g.layer_norm(h, leaf_of(leaf, "final.ln.g"),
                      leaf_of(leaf, "final.ln.b"));
}

// O_feedback = last row (student-conditioned); O_v = second-to-last row
// (student-invariant exercise representation).
template <typename R>
std::pair<NodeId, NodeId> extract(Graph<R>& g, NodeId o_fusion) {
  const int rows = g.value_of(o_fusion).rows();
  if (rows < 2) {
    throw ArgumentError("extract: need >= 2 rows, got " +
                        std::to_string(rows));
  }
  return {g.take_row(o_fusion, rows - 1), g.take_row(o_fusion, rows - 2)};
}

}  // namespace lmcd
