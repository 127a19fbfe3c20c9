#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lmcd/backbone.hpp"
#include "lmcd/datamodel.hpp"
#include "lmcd/errors.hpp"
#include "lmcd/graph.hpp"

namespace lmcd {

enum class HeadKind { irt, mirt, ncdm };

inline std::string head_kind_name(HeadKind k) {
  switch (k) {
    case HeadKind::irt: return "irt";
    case HeadKind::mirt: return "mirt";
    case HeadKind::ncdm: return "ncdm";
  }
  throw ArgumentError("unknown head kind");
}

inline HeadKind head_kind_of(const std::string& s) {
  if (s == "irt") return HeadKind::irt;
  if (s == "mirt") return HeadKind::mirt;
  if (s == "ncdm") return HeadKind::ncdm;
  throw ConfigError("unknown head kind '" + s + "'");
}

// Representation-substitution ablations: swap_d sources difficulty from the
// student-invariant row; swap_v sources discrimination/guess from the
// student-conditioned row.
enum class AblationVariant { none, swap_d, swap_v };

inline std::string variant_name(AblationVariant v) {
  switch (v) {
    case AblationVariant::none: return "default";
    case AblationVariant::swap_d: return "swap_d";
    case AblationVariant::swap_v: return "swap_v";
  }
  throw ArgumentError("unknown ablation variant");
}

inline AblationVariant variant_of(const std::string& s) {
  if (s == "default" || s == "none") return AblationVariant::none;
  if (s == "swap_d") return AblationVariant::swap_d;
  if (s == "swap_v") return AblationVariant::swap_v;
  throw ArgumentError("unknown ablation variant '" + s + "'");
}

struct HeadConfig {
  HeadKind kind = HeadKind::irt;
  int dim = 1;  // irt 1, mirt 4, ncdm |K|
  double temperature = 1.703;
  double guess_cap = 0.5;
  double eps_a = 1e-4;  // floor keeping discrimination strictly positive
  // MIRT option: one discrimination per dimension instead of a shared scalar.
  bool per_dim_discrimination = false;
  int mlp_hidden = 64;       // ncdm interaction width
  bool q_mask_routes = false;  // mask ancestors too, not only leaves

  int discrimination_cols() const {
    return per_dim_discrimination ? dim : 1;
  }

  void validate() const {
    if (dim < 1) throw ConfigError("head: dim must be >= 1");
    if (kind == HeadKind::irt && dim != 1) {
      throw ConfigError("head: irt requires dim 1");
    }
    if (guess_cap <= 0.0 || guess_cap > 1.0) {
      throw ConfigError("head: guess_cap must lie in (0, 1]");
    }
    if (temperature <= 0.0) throw ConfigError("head: temperature must be > 0");
    if (eps_a <= 0.0) throw ConfigError("head: eps_a must be > 0");
    if (per_dim_discrimination && kind != HeadKind::mirt) {
      throw ConfigError("head: per-dim discrimination is a mirt option");
    }
    if (kind == HeadKind::ncdm && mlp_hidden < 1) {
      throw ConfigError("head: ncdm mlp width must be >= 1");
    }
  }
};

// Projections (and the ncdm interaction MLP) join the trainable parameter set.
template <typename R>
void add_head_params(ParamSet<R>& params, int hidden, const HeadConfig& hc,
                     uint64_t seed) {
  hc.validate();
  auto put = [&](const std::string& name, int rows, int cols) {
    params.add(name, init_named_tensor<R>(name, rows, cols, seed))
        .set_requires_grad(true);
  };
  put("proj.wd.w", hidden, hc.dim);
  put("proj.wd.b", 1, hc.dim);
  put("proj.wp.w", hidden, hc.dim);
  put("proj.wp.b", 1, hc.dim);
  const int vc = hc.discrimination_cols() + 1;  // raw (a..., g)
  put("proj.wv.w", hidden, vc);
  put("proj.wv.b", 1, vc);
  if (hc.kind == HeadKind::ncdm) {
    // Monotone interaction: weights are clamped non-negative here and after
    // every optimizer step. Clamp through at() once all adds are done --
    // references returned by add() go stale when the set grows.
    put("head.mlp.w1", hc.dim, hc.mlp_hidden);
    put("head.mlp.b1", 1, hc.mlp_hidden);
    put("head.mlp.w2", hc.mlp_hidden, 1);
    put("head.mlp.b2", 1, 1);
    for (R& x : params.at("head.mlp.w1").data()) x = x < R(0) ? R(0) : x;
    for (R& x : params.at("head.mlp.w2").data()) x = x < R(0) ? R(0) : x;
  }
}

// ---- q-mask over the knowledge-concept index space ---------------------------

// Dense index space the ncdm proficiency/difficulty vectors range over:
// leaves only by default, every non-root concept when routes are enabled.
class KcIndexSpace {
 public:
  KcIndexSpace() = default;

  KcIndexSpace(const KnowledgeTree& tree, bool routes) {
    if (routes) {
      for (const auto& kc : tree.concepts()) {
        if (kc.id != tree.root()) ids_.push_back(kc.id);
      }
    } else {
      ids_ = tree.leaves();
    }
    for (size_t i = 0; i < ids_.size(); ++i) {
      index_.emplace(ids_[i], static_cast<int>(i));
    }
  }

  int size() const { return static_cast<int>(ids_.size()); }
  const std::vector<std::string>& ids() const { return ids_; }

  int index_of(const std::string& id) const {
    auto it = index_.find(id);
    if (it == index_.end()) {
      throw ArgumentError("concept '" + id + "' not in index space");
    }
    return it->second;
  }

  // Binary mask over this space from an exercise's knowledge routes.
  std::vector<real> q_mask(const KnowledgeTree& tree,
                           const Exercise& ex, bool routes) const {
    std::vector<real> mask(ids_.size(), real(0));
    int ones = 0;
    auto set = [&](const std::string& id) {
      const int i = index_of(id);
      if (mask[static_cast<size_t>(i)] == real(0)) ++ones;
      mask[static_cast<size_t>(i)] = real(1);
    };
    for (const auto& kc : ex.kcs) {
      set(kc);
      if (routes) {
        for (const auto& node : tree.route(kc)) {
          if (node != tree.root()) set(node);
        }
      }
    }
    if (ones == 0) {
      throw ArgumentError("exercise '" + ex.id + "' yields an all-zero mask");
    }
    return mask;
  }

 private:
  std::vector<std::string> ids_;
  std::unordered_map<std::string, int> index_;
};

// ---- graph builders ---------------------------------------------------------

struct CdmNodes {
  NodeId d = -1;  // 1 x dim difficulty
  NodeId p = -1;  // 1 x dim proficiency
  NodeId a = -1;  // 1 x discrimination_cols, strictly positive
  NodeId g = -1;  // 1 x 1 guess in [0, guess_cap]
};

template <typename R>
NodeId affine_row(Graph<R>& gr, const LeafMap& leaf, NodeId x,
                  const std::string& stem) {
  return gr.add_rowvec(gr.matmul(x, leaf_of(leaf, stem + ".w")),
                       leaf_of(leaf, stem + ".b"));
}

// d from the feedback row, p from the raw cognitive row, (a, g) from the
// exercise row; the ablation variant substitutes a single source.
template <typename R>
CdmNodes project(Graph<R>& gr, const LeafMap& leaf, NodeId o_feedback,
                 NodeId e_u, NodeId o_v, const HeadConfig& hc,
                 AblationVariant variant = AblationVariant::none) {
  const NodeId d_src = variant == AblationVariant::swap_d ? o_v : o_feedback;
  const NodeId v_src = variant == AblationVariant::swap_v ? o_feedback : o_v;
  CdmNodes out;
  out.d = affine_row(gr, leaf, d_src, "proj.wd");
  out.p = affine_row(gr, leaf, e_u, "proj.wp");
  const NodeId raw = affine_row(gr, leaf, v_src, "proj.wv");
  const int na = hc.discrimination_cols();
  out.a = gr.add(gr.softplus(gr.slice_cols(raw, 0, na)),
                 gr.constant(Tensor<R>::filled(1, na, static_cast<R>(hc.eps_a))));
  out.g = gr.scale(gr.sigmoid(gr.slice_cols(raw, na, na + 1)), hc.guess_cap);
  return out;
}

// y = g + (1 - g) * sigmoid(z)
template <typename R>
NodeId guess_floor(Graph<R>& gr, NodeId z, NodeId guess) {
  const NodeId one = gr.constant(Tensor<R>::filled(1, 1, R(1)));
  return gr.add(guess, gr.mul(gr.sub(one, guess), gr.sigmoid(z)));
}

template <typename R>
NodeId irt_predict(Graph<R>& gr, const CdmNodes& cdm, const HeadConfig& hc) {
  if (hc.kind != HeadKind::irt || gr.value_of(cdm.p).cols() != 1) {
    throw ShapeError("irt head requires dim 1");
  }
  const NodeId z = gr.scale(gr.mul(cdm.a, gr.sub(cdm.p, cdm.d)),
                            hc.temperature);
  return guess_floor(gr, z, cdm.g);
}

template <typename R>
NodeId mirt_predict(Graph<R>& gr, const CdmNodes& cdm, const HeadConfig& hc) {
  if (hc.kind != HeadKind::mirt ||
      gr.value_of(cdm.p).cols() != hc.dim ||
      gr.value_of(cdm.d).cols() != hc.dim) {
    throw ShapeError("mirt head: dim mismatch");
  }
  const NodeId diff = gr.sub(cdm.p, cdm.d);
  NodeId z;
  if (hc.per_dim_discrimination) {
    z = gr.scale(gr.reduce_sum(gr.mul(cdm.a, diff)), hc.temperature);
  } else {
    z = gr.scale(gr.mul(cdm.a, gr.reduce_sum(diff)), hc.temperature);
  }
  return guess_floor(gr, z, cdm.g);
}

// x = q_mask . (sigma(p) - sigma(d)) * a through a two-layer non-negative MLP.
template <typename R>
NodeId ncdm_predict(Graph<R>& gr, const LeafMap& leaf, const CdmNodes& cdm,
                    const HeadConfig& hc, const std::vector<real>& q_mask) {
  if (hc.kind != HeadKind::ncdm) throw ShapeError("ncdm head: wrong kind");
  if (static_cast<int>(q_mask.size()) != hc.dim) {
    throw ShapeError("ncdm head: mask size " + std::to_string(q_mask.size()) +
                     " != dim " + std::to_string(hc.dim));
  }
  bool any = false;
  std::vector<R> mask(q_mask.size());
  for (size_t i = 0; i < q_mask.size(); ++i) {
    mask[i] = static_cast<R>(q_mask[i]);
    any = any || q_mask[i] != real(0);
  }
  if (!any) throw ArgumentError("ncdm head: all-zero q-mask");
  const NodeId m = gr.constant(
      Tensor<R>::from_values(1, hc.dim, std::move(mask)));
  NodeId x = gr.mul(m, gr.sub(gr.sigmoid(cdm.p), gr.sigmoid(cdm.d)));
  x = gr.mul(x, cdm.a);
  const NodeId h = gr.sigmoid(
      gr.add_rowvec(gr.matmul(x, leaf_of(leaf, "head.mlp.w1")),
                    leaf_of(leaf, "head.mlp.b1")));
  return gr.sigmoid(
      gr.add_rowvec(gr.matmul(h, leaf_of(leaf, "head.mlp.w2")),
                    leaf_of(leaf, "head.mlp.b2")));
}

template <typename R>
NodeId head_predict(Graph<R>& gr, const LeafMap& leaf, const CdmNodes& cdm,
                    const HeadConfig& hc, const std::vector<real>& q_mask) {
  switch (hc.kind) {
    case HeadKind::irt: return irt_predict(gr, cdm, hc);
    case HeadKind::mirt: return mirt_predict(gr, cdm, hc);
    case HeadKind::ncdm: return ncdm_predict(gr, leaf, cdm, hc, q_mask);
  }
  throw ArgumentError("unknown head kind");
}

}  // namespace lmcd
