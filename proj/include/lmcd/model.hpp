#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lmcd/backbone.hpp"
#include "lmcd/cdmheads.hpp"
#include "lmcd/datamodel.hpp"
#include "lmcd/diffusion.hpp"
#include "lmcd/splits.hpp"
#include "lmcd/vocab.hpp"

namespace lmcd {

// Input condition: exercise text alone, concept names + text, or enriched
// concept descriptions + text.
enum class Condition { q, kq, dkq };

inline std::string condition_name(Condition c) {
  switch (c) {
    case Condition::q: return "Q";
    case Condition::kq: return "KQ";
    case Condition::dkq: return "DKQ";
  }
  throw ArgumentError("unknown condition");
}

inline Condition condition_of(const std::string& s) {
  if (s == "Q" || s == "q") return Condition::q;
  if (s == "KQ" || s == "kq") return Condition::kq;
  if (s == "DKQ" || s == "dkq") return Condition::dkq;
  throw ConfigError("unknown input condition '" + s + "'");
}

struct ModelConfig {
  BackboneConfig backbone;
  HeadConfig head;
  Condition condition = Condition::dkq;
  AblationVariant variant = AblationVariant::none;
  int vocab_min_freq = 1;
  uint64_t seed = 0;
};

// Nodes of interest for one (student, exercise) interaction.
struct SampleNodes {
  NodeId prob = -1;
  NodeId loss = -1;  // -1 when built without a label
  NodeId o_feedback = -1;
  NodeId o_v = -1;
  CdmNodes cdm;
  int s = 0;
};

// Full per-interaction composite: embed + fuse + backbone + projections +
// head (+ cross-entropy when label is 0/1; pass label < 0 to skip the loss).
template <typename R>
SampleNodes build_interaction_nodes(Graph<R>& gr, const LeafMap& leaf,
                                    const BackboneConfig& bc,
                                    const HeadConfig& hc,
                                    AblationVariant variant,
                                    const std::vector<int>& token_ids,
                                    int student_row,
                                    const std::vector<real>& q_mask,
                                    double label) {
  SampleNodes out;
  EmbeddedText ev = embed_text(gr, leaf, token_ids, bc.s_max);
  const NodeId eu = cognitive_embed(gr, leaf, student_row);
  FusionResult fused = fuse(gr, leaf, ev, eu, bc);
  const NodeId o_fusion = backbone_forward(gr, leaf, fused.node, bc);
  auto [o_feedback, o_v] = extract(gr, o_fusion);
  out.o_feedback = o_feedback;
  out.o_v = o_v;
  out.s = fused.s;
  out.cdm = project(gr, leaf, o_feedback, eu, o_v, hc, variant);
  out.prob = head_predict(gr, leaf, out.cdm, hc, q_mask);
  if (label >= 0.0) {
    out.loss = gr.bce(out.prob,
                      gr.constant(Tensor<R>::filled(1, 1,
                                                    static_cast<R>(label))));
  }
  return out;
}

struct ModelState {
  ModelConfig cfg;
  Vocabulary vocab;
  std::vector<std::string> students;  // sorted; row = index
  std::unordered_map<std::string, int> student_index;
  KcIndexSpace kc_space;
  ParamSet<real> params;
  // exercise id -> truncated token ids under cfg.condition
  std::unordered_map<std::string, std::vector<int>> token_cache;
  TruncationStats truncation;

  int student_row(const std::string& id) const {
    auto it = student_index.find(id);
    if (it == student_index.end()) {
      throw ArgumentError("unknown student '" + id + "'");
    }
    return it->second;
  }
  bool knows_student(const std::string& id) const {
    return student_index.count(id) > 0;
  }
};

// Token sequence for an exercise under a condition: description/name part
// first, exercise stem last, truncated to fit the backbone budget.
std::vector<int> exercise_tokens(const Vocabulary& vocab,
                                 const KnowledgeTree& tree,
                                 const Exercise& ex,
                                 const DescriptionStore* store,
                                 Condition condition, int s_max,
                                 TruncationStats* stats);

const std::vector<int>& cached_tokens(ModelState& state, const Corpus& corpus,
                                      const std::string& exercise_id,
                                      const DescriptionStore* store);

// Fresh model over the training population of a split plan. The vocabulary
// spans every exercise text, concept name, and description (text is
// input-side signal; labels never enter it).
ModelState build_model(const Corpus& corpus, const SplitPlan& plan,
                       const DescriptionStore* store, ModelConfig cfg);

// Per-log success probabilities; pure function of state. Unknown students are
// an error (new-student cold-start is out of scope).
std::vector<double> predict_batch(ModelState& state, const Corpus& corpus,
                                  const std::vector<ResponseLog>& logs,
                                  const DescriptionStore* store);

// weights.bin + vocab.json + students.json under dir.
void save_model(const ModelState& state, const std::string& dir);
ModelState load_model(const std::string& dir, const Corpus& corpus);

// Trainable-set rule shared by init and load: adapters, both embedding
// tables, projections, and head parameters train; backbone blocks and the
// positional table stay frozen.
bool is_trainable_param(const std::string& name);

}  // namespace lmcd
