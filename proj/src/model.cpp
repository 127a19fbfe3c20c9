#include "lmcd/model.hpp"

#include <algorithm>

#include <json.hpp>

#include "lmcd/fileio.hpp"
#include "lmcd/serialize.hpp"

namespace lmcd {

using nlohmann::json;

std::vector<int> exercise_tokens(const Vocabulary& vocab,
                                 const KnowledgeTree& tree,
                                 const Exercise& ex,
                                 const DescriptionStore* store,
                                 Condition condition, int s_max,
                                 TruncationStats* stats) {
  std::vector<int> desc_ids;
  auto append = [&](const std::string& text) {
    for (int id : vocab.encode(text)) desc_ids.push_back(id);
  };
  if (condition == Condition::kq) {
    for (const auto& kc : ex.kcs) append(tree.at(kc).name);
  } else if (condition == Condition::dkq) {
    if (!store) {
      throw DataError("condition DKQ needs descriptions (exercise '" +
                      ex.id + "')");
    }
    for (const auto& kc : ex.kcs) {
      if (!store->contains(kc)) {
        throw DataError("no description for concept '" + kc +
                        "' (exercise '" + ex.id + "')");
      }
      append(store->get(kc));
    }
  }
  return truncate_tokens(desc_ids, vocab.encode(ex.text), s_max - 1, stats);
}

const std::vector<int>& cached_tokens(ModelState& state, const Corpus& corpus,
                                      const std::string& exercise_id,
                                      const DescriptionStore* store) {
  auto it = state.token_cache.find(exercise_id);
  if (it != state.token_cache.end()) return it->second;
  const Exercise& ex = corpus.exercise(exercise_id);
  auto ids = exercise_tokens(state.vocab, corpus.tree, ex, store,
                             state.cfg.condition, state.cfg.backbone.s_max,
                             &state.truncation);
  return state.token_cache.emplace(exercise_id, std::move(ids)).first->second;
}

bool is_trainable_param(const std::string& name) {
  if (name == "tok.emb" || name == "cog.emb") return true;
  if (name.find(".lora.") != std::string::npos) return true;
  return name.rfind("proj.", 0) == 0 || name.rfind("head.", 0) == 0;
}

ModelState build_model(const Corpus& corpus, const SplitPlan& plan,
                       const DescriptionStore* store, ModelConfig cfg) {
  cfg.backbone.validate();
  ModelState st;
  st.kc_space = KcIndexSpace(corpus.tree, cfg.head.q_mask_routes);
  if (cfg.head.kind == HeadKind::ncdm) cfg.head.dim = st.kc_space.size();
  cfg.head.validate();
  st.cfg = cfg;

  std::vector<std::string> texts;
  for (const auto& ex : corpus.exercises) texts.push_back(ex.text);
  for (const auto& kc : corpus.tree.concepts()) texts.push_back(kc.name);
  if (store) {
    for (const auto& [kc, text] : *store) {
      (void)kc;
      texts.push_back(text);
    }
  }
  st.vocab = Vocabulary::build(texts, cfg.vocab_min_freq);

  st.students = plan.hot_students;
  std::sort(st.students.begin(), st.students.end());
  if (st.students.empty()) throw DataError("split plan has no hot students");
  for (size_t i = 0; i < st.students.size(); ++i) {
    st.student_index.emplace(st.students[i], static_cast<int>(i));
  }

  st.params = init_backbone_params<real>(cfg.backbone, st.vocab.size(),
                                         static_cast<int>(st.students.size()),
                                         cfg.seed);
  add_head_params(st.params, cfg.backbone.hidden, st.cfg.head, cfg.seed);
  return st;
}

std::vector<double> predict_batch(ModelState& state, const Corpus& corpus,
                                  const std::vector<ResponseLog>& logs,
                                  const DescriptionStore* store) {
  std::vector<double> probs;
  probs.reserve(logs.size());
  std::vector<real> empty_mask;
  for (const auto& log : logs) {
    const int row = state.student_row(log.student);
    const auto& tokens = cached_tokens(state, corpus, log.exercise, store);
    const std::vector<real> mask =
        state.cfg.head.kind == HeadKind::ncdm
            ? state.kc_space.q_mask(corpus.tree,
                                    corpus.exercise(log.exercise),
                                    state.cfg.head.q_mask_routes)
            : empty_mask;
    Graph<real> gr;
    LeafMap leaf = bind_params(gr, state.params);
    SampleNodes nodes = build_interaction_nodes(
        gr, leaf, state.cfg.backbone, state.cfg.head, state.cfg.variant,
        tokens, row, mask, -1.0);
    probs.push_back(static_cast<double>(gr.value_of(nodes.prob).at(0, 0)));
  }
  return probs;
}

namespace {

json config_to_json(const ModelConfig& cfg) {
  return json{
      {"backbone",
       {{"layers", cfg.backbone.layers},
        {"hidden", cfg.backbone.hidden},
        {"heads", cfg.backbone.heads},
        {"s_max", cfg.backbone.s_max},
        {"adapter_rank", cfg.backbone.adapter_rank},
        {"adapter_alpha", cfg.backbone.adapter_alpha},
        {"student_pos_embedding", cfg.backbone.student_pos_embedding}}},
      {"head",
       {{"kind", head_kind_name(cfg.head.kind)},
        {"dim", cfg.head.dim},
        {"temperature", cfg.head.temperature},
        {"guess_cap", cfg.head.guess_cap},
        {"eps_a", cfg.head.eps_a},
        {"per_dim_discrimination", cfg.head.per_dim_discrimination},
        {"mlp_hidden", cfg.head.mlp_hidden},
        {"q_mask_routes", cfg.head.q_mask_routes}}},
      {"condition", condition_name(cfg.condition)},
      {"variant", variant_name(cfg.variant)},
      {"vocab_min_freq", cfg.vocab_min_freq},
      {"seed", cfg.seed}};
}

ModelConfig config_from_json(const json& j) {
  ModelConfig cfg;
  const json& b = j.at("backbone");
  cfg.backbone.layers = b.at("layers").get<int>();
  cfg.backbone.hidden = b.at("hidden").get<int>();
  cfg.backbone.heads = b.at("heads").get<int>();
  cfg.backbone.s_max = b.at("s_max").get<int>();
  cfg.backbone.adapter_rank = b.at("adapter_rank").get<int>();
  cfg.backbone.adapter_alpha = b.at("adapter_alpha").get<double>();
  cfg.backbone.student_pos_embedding =
      b.at("student_pos_embedding").get<bool>();
  const json& h = j.at("head");
  cfg.head.kind = head_kind_of(h.at("kind").get<std::string>());
  cfg.head.dim = h.at("dim").get<int>();
  cfg.head.temperature = h.at("temperature").get<double>();
  cfg.head.guess_cap = h.at("guess_cap").get<double>();
  cfg.head.eps_a = h.at("eps_a").get<double>();
  cfg.head.per_dim_discrimination =
      h.at("per_dim_discrimination").get<bool>();
  cfg.head.mlp_hidden = h.at("mlp_hidden").get<int>();
  cfg.head.q_mask_routes = h.at("q_mask_routes").get<bool>();
  cfg.condition = condition_of(j.at("condition").get<std::string>());
  cfg.variant = variant_of(j.at("variant").get<std::string>());
  cfg.vocab_min_freq = j.at("vocab_min_freq").get<int>();
  cfg.seed = j.at("seed").get<uint64_t>();
  return cfg;
}

}  // namespace

void save_model(const ModelState& state, const std::string& dir) {
  save_weights(dir + "/weights.bin", config_to_json(state.cfg), state.params);
  state.vocab.save(dir + "/vocab.json");
  write_file_atomic(dir + "/students.json",
                    json(state.students).dump(2) + "\n");
}

ModelState load_model(const std::string& dir, const Corpus& corpus) {
  auto [header, params] = load_weights(dir + "/weights.bin");
  ModelState st;
  try {
    st.cfg = config_from_json(header);
  } catch (const json::exception& e) {
    throw DataError("weights header in '" + dir + "': " +
                    std::string(e.what()));
  }
  st.params = std::move(params);
  for (auto& [name, tensor] : st.params.items()) {
    tensor.set_requires_grad(is_trainable_param(name));
  }
  st.vocab = Vocabulary::load(dir + "/vocab.json");
  json studs = json::parse(read_file_text(dir + "/students.json"),
                           nullptr, false);
  if (studs.is_discarded() || !studs.is_array()) {
    throw DataError("students.json in '" + dir + "' is not a json array");
  }
  for (const auto& s : studs) {
    st.student_index.emplace(s.get<std::string>(),
                             static_cast<int>(st.students.size()));
    st.students.push_back(s.get<std::string>());
  }
  st.kc_space = KcIndexSpace(corpus.tree, st.cfg.head.q_mask_routes);
  if (st.cfg.head.kind == HeadKind::ncdm &&
      st.kc_space.size() != st.cfg.head.dim) {
    throw DataError("corpus concept space (" +
                    std::to_string(st.kc_space.size()) +
                    ") does not match saved head dim (" +
                    std::to_string(st.cfg.head.dim) + ")");
  }
  const Tensor<real>& tok = st.params.at("tok.emb");
  if (tok.rows() != st.vocab.size()) {
    throw DataError("vocab size " + std::to_string(st.vocab.size()) +
                    " does not match token table rows " +
                    std::to_string(tok.rows()));
  }
  const Tensor<real>& cog = st.params.at("cog.emb");
  if (cog.rows() != static_cast<int>(st.students.size())) {
    throw DataError("students.json does not match cognitive table rows");
  }
  return st;
}

}  // namespace lmcd
