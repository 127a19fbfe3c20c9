#include "lmcd/ablation.hpp"

namespace lmcd {

using nlohmann::json;

std::vector<AblationRun> run_ablation(const Corpus& corpus,
                                      const SplitPlan& plan,
                                      const DescriptionStore* store,
                                      const ModelConfig& base_model,
                                      const TrainConfig& base_train,
                                      uint64_t corpus_hash,
                                      const json& base_run_cfg) {
  struct Row {
    std::string name;
    AblationVariant variant;
    Condition condition;
  };
  const std::vector<Row> rows = {
      {"repr_default", AblationVariant::none, base_model.condition},
      {"repr_swap_d", AblationVariant::swap_d, base_model.condition},
      {"repr_swap_v", AblationVariant::swap_v, base_model.condition},
      {"input_Q", AblationVariant::none, Condition::q},
      {"input_KQ", AblationVariant::none, Condition::kq},
      {"input_DKQ", AblationVariant::none, Condition::dkq},
  };

  std::vector<AblationRun> out;
  for (const Row& row : rows) {
    ModelConfig cfg = base_model;
    cfg.variant = row.variant;
    cfg.condition = row.condition;

    json resolved = base_run_cfg.is_object() ? base_run_cfg : json::object();
    resolved["ablation_row"] = row.name;
    resolved["variant"] = variant_name(row.variant);
    resolved["condition"] = condition_name(row.condition);

    TrainedModel trained =
        train_model(corpus, plan, store, cfg, base_train);
    AblationRun run;
    run.name = row.name;
    run.report = build_report(trained.state, corpus, plan, store, row.name,
                              &trained.diag, corpus_hash, resolved);
    run.resolved_config = std::move(resolved);
    out.push_back(std::move(run));
  }
  return out;
}

}  // namespace lmcd
