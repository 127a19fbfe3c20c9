#pragma once

#include <string>
#include <vector>

#include "lmcd/train.hpp"

namespace lmcd {

struct AblationRun {
  std::string name;
  EvalReport report;
  nlohmann::json resolved_config;
};

// One invocation, six rows: the three representation variants (default,
// swap_d, swap_v) at the base input condition, and the three input
// conditions (Q, KQ, DKQ) with the default representation. Each row trains
// from scratch with the shared seed and carries its own resolved config.
std::vector<AblationRun> run_ablation(const Corpus& corpus,
                                      const SplitPlan& plan,
                                      const DescriptionStore* store,
                                      const ModelConfig& base_model,
                                      const TrainConfig& base_train,
                                      uint64_t corpus_hash,
                                      const nlohmann::json& base_run_cfg);

}  // namespace lmcd
