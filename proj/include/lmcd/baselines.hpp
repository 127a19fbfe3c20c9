#pragma once

#include <string>

#include "lmcd/cdmheads.hpp"
#include "lmcd/datamodel.hpp"
#include "lmcd/report.hpp"
#include "lmcd/splits.hpp"

namespace lmcd {

// Reference points use their own (cheap) training regime; none of them sees
// the backbone.
struct BaselineTrainConfig {
  double lr = 0.05;
  int epochs = 50;
  int batch_size = 256;
  // Shrinkage toward the raw-parameter prior mean; the oracle baseline sees
  // only ~|oracle logs|/|students| responses per student, so an unregularised
  // fit overfits the ability table (its test AUC falls as epochs grow). The
  // default is the argmax of a held-out-corpus sweep and acts like a MAP
  // prior: with decoupled decay and Adam-normalised updates, well-supported
  // coordinates still reach O(1/weight_decay) magnitude.
  double weight_decay = 0.5;
  uint64_t seed = 0;

  void validate() const {
    if (lr <= 0.0) throw ConfigError("baseline: lr must be > 0");
    if (epochs < 1) throw ConfigError("baseline: epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("baseline: batch_size must be >= 1");
    if (weight_decay < 0.0) {
      throw ConfigError("baseline: weight_decay must be >= 0");
    }
  }
};

// Scores ~ Uniform(0,1) on the cold test logs.
EvalReport baseline_random(const Corpus& corpus, const SplitPlan& plan,
                           uint64_t seed, uint64_t corpus_hash);

// Id-embedding CDM trained directly on the cold-oracle logs (the cold-start
// performance ceiling). Test entities never seen in oracle training are
// scored with the oracle-label prior mean (count reported in metadata).
EvalReport baseline_oracle(const Corpus& corpus, const SplitPlan& plan,
                           HeadKind kind, BaselineTrainConfig cfg,
                           uint64_t corpus_hash);

// Frozen per-exercise vectors (jsonl {"id", "vector"}) through a trainable
// affine map plus an id-embedding student table; trained on hot logs,
// evaluated on cold test logs.
EvalReport baseline_frozen_text(const Corpus& corpus, const SplitPlan& plan,
                                const std::string& vectors_path,
                                HeadKind kind, BaselineTrainConfig cfg,
                                uint64_t corpus_hash);

}  // namespace lmcd
