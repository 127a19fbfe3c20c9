#pragma once

#include <string>
#include <vector>

#include "lmcd/model.hpp"
#include "lmcd/report.hpp"

namespace lmcd {

struct TrainConfig {
  double lr = 1e-4;
  int max_epochs = 10;
  int batch_size = 64;
  uint64_t seed = 0;
  // Validation runs on the cold-oracle logs after every epoch.
  int patience = 3;
  bool early_stop = true;
  bool select_best = true;  // restore the best-validation parameters at end

  void validate() const {
    if (lr <= 0.0) throw ConfigError("train: lr must be > 0");
    if (max_epochs < 1) throw ConfigError("train: max_epochs must be >= 1");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (patience < 1) throw ConfigError("train: patience must be >= 1");
  }
};

// Partition-consumption instrumentation: training touches only hot logs,
// validation only oracle logs, test logs never during training.
struct TrainDiagnostics {
  long hot_consumed = 0;
  long oracle_consumed = 0;
  long test_consumed = 0;
  int epochs_run = 0;
  int best_epoch = -1;  // 1-based; -1 when validation never ran
  std::vector<double> epoch_train_loss;
  std::vector<double> epoch_val_auc;  // NaN when validation was undefined
  long skipped_unknown_students = 0;
};

struct TrainedModel {
  ModelState state;
  TrainDiagnostics diag;
};

// End-to-end fit: mean binary cross-entropy over hot logs, Adam with linear
// learning-rate decay, early stopping on cold-oracle validation AUC.
TrainedModel train_model(const Corpus& corpus, const SplitPlan& plan,
                         const DescriptionStore* store, ModelConfig model_cfg,
                         TrainConfig train_cfg);

struct EvalOutcome {
  PartitionMetrics metrics;
  std::vector<Prediction> predictions;
  long skipped_unknown_students = 0;
};

// Metrics over the given log indices; logs with students outside the model's
// population are skipped and counted (out-of-scope new-student cold-start).
EvalOutcome evaluate_logs(ModelState& state, const Corpus& corpus,
                          const std::vector<int>& log_indices,
                          const DescriptionStore* store);

// Full report over a plan's cold partitions (metrics on oracle + test,
// per-interaction predictions on test).
EvalReport build_report(ModelState& state, const Corpus& corpus,
                        const SplitPlan& plan, const DescriptionStore* store,
                        const std::string& tag, const TrainDiagnostics* diag,
                        uint64_t corpus_hash, const nlohmann::json& run_cfg);

// CSV of (student, exercise, correct, difficulty) for the given logs, sorted
// by student then exercise. Multi-dimensional difficulty is averaged over the
// masked-in dimensions.
void difficulty_report(ModelState& state, const Corpus& corpus,
                       const std::vector<int>& log_indices,
                       const DescriptionStore* store,
                       const std::string& out_path);

}  // namespace lmcd
