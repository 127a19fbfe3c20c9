#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace lmcd {

struct PartitionMetrics {
  double acc = 0.0;
  double auc = 0.0;
  double rmse = 0.0;
  long count = 0;
};

struct Prediction {
  std::string student;
  std::string exercise;
  int label = 0;
  double score = 0.0;
};

// One evaluation outcome: metrics per partition, the raw per-interaction
// predictions on the cold test set, and enough metadata to reproduce the run.
struct EvalReport {
  std::string tag;        // lmcd | baseline_* | ablation row name
  std::string scenario;
  int fold = 0;
  std::string head;
  std::string condition;
  std::string variant;
  uint64_t seed = 0;
  std::map<std::string, PartitionMetrics> partitions;
  std::vector<Prediction> predictions;
  nlohmann::json metadata = nlohmann::json::object();
};

nlohmann::json report_to_json(const EvalReport& report);

// Atomic write; keys sorted, no timestamps, so identical runs produce
// byte-identical files.
void save_report(const EvalReport& report, const std::string& path);

// FNV-1a over raw file bytes.
uint64_t content_hash_file(const std::string& path);
// Combined hash of the three corpus files under dir.
uint64_t corpus_content_hash(const std::string& dir);
// Hash of a canonical json dump (config fingerprinting).
uint64_t json_hash(const nlohmann::json& j);

}  // namespace lmcd
