#include "lmcd/report.hpp"

#include "lmcd/errors.hpp"
#include "lmcd/fileio.hpp"
#include "lmcd/rng.hpp"

namespace lmcd {

using nlohmann::json;

json report_to_json(const EvalReport& report) {
  json parts = json::object();
  for (const auto& [name, m] : report.partitions) {
    parts[name] = {{"acc", m.acc},
                   {"auc", m.auc},
                   {"rmse", m.rmse},
                   {"count", m.count}};
  }
  json preds = json::array();
  for (const auto& p : report.predictions) {
    preds.push_back({{"student", p.student},
                     {"exercise", p.exercise},
                     {"label", p.label},
                     {"score", p.score}});
  }
  return json{{"tag", report.tag},
              {"scenario", report.scenario},
              {"fold", report.fold},
              {"head", report.head},
              {"condition", report.condition},
              {"variant", report.variant},
              {"seed", report.seed},
              {"partitions", parts},
              {"predictions", preds},
              {"metadata", report.metadata}};
}

void save_report(const EvalReport& report, const std::string& path) {
  write_file_atomic(path, report_to_json(report).dump(2) + "\n");
}

uint64_t content_hash_file(const std::string& path) {
  return fnv1a(read_file_text(path));
}

uint64_t corpus_content_hash(const std::string& dir) {
  uint64_t h = 1469598103934665603ull;
  for (const char* name : {"kcs.jsonl", "exercises.jsonl", "logs.jsonl"}) {
    const uint64_t part = content_hash_file(dir + "/" + name);
    // order-sensitive mix
    h = splitmix64(h ^ part);
  }
  return h;
}

uint64_t json_hash(const json& j) { return fnv1a(j.dump()); }

}  // namespace lmcd
