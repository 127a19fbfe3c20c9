#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "lmcd/datamodel.hpp"

namespace lmcd {

inline constexpr const char* kScenarioExerciseCold = "exercise_cold";
inline constexpr const char* kScenarioCrossDomain = "cross_domain";

// Frozen description of one cold-start fold.  Everything a training run needs
// is spelled out as explicit id lists and log indices so a persisted plan
// reloads bit-exactly and runs cannot silently drift.
struct SplitPlan {
  std::string scenario;
  int fold = 0;
  uint64_t seed = 0;
  std::string domain;  // cross_domain only: the held-out domain

  std::vector<std::string> hot_exercises;
  std::vector<std::string> hot_students;
  std::vector<std::string> hot_kcs;
  std::vector<int> hot_logs;  // indices into corpus.logs

  std::vector<std::string> cold_exercises;
  std::vector<std::string> cold_students;
  std::vector<std::string> cold_kcs;
  std::vector<int> oracle_logs;  // cold responses available for validation
  std::vector<int> test_logs;   // cold responses to predict
};

// Scenario A: exercises are shuffled (seeded) into `folds` near-equal groups;
// each fold holds one group out as cold.  Within each cold exercise,
// round(test_fraction * n) responses go to test and the rest to the oracle.
std::vector<SplitPlan> make_exercise_cold_splits(const Corpus& corpus,
                                                 int folds,
                                                 double test_fraction,
                                                 uint64_t seed);

// Scenario B: one plan per depth-1 domain.  Every exercise touching the
// domain is cold (and excluded from hot even when it spans other domains);
// cold responses keep only students that also appear in hot logs.
// Domains that would produce an empty cold or hot side are skipped, with a
// note appended to `warnings`.
std::vector<SplitPlan> make_cross_domain_splits(const Corpus& corpus,
                                                double test_fraction,
                                                uint64_t seed,
                                                std::vector<std::string>* warnings = nullptr);

// Optional down-sampling knob: keep at most `max_students` hot students
// (seeded choice) and drop every log of the discarded students.
void limit_students(SplitPlan& plan, const Corpus& corpus, int max_students,
                    uint64_t seed);

// Cross-checks a plan against its corpus (partition, containment, and
// leakage invariants).  Throws DataError/LeakageError on violation.
void validate_split(const SplitPlan& plan, const Corpus& corpus);

nlohmann::json split_stats(const SplitPlan& plan);

void save_split(const SplitPlan& plan, const std::string& path);
SplitPlan load_split(const std::string& path);

// Canonical file name: split_<scenario>_<fold>.json
std::string split_file_name(const std::string& scenario, int fold);

}  // namespace lmcd
