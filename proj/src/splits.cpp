#include "lmcd/splits.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <unordered_set>

#include "lmcd/rng.hpp"

namespace lmcd {

using nlohmann::json;

namespace {

std::vector<std::string> sorted_unique(std::vector<std::string> v) {
  std::sort(v.begin(), v.end());
  v.erase(std::unique(v.begin(), v.end()), v.end());
  return v;
}

// Union of all route concepts of the given exercises, root excluded.
std::vector<std::string> route_kcs(const Corpus& corpus,
                                   const std::vector<std::string>& exercises) {
  std::set<std::string> acc;
  for (const std::string& eid : exercises) {
    for (const auto& route : knowledge_routes(corpus.tree, corpus.exercise(eid))) {
      for (const std::string& kid : route) {
        if (kid != corpus.tree.root()) acc.insert(kid);
      }
    }
  }
  return {acc.begin(), acc.end()};
}

std::vector<std::string> students_of(const Corpus& corpus,
                                     const std::vector<int>& log_idx) {
  std::vector<std::string> out;
  out.reserve(log_idx.size());
  for (int i : log_idx) out.push_back(corpus.logs[i].student);
  return sorted_unique(std::move(out));
}

// Splits the responses of one cold exercise into test/oracle with a
// per-exercise seeded shuffle, so the assignment is independent of how other
// exercises are processed.
void split_cold_logs(const std::string& eid, std::vector<int> logs,
                     double test_fraction, uint64_t seed, int fold,
                     std::vector<int>* test, std::vector<int>* oracle) {
  Rng rng(sub_seed(seed, "cold_logs:" + eid, static_cast<uint64_t>(fold)));
  rng.shuffle(logs);
  const auto n_test = static_cast<size_t>(
      std::llround(test_fraction * static_cast<double>(logs.size())));
  for (size_t i = 0; i < logs.size(); ++i) {
    (i < n_test ? test : oracle)->push_back(logs[i]);
  }
}

void finish_plan(SplitPlan& plan, const Corpus& corpus) {
  std::sort(plan.hot_logs.begin(), plan.hot_logs.end());
  std::sort(plan.test_logs.begin(), plan.test_logs.end());
  std::sort(plan.oracle_logs.begin(), plan.oracle_logs.end());
  plan.hot_students = students_of(corpus, plan.hot_logs);
  std::vector<int> cold_all = plan.test_logs;
  cold_all.insert(cold_all.end(), plan.oracle_logs.begin(), plan.oracle_logs.end());
  plan.cold_students = students_of(corpus, cold_all);
}

}  // namespace

std::vector<SplitPlan> make_exercise_cold_splits(const Corpus& corpus,
                                                 int folds,
                                                 double test_fraction,
                                                 uint64_t seed) {
  if (folds < 2) {
    throw ArgumentError("exercise-cold splits need at least 2 folds, got " +
                        std::to_string(folds));
  }
  if (corpus.exercises.size() < static_cast<size_t>(folds)) {
    throw ArgumentError("cannot build " + std::to_string(folds) +
                        " folds from " + std::to_string(corpus.exercises.size()) +
                        " exercises");
  }
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ArgumentError("test_fraction must lie in [0, 1)");
  }

  std::vector<std::string> ids;
  ids.reserve(corpus.exercises.size());
  for (const Exercise& ex : corpus.exercises) ids.push_back(ex.id);
  std::sort(ids.begin(), ids.end());
  Rng rng(sub_seed(seed, "exercise_cold_folds"));
  rng.shuffle(ids);

  // response indices per exercise, corpus order
  std::unordered_map<std::string, std::vector<int>> logs_by_ex;
  for (size_t i = 0; i < corpus.logs.size(); ++i) {
    logs_by_ex[corpus.logs[i].exercise].push_back(static_cast<int>(i));
  }

  std::vector<SplitPlan> plans(folds);
  for (int f = 0; f < folds; ++f) {
    SplitPlan& plan = plans[f];
    plan.scenario = kScenarioExerciseCold;
    plan.fold = f;
    plan.seed = seed;
    for (size_t i = 0; i < ids.size(); ++i) {
      (static_cast<int>(i % folds) == f ? plan.cold_exercises
                                        : plan.hot_exercises)
          .push_back(ids[i]);
    }
    std::sort(plan.cold_exercises.begin(), plan.cold_exercises.end());
    std::sort(plan.hot_exercises.begin(), plan.hot_exercises.end());

    for (const std::string& eid : plan.hot_exercises) {
      auto it = logs_by_ex.find(eid);
      if (it == logs_by_ex.end()) continue;
      plan.hot_logs.insert(plan.hot_logs.end(), it->second.begin(),
                           it->second.end());
    }
    for (const std::string& eid : plan.cold_exercises) {
      auto it = logs_by_ex.find(eid);
      if (it == logs_by_ex.end()) continue;
      split_cold_logs(eid, it->second, test_fraction, seed, f,
                      &plan.test_logs, &plan.oracle_logs);
    }
    plan.hot_kcs = route_kcs(corpus, plan.hot_exercises);
    plan.cold_kcs = route_kcs(corpus, plan.cold_exercises);
    finish_plan(plan, corpus);
  }
  return plans;
}

std::vector<SplitPlan> make_cross_domain_splits(const Corpus& corpus,
                                                double test_fraction,
                                                uint64_t seed,
                                                std::vector<std::string>* warnings) {
  if (test_fraction < 0.0 || test_fraction >= 1.0) {
    throw ArgumentError("test_fraction must lie in [0, 1)");
  }
  const std::vector<std::string> domains = corpus.tree.domains();
  if (domains.size() < 2) {
    throw ArgumentError("cross-domain splits need at least 2 domains, got " +
                        std::to_string(domains.size()));
  }

  // exercise id -> set of domains it touches
  std::unordered_map<std::string, std::set<std::string>> ex_domains;
  for (const Exercise& ex : corpus.exercises) {
    for (const std::string& kid : ex.kcs) {
      ex_domains[ex.id].insert(corpus.tree.domain_of(kid));
    }
  }

  auto warn = [&](const std::string& msg) {
    if (warnings) warnings->push_back(msg);
  };

  std::vector<SplitPlan> plans;
  for (const std::string& dom : domains) {
    SplitPlan plan;
    plan.scenario = kScenarioCrossDomain;
    plan.seed = seed;
    plan.domain = dom;
    for (const Exercise& ex : corpus.exercises) {
      (ex_domains[ex.id].count(dom) ? plan.cold_exercises : plan.hot_exercises)
          .push_back(ex.id);
    }
    std::sort(plan.cold_exercises.begin(), plan.cold_exercises.end());
    std::sort(plan.hot_exercises.begin(), plan.hot_exercises.end());
    if (plan.cold_exercises.empty()) {
      warn("domain '" + dom + "' has no exercises; fold skipped");
      continue;
    }
    if (plan.hot_exercises.empty()) {
      warn("domain '" + dom + "' covers every exercise; fold skipped");
      continue;
    }

    std::unordered_set<std::string> cold_set(plan.cold_exercises.begin(),
                                             plan.cold_exercises.end());
    std::unordered_set<std::string> hot_students;
    for (size_t i = 0; i < corpus.logs.size(); ++i) {
      if (!cold_set.count(corpus.logs[i].exercise)) {
        plan.hot_logs.push_back(static_cast<int>(i));
        hot_students.insert(corpus.logs[i].student);
      }
    }
    // cold responses keep only students the model will have a row for
    std::unordered_map<std::string, std::vector<int>> cold_logs_by_ex;
    for (size_t i = 0; i < corpus.logs.size(); ++i) {
      const ResponseLog& log = corpus.logs[i];
      if (cold_set.count(log.exercise) && hot_students.count(log.student)) {
        cold_logs_by_ex[log.exercise].push_back(static_cast<int>(i));
      }
    }
    for (const std::string& eid : plan.cold_exercises) {
      auto it = cold_logs_by_ex.find(eid);
      if (it == cold_logs_by_ex.end()) continue;
      split_cold_logs(eid, it->second, test_fraction, seed, plan.fold,
                      &plan.test_logs, &plan.oracle_logs);
    }

    // concept split follows the tree: held-out domain subtree vs the rest
    plan.cold_kcs = corpus.tree.subtree(dom);
    for (const KnowledgeConcept& kc : corpus.tree.concepts()) {
      if (kc.id == corpus.tree.root()) continue;
      if (!std::binary_search(plan.cold_kcs.begin(), plan.cold_kcs.end(), kc.id)) {
        plan.hot_kcs.push_back(kc.id);
      }
    }
    finish_plan(plan, corpus);
    plan.fold = static_cast<int>(plans.size());
    plans.push_back(std::move(plan));
  }
  if (plans.empty()) {
    throw DataError("no usable cross-domain folds (all domains skipped)");
  }
  return plans;
}

void limit_students(SplitPlan& plan, const Corpus& corpus, int max_students,
                    uint64_t seed) {
  if (max_students <= 0) {
    throw ArgumentError("max_students must be positive");
  }
  if (plan.hot_students.size() <= static_cast<size_t>(max_students)) return;
  std::vector<std::string> pool = plan.hot_students;
  Rng rng(sub_seed(seed, "limit_students", static_cast<uint64_t>(plan.fold)));
  rng.shuffle(pool);
  pool.resize(max_students);
  std::sort(pool.begin(), pool.end());
  std::unordered_set<std::string> keep(pool.begin(), pool.end());

  auto filter = [&](std::vector<int>& idx) {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) {
      if (keep.count(corpus.logs[i].student)) out.push_back(i);
    }
    idx = std::move(out);
  };
  filter(plan.hot_logs);
  filter(plan.test_logs);
  filter(plan.oracle_logs);
  finish_plan(plan, corpus);
}

void validate_split(const SplitPlan& plan, const Corpus& corpus) {
  if (plan.scenario != kScenarioExerciseCold &&
      plan.scenario != kScenarioCrossDomain) {
    throw DataError("unknown split scenario '" + plan.scenario + "'");
  }
  // hot/cold exercises partition the corpus
  std::set<std::string> hot(plan.hot_exercises.begin(), plan.hot_exercises.end());
  std::set<std::string> cold(plan.cold_exercises.begin(), plan.cold_exercises.end());
  if (hot.size() != plan.hot_exercises.size() ||
      cold.size() != plan.cold_exercises.size()) {
    throw DataError("split lists a duplicate exercise");
  }
  for (const std::string& e : cold) {
    if (hot.count(e)) {
      throw LeakageError("exercise '" + e + "' is both hot and cold");
    }
  }
  if (hot.size() + cold.size() != corpus.exercises.size()) {
    throw DataError("split does not cover every exercise");
  }
  for (const std::string& e : hot) corpus.exercise(e);
  for (const std::string& e : cold) corpus.exercise(e);

  auto check_logs = [&](const std::vector<int>& idx, const std::set<std::string>& side,
                        const char* what) {
    for (int i : idx) {
      if (i < 0 || i >= static_cast<int>(corpus.logs.size())) {
        throw DataError(std::string(what) + " log index out of range");
      }
      if (!side.count(corpus.logs[i].exercise)) {
        throw LeakageError(std::string(what) + " log " + std::to_string(i) +
                           " targets exercise '" + corpus.logs[i].exercise +
                           "' outside its side of the split");
      }
    }
  };
  check_logs(plan.hot_logs, hot, "hot");
  check_logs(plan.test_logs, cold, "test");
  check_logs(plan.oracle_logs, cold, "oracle");

  // a response may appear in at most one partition
  std::unordered_set<int> seen;
  for (const auto* part : {&plan.hot_logs, &plan.test_logs, &plan.oracle_logs}) {
    for (int i : *part) {
      if (!seen.insert(i).second) {
        throw LeakageError("log index " + std::to_string(i) +
                           " appears in two partitions");
      }
    }
  }

  if (plan.scenario == kScenarioCrossDomain) {
    // concept sets must be disjoint, and cold students must be known
    std::set<std::string> hk(plan.hot_kcs.begin(), plan.hot_kcs.end());
    for (const std::string& k : plan.cold_kcs) {
      if (hk.count(k)) {
        throw LeakageError("concept '" + k + "' is both hot and cold");
      }
    }
    std::set<std::string> hs(plan.hot_students.begin(), plan.hot_students.end());
    for (const std::string& s : plan.cold_students) {
      if (!hs.count(s)) {
        throw LeakageError("cold student '" + s + "' never appears in hot logs");
      }
    }
  }
}

json split_stats(const SplitPlan& plan) {
  return json{
      {"scenario", plan.scenario},
      {"fold", plan.fold},
      {"domain", plan.domain},
      {"hot",
       {{"exercises", plan.hot_exercises.size()},
        {"students", plan.hot_students.size()},
        {"kcs", plan.hot_kcs.size()},
        {"logs", plan.hot_logs.size()}}},
      {"cold",
       {{"exercises", plan.cold_exercises.size()},
        {"students", plan.cold_students.size()},
        {"kcs", plan.cold_kcs.size()},
        {"test_logs", plan.test_logs.size()},
        {"oracle_logs", plan.oracle_logs.size()}}},
  };
}

std::string split_file_name(const std::string& scenario, int fold) {
  return "split_" + scenario + "_" + std::to_string(fold) + ".json";
}

void save_split(const SplitPlan& plan, const std::string& path) {
  json j{
      {"scenario", plan.scenario},
      {"fold", plan.fold},
      {"seed", plan.seed},
      {"domain", plan.domain},
      {"hot",
       {{"exercises", plan.hot_exercises},
        {"students", plan.hot_students},
        {"kcs", plan.hot_kcs},
        {"logs", plan.hot_logs}}},
      {"cold",
       {{"exercises", plan.cold_exercises},
        {"students", plan.cold_students},
        {"kcs", plan.cold_kcs},
        {"test_logs", plan.test_logs},
        {"oracle_logs", plan.oracle_logs}}},
  };
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path + "'");
  out << j.dump(2) << "\n";
  if (!out) throw DataError("failed writing '" + path + "'");
}

SplitPlan load_split(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  SplitPlan plan;
  try {
    plan.scenario = j.at("scenario").get<std::string>();
    plan.fold = j.at("fold").get<int>();
    plan.seed = j.at("seed").get<uint64_t>();
    plan.domain = j.at("domain").get<std::string>();
    const json& hot = j.at("hot");
    plan.hot_exercises = hot.at("exercises").get<std::vector<std::string>>();
    plan.hot_students = hot.at("students").get<std::vector<std::string>>();
    plan.hot_kcs = hot.at("kcs").get<std::vector<std::string>>();
    plan.hot_logs = hot.at("logs").get<std::vector<int>>();
    const json& cold = j.at("cold");
    plan.cold_exercises = cold.at("exercises").get<std::vector<std::string>>();
    plan.cold_students = cold.at("students").get<std::vector<std::string>>();
    plan.cold_kcs = cold.at("kcs").get<std::vector<std::string>>();
    plan.test_logs = cold.at("test_logs").get<std::vector<int>>();
    plan.oracle_logs = cold.at("oracle_logs").get<std::vector<int>>();
  } catch (const json::exception& e) {
    throw DataError(path + ": " + e.what());
  }
  return plan;
}

}  // namespace lmcd
