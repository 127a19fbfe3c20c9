#include <filesystem>
#include <iostream>
#include <memory>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "lmcd/ablation.hpp"
#include "lmcd/baselines.hpp"
#include "lmcd/config.hpp"
#include "lmcd/fileio.hpp"
#include "lmcd/report.hpp"
#include "lmcd/splits.hpp"
#include "lmcd/synth.hpp"
#include "lmcd/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

// One machine-parsable line on stderr per failure.
int fail(const char* code, const std::string& message, int exit_code) {
  std::string one_line = message;
  for (char& c : one_line) {
    if (c == '\n' || c == '\r') c = ' ';
  }
  std::cerr << "lmcd-error code=" << code << " message=\"" << one_line
            << "\"\n";
  return exit_code;
}

struct CommandEnv {
  lmcd::RunConfig cfg;
  json resolved;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) {
    throw lmcd::ConfigError(what + " path is not configured");
  }
  if (!fs::exists(path)) {
    throw lmcd::ConfigError(what + " '" + path + "' does not exist");
  }
}

void require_corpus(const lmcd::RunConfig& cfg) {
  require_file(cfg.corpus_dir, "corpus_dir");
  for (const char* name : {"kcs.jsonl", "exercises.jsonl", "logs.jsonl"}) {
    require_file(cfg.corpus_dir + "/" + name, "corpus file");
  }
}

lmcd::Corpus load_corpus_dir(const std::string& dir) {
  return lmcd::load_corpus(dir + "/kcs.jsonl", dir + "/exercises.jsonl",
                           dir + "/logs.jsonl");
}

// Every artifact directory records the final configuration (seed included).
void write_snapshot(const CommandEnv& env, const std::string& dir) {
  fs::create_directories(dir);
  lmcd::write_file_atomic(dir + "/resolved_config.json",
                          env.resolved.dump(2) + "\n");
}

std::string split_path(const lmcd::RunConfig& cfg) {
  const std::string dir =
      cfg.splits_dir.empty() ? cfg.out_dir : cfg.splits_dir;
  return dir + "/" + lmcd::split_file_name(cfg.scenario, cfg.fold);
}

lmcd::SplitPlan load_plan(const lmcd::RunConfig& cfg,
                          const lmcd::Corpus& corpus) {
  const std::string path = split_path(cfg);
  require_file(path, "split file");
  lmcd::SplitPlan plan = lmcd::load_split(path);
  lmcd::validate_split(plan, corpus);
  return plan;
}

// nullptr when the input condition does not use descriptions and no path is
// configured.
std::unique_ptr<lmcd::DescriptionStore> load_store(
    const lmcd::RunConfig& cfg) {
  if (cfg.descriptions.empty()) {
    if (cfg.condition == lmcd::Condition::dkq) {
      throw lmcd::ConfigError(
          "condition DKQ requires a descriptions path (set 'descriptions')");
    }
    return nullptr;
  }
  require_file(cfg.descriptions, "descriptions");
  return std::make_unique<lmcd::DescriptionStore>(
      lmcd::DescriptionStore::load(cfg.descriptions));
}

int cmd_synth(const CommandEnv& env) {
  write_snapshot(env, env.cfg.out_dir);
  lmcd::synth_generate(env.cfg.synth, env.cfg.out_dir);
  std::cout << "synth: wrote corpus for " << env.cfg.synth.students
            << " students / " << env.cfg.synth.exercises << " exercises / "
            << env.cfg.synth.logs << " logs under " << env.cfg.out_dir
            << "\n";
  return 0;
}

int cmd_prepare(const CommandEnv& env) {
  require_corpus(env.cfg);
  const lmcd::Corpus corpus = load_corpus_dir(env.cfg.corpus_dir);
  write_snapshot(env, env.cfg.out_dir);

  std::vector<lmcd::SplitPlan> plans;
  std::vector<std::string> warnings;
  if (env.cfg.scenario == lmcd::kScenarioExerciseCold) {
    plans = lmcd::make_exercise_cold_splits(corpus, env.cfg.folds,
                                            env.cfg.test_fraction,
                                            env.cfg.seed);
  } else {
    plans = lmcd::make_cross_domain_splits(corpus, env.cfg.test_fraction,
                                           env.cfg.seed, &warnings);
  }
  for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";

  json summary = json::array();
  for (auto& plan : plans) {
    if (env.cfg.limit_students > 0) {
      lmcd::limit_students(plan, corpus, env.cfg.limit_students,
                           env.cfg.seed);
    }
    lmcd::validate_split(plan, corpus);
    lmcd::save_split(plan, env.cfg.out_dir + "/" +
                               lmcd::split_file_name(plan.scenario,
                                                     plan.fold));
    summary.push_back(lmcd::split_stats(plan));
  }
  lmcd::write_file_atomic(env.cfg.out_dir + "/splits_summary.json",
                          summary.dump(2) + "\n");
  std::cout << "prepare: wrote " << plans.size() << " split plan(s) under "
            << env.cfg.out_dir << "\n";
  return 0;
}

int cmd_diffuse(const CommandEnv& env) {
  require_corpus(env.cfg);
  const lmcd::Corpus corpus = load_corpus_dir(env.cfg.corpus_dir);
  write_snapshot(env, env.cfg.out_dir);

  lmcd::DiffusionConfig dc;
  dc.n_negatives = env.cfg.diffusion.negatives;
  dc.example_cap = env.cfg.diffusion.example_cap;
  dc.concurrency = env.cfg.diffusion.workers;
  if (!env.cfg.diffusion.template_path.empty()) {
    require_file(env.cfg.diffusion.template_path, "prompt template");
    dc.tmpl = lmcd::PromptTemplate::load(env.cfg.diffusion.template_path);
  }

  const auto prompts = lmcd::build_all_prompts(corpus, dc, env.cfg.seed);
  {
    std::string out;
    for (const auto& p : prompts) {
      out += json{{"kc", p.target_kc}, {"system", p.system}, {"user", p.user}}
                 .dump() +
             "\n";
    }
    lmcd::write_file_atomic(env.cfg.out_dir + "/prompts.jsonl", out);
  }
  if (env.cfg.diffusion.emit_prompts_only) {
    std::cout << "diffuse: wrote " << prompts.size() << " prompts under "
              << env.cfg.out_dir << "\n";
    return 0;
  }

  std::unique_ptr<lmcd::TextClient> client;
  if (env.cfg.diffusion.offline) {
    require_file(env.cfg.diffusion.fixtures, "fixtures");
    client = std::make_unique<lmcd::OfflineClient>(env.cfg.diffusion.fixtures);
  } else {
    lmcd::HttpClientOptions opt;
    opt.base_url = env.cfg.diffusion.api_base;
    opt.path = env.cfg.diffusion.api_path;
    opt.model = env.cfg.diffusion.api_model;
    opt.temperature = env.cfg.diffusion.temperature;
    opt.max_attempts = env.cfg.diffusion.max_attempts;
    opt.backoff_ms = env.cfg.diffusion.backoff_ms;
    opt.timeout_s = env.cfg.diffusion.timeout_s;
    client = std::make_unique<lmcd::HttpClient>(std::move(opt));
  }

  const std::string store_path = env.cfg.out_dir + "/descriptions.jsonl";
  lmcd::DescriptionStore store;
  if (fs::exists(store_path)) {
    store = lmcd::DescriptionStore::load(store_path);  // idempotent resume
  }
  try {
    lmcd::enrich_all(corpus, *client, dc, env.cfg.seed, store);
  } catch (...) {
    store.save(store_path);  // keep completed entries for the next attempt
    throw;
  }
  store.save(store_path);
  std::cout << "diffuse: " << store.size() << " descriptions under "
            << env.cfg.out_dir << "\n";
  return 0;
}

int cmd_train(const CommandEnv& env) {
  require_corpus(env.cfg);
  const lmcd::Corpus corpus = load_corpus_dir(env.cfg.corpus_dir);
  const lmcd::SplitPlan plan = load_plan(env.cfg, corpus);
  const auto store = load_store(env.cfg);
  write_snapshot(env, env.cfg.out_dir);

  lmcd::TrainedModel trained = lmcd::train_model(
      corpus, plan, store.get(), env.cfg.model_config(), env.cfg.train);
  lmcd::save_model(trained.state, env.cfg.out_dir);
  const lmcd::EvalReport report = lmcd::build_report(
      trained.state, corpus, plan, store.get(), "lmcd", &trained.diag,
      lmcd::corpus_content_hash(env.cfg.corpus_dir), env.resolved);
  lmcd::save_report(report, env.cfg.out_dir + "/report.json");
  std::cout << "train: cold test auc "
            << report.partitions.at("cold_test").auc << " over "
            << report.partitions.at("cold_test").count << " logs\n";
  return 0;
}

int cmd_eval(const CommandEnv& env) {
  require_corpus(env.cfg);
  const lmcd::Corpus corpus = load_corpus_dir(env.cfg.corpus_dir);
  const lmcd::SplitPlan plan = load_plan(env.cfg, corpus);
  require_file(env.cfg.model_dir, "model_dir");
  require_file(env.cfg.model_dir + "/weights.bin", "weights");
  lmcd::ModelState state = lmcd::load_model(env.cfg.model_dir, corpus);
  std::unique_ptr<lmcd::DescriptionStore> store;
  if (!env.cfg.descriptions.empty()) {
    require_file(env.cfg.descriptions, "descriptions");
    store = std::make_unique<lmcd::DescriptionStore>(
        lmcd::DescriptionStore::load(env.cfg.descriptions));
  } else if (state.cfg.condition == lmcd::Condition::dkq) {
    throw lmcd::ConfigError(
        "saved model uses DKQ; set 'descriptions' to evaluate it");
  }
  write_snapshot(env, env.cfg.out_dir);

  const uint64_t corpus_hash = lmcd::corpus_content_hash(env.cfg.corpus_dir);
  const lmcd::EvalReport report =
      lmcd::build_report(state, corpus, plan, store.get(), "lmcd", nullptr,
                         corpus_hash, env.resolved);
  lmcd::save_report(report, env.cfg.out_dir + "/report.json");

  for (const auto& name : env.cfg.baselines) {
    lmcd::EvalReport b;
    if (name == "random") {
      b = lmcd::baseline_random(corpus, plan, env.cfg.seed, corpus_hash);
    } else if (name == "oracle") {
      b = lmcd::baseline_oracle(corpus, plan, env.cfg.head.kind,
                                env.cfg.baseline, corpus_hash);
    } else {
      require_file(env.cfg.vectors, "vectors");
      b = lmcd::baseline_frozen_text(corpus, plan, env.cfg.vectors,
                                     env.cfg.head.kind, env.cfg.baseline,
                                     corpus_hash);
    }
    lmcd::save_report(b, env.cfg.out_dir + "/baseline_" + name + ".json");
  }
  std::cout << "eval: cold test auc "
            << report.partitions.at("cold_test").auc << " over "
            << report.partitions.at("cold_test").count << " logs\n";
  return 0;
}

int cmd_ablate(const CommandEnv& env) {
  require_corpus(env.cfg);
  const lmcd::Corpus corpus = load_corpus_dir(env.cfg.corpus_dir);
  const lmcd::SplitPlan plan = load_plan(env.cfg, corpus);
  // the input-condition sweep always has a DKQ row
  if (env.cfg.descriptions.empty()) {
    throw lmcd::ConfigError(
        "ablate requires a descriptions path (the DKQ row needs it)");
  }
  require_file(env.cfg.descriptions, "descriptions");
  const auto store = std::make_unique<lmcd::DescriptionStore>(
      lmcd::DescriptionStore::load(env.cfg.descriptions));
  write_snapshot(env, env.cfg.out_dir);

  const auto runs = lmcd::run_ablation(
      corpus, plan, store.get(), env.cfg.model_config(), env.cfg.train,
      lmcd::corpus_content_hash(env.cfg.corpus_dir), env.resolved);
  for (const auto& run : runs) {
    const std::string dir = env.cfg.out_dir + "/" + run.name;
    fs::create_directories(dir);
    lmcd::write_file_atomic(dir + "/resolved_config.json",
                            run.resolved_config.dump(2) + "\n");
    lmcd::save_report(run.report, dir + "/report.json");
  }
  std::cout << "ablate: wrote " << runs.size() << " reports under "
            << env.cfg.out_dir << "\n";
  return 0;
}

int cmd_report_difficulty(const CommandEnv& env) {
  require_corpus(env.cfg);
  const lmcd::Corpus corpus = load_corpus_dir(env.cfg.corpus_dir);
  const lmcd::SplitPlan plan = load_plan(env.cfg, corpus);
  require_file(env.cfg.model_dir + "/weights.bin", "weights");
  lmcd::ModelState state = lmcd::load_model(env.cfg.model_dir, corpus);
  std::unique_ptr<lmcd::DescriptionStore> store;
  if (!env.cfg.descriptions.empty()) {
    require_file(env.cfg.descriptions, "descriptions");
    store = std::make_unique<lmcd::DescriptionStore>(
        lmcd::DescriptionStore::load(env.cfg.descriptions));
  } else if (state.cfg.condition == lmcd::Condition::dkq) {
    throw lmcd::ConfigError(
        "saved model uses DKQ; set 'descriptions' to report difficulty");
  }
  write_snapshot(env, env.cfg.out_dir);

  // All cold interactions: oracle + test responses.
  std::vector<int> cold = plan.oracle_logs;
  cold.insert(cold.end(), plan.test_logs.begin(), plan.test_logs.end());
  lmcd::difficulty_report(state, corpus, cold, store.get(),
                          env.cfg.out_dir + "/difficulty.csv");
  std::cout << "report-difficulty: " << cold.size() << " rows under "
            << env.cfg.out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cold-start cognitive diagnosis pipeline"};
  app.require_subcommand(1);

  std::string config_path;
  std::vector<std::string> overrides;
  bool offline_flag = false;
  bool emit_prompts_flag = false;

  const std::vector<std::pair<std::string, std::string>> names = {
      {"synth", "generate a synthetic corpus with planted parameters"},
      {"prepare", "build train/test split plans for a corpus"},
      {"diffuse", "enrich knowledge concepts with generated descriptions"},
      {"train", "fit the fusion model on the hot fold and report"},
      {"eval", "score a saved model (and optional baselines) on a split"},
      {"ablate", "train the six-row representation/input-condition sweep"},
      {"report-difficulty", "export per-interaction difficulty estimates"}};
  for (const auto& [name, help] : names) {
    CLI::App* sub = app.add_subcommand(name, help);
    sub->add_option("--config", config_path, "run configuration file")
        ->required();
    sub->add_option("--set", overrides,
                    "dotted-path override, e.g. train.lr=0.0001");
    if (name == "diffuse") {
      sub->add_flag("--offline", offline_flag,
                    "use the fixtures client (no network)");
      sub->add_flag("--emit-prompts", emit_prompts_flag,
                    "write prompts.jsonl and stop");
    }
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help
    return fail("config", e.what(), 2);
  }

  const std::string command = app.get_subcommands().front()->get_name();
  if (offline_flag) overrides.push_back("diffusion.offline=true");
  if (emit_prompts_flag) overrides.push_back("diffusion.emit_prompts_only=true");

  try {
    CommandEnv env;
    env.resolved = lmcd::resolve_config_json(config_path, overrides);
    env.cfg = lmcd::parse_run_config(env.resolved);
    if (env.cfg.out_dir.empty()) {
      throw lmcd::ConfigError("out_dir is not configured");
    }
    if (command == "synth") return cmd_synth(env);
    if (command == "prepare") return cmd_prepare(env);
    if (command == "diffuse") return cmd_diffuse(env);
    if (command == "train") return cmd_train(env);
    if (command == "eval") return cmd_eval(env);
    if (command == "ablate") return cmd_ablate(env);
    return cmd_report_difficulty(env);
  } catch (const lmcd::ConfigError& e) {
    return fail("config", e.what(), 2);
  } catch (const lmcd::DataError& e) {
    return fail("data", e.what(), 3);
  } catch (const lmcd::NumericError& e) {
    return fail("numeric", e.what(), 4);
  } catch (const lmcd::StateError& e) {
    return fail("state", e.what(), 4);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 4);
  }
}
