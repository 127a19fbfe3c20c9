#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "corpus_fixtures.hpp"

using nlohmann::json;
namespace fs = std::filesystem;

// The binary under test, injected by the build.
static const char* kCli = LMCD_CLI_PATH;

namespace {

struct RunResult {
  int exit_code = -1;
  std::string out;
  std::string err;
};

RunResult run_cli(const fixtures::TempDir& tmp, const std::string& args) {
  const std::string out_path = tmp.file("cli_stdout.txt");
  const std::string err_path = tmp.file("cli_stderr.txt");
  const std::string cmd = std::string(kCli) + " " + args + " > " + out_path +
                          " 2> " + err_path;
  const int raw = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  r.out = fixtures::read_file(out_path);
  r.err = fixtures::read_file(err_path);
  return r;
}

std::string write_config(const fixtures::TempDir& tmp, const std::string& name,
                         const json& cfg) {
  const std::string path = tmp.file(name);
  fixtures::write_file(path, cfg.dump(2));
  return path;
}

// Shared pipeline state: corpus + splits + descriptions, built once.
struct Pipeline {
  fixtures::TempDir tmp;
  std::string corpus_dir, splits_dir, desc_path;

  Pipeline() {
    corpus_dir = tmp.file("corpus");
    splits_dir = tmp.file("splits");

    const std::string synth_cfg = write_config(
        tmp, "synth.json",
        {{"seed", 42},
         {"out_dir", corpus_dir},
         {"synth",
          {{"students", 30}, {"exercises", 24}, {"logs", 900},
           {"domains", 2}, {"leaves_per_domain", 3}}}});
    RunResult r = run_cli(tmp, "synth --config " + synth_cfg);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);

    const std::string prep_cfg = write_config(
        tmp, "prep.json",
        {{"seed", 42},
         {"corpus_dir", corpus_dir},
         {"out_dir", splits_dir},
         {"scenario", "exercise_cold"}});
    r = run_cli(tmp, "prepare --config " + prep_cfg);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);

    // prompts -> canned fixtures -> offline enrichment
    const std::string diff_dir = tmp.file("diffusion");
    const std::string prompt_cfg = write_config(
        tmp, "prompts.json",
        {{"seed", 42}, {"corpus_dir", corpus_dir}, {"out_dir", diff_dir}});
    r = run_cli(tmp, "diffuse --config " + prompt_cfg + " --emit-prompts");
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);

    std::string fixture_lines;
    std::ifstream prompts(diff_dir + "/prompts.jsonl");
    std::string line;
    while (std::getline(prompts, line)) {
      const json p = json::parse(line);
      fixture_lines +=
          json{{"kc", p["kc"]},
               {"description", "A concept exercised through graded items."}}
              .dump() +
          "\n";
    }
    fixtures::write_file(tmp.file("fixtures.jsonl"), fixture_lines);

    const std::string enrich_cfg = write_config(
        tmp, "enrich.json",
        {{"seed", 42},
         {"corpus_dir", corpus_dir},
         {"out_dir", diff_dir},
         {"diffusion",
          {{"offline", true}, {"fixtures", tmp.file("fixtures.jsonl")}}}});
    r = run_cli(tmp, "diffuse --config " + enrich_cfg);
    REQUIRE_MESSAGE(r.exit_code == 0, r.err);
    desc_path = diff_dir + "/descriptions.jsonl";
  }

  json train_config(const std::string& out_dir) const {
    return {{"seed", 42},
            {"corpus_dir", corpus_dir},
            {"splits_dir", splits_dir},
            {"out_dir", out_dir},
            {"scenario", "exercise_cold"},
            {"fold", 0},
            {"condition", "DKQ"},
            {"descriptions", desc_path},
            {"backbone",
             {{"layers", 1}, {"hidden", 16}, {"heads", 2}, {"s_max", 32},
              {"adapter_rank", 2}}},
            {"head", {{"kind", "irt"}}},
            {"train",
             {{"lr", 0.002}, {"max_epochs", 2}, {"batch_size", 32},
              {"early_stop", false}, {"select_best", false}}}};
  }
};

}  // namespace

TEST_CASE("full pipeline: synth, prepare, diffuse, train, eval, reports") {
  Pipeline pipe;
  const std::string run_dir = pipe.tmp.file("run");
  const std::string cfg =
      write_config(pipe.tmp, "train.json", pipe.train_config(run_dir));

  RunResult r = run_cli(pipe.tmp, "train --config " + cfg);
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  for (const char* f : {"weights.bin", "vocab.json", "students.json",
                        "report.json", "resolved_config.json"}) {
    CHECK_MESSAGE(fs::exists(run_dir + "/" + f), f);
  }
  const json resolved =
      json::parse(fixtures::read_file(run_dir + "/resolved_config.json"));
  CHECK(resolved["seed"] == 42);
  CHECK(resolved["condition"] == "DKQ");

  const json report =
      json::parse(fixtures::read_file(run_dir + "/report.json"));
  CHECK(report["tag"] == "lmcd");
  CHECK(report["partitions"].contains("cold_test"));
  CHECK(report["partitions"].contains("cold_oracle"));
  CHECK(report["predictions"].is_array());
  CHECK(!report["predictions"].empty());

  SUBCASE("evaluation reloads the model and reproduces the report") {
    const std::string eval_dir = pipe.tmp.file("eval");
    json ecfg = pipe.train_config(eval_dir);
    ecfg["model_dir"] = run_dir;
    ecfg["baselines"] = {"random", "oracle"};
    const std::string epath = write_config(pipe.tmp, "eval.json", ecfg);
    RunResult er = run_cli(pipe.tmp, "eval --config " + epath);
    REQUIRE_MESSAGE(er.exit_code == 0, er.err);
    const json eval_report =
        json::parse(fixtures::read_file(eval_dir + "/report.json"));
    CHECK(eval_report["partitions"]["cold_test"]["auc"] ==
          report["partitions"]["cold_test"]["auc"]);
    CHECK(fs::exists(eval_dir + "/baseline_random.json"));
    CHECK(fs::exists(eval_dir + "/baseline_oracle.json"));
  }

  SUBCASE("difficulty report covers every cold interaction") {
    const std::string rep_dir = pipe.tmp.file("difficulty");
    json dcfg = pipe.train_config(rep_dir);
    dcfg["model_dir"] = run_dir;
    const std::string dpath = write_config(pipe.tmp, "difficulty.json", dcfg);
    RunResult dr = run_cli(pipe.tmp, "report-difficulty --config " + dpath);
    REQUIRE_MESSAGE(dr.exit_code == 0, dr.err);
    std::ifstream in(rep_dir + "/difficulty.csv");
    std::string header;
    REQUIRE(std::getline(in, header));
    CHECK(header == "student,exercise,correct,difficulty");
    long rows = 0;
    std::string line;
    while (std::getline(in, line)) ++rows;
    const json split = json::parse(fixtures::read_file(
        pipe.splits_dir + "/split_exercise_cold_0.json"));
    CHECK(rows == static_cast<long>(split["cold"]["oracle_logs"].size() +
                                    split["cold"]["test_logs"].size()));
  }

  SUBCASE("retraining in place is byte-identical") {
    const std::string before = fixtures::read_file(run_dir + "/report.json");
    const std::string weights_before =
        fixtures::read_file(run_dir + "/weights.bin");
    RunResult rr = run_cli(pipe.tmp, "train --config " + cfg);
    REQUIRE_MESSAGE(rr.exit_code == 0, rr.err);
    CHECK(fixtures::read_file(run_dir + "/report.json") == before);
    CHECK(fixtures::read_file(run_dir + "/weights.bin") == weights_before);
  }
}

TEST_CASE("set overrides beat the file and land in the snapshot") {
  fixtures::TempDir tmp;
  const std::string out = tmp.file("corpus");
  const std::string cfg = write_config(
      tmp, "synth.json",
      {{"seed", 1},
       {"out_dir", out},
       {"synth", {{"students", 25}, {"exercises", 10}, {"logs", 200}}}});
  RunResult r = run_cli(
      tmp, "synth --config " + cfg + " --set synth.students=31 --set seed=9");
  REQUIRE_MESSAGE(r.exit_code == 0, r.err);
  const json resolved =
      json::parse(fixtures::read_file(out + "/resolved_config.json"));
  CHECK(resolved["synth"]["students"] == 31);
  CHECK(resolved["seed"] == 9);
  // 31 students actually generated
  std::ifstream logs(out + "/logs.jsonl");
  std::string line;
  std::set<std::string> students;
  while (std::getline(logs, line)) {
    students.insert(json::parse(line)["student"].get<std::string>());
  }
  CHECK(students.size() == 31);
}

TEST_CASE("configuration errors exit 2 with one parseable line") {
  fixtures::TempDir tmp;

  SUBCASE("missing seed") {
    const std::string cfg =
        write_config(tmp, "c.json", {{"out_dir", tmp.file("x")}});
    RunResult r = run_cli(tmp, "synth --config " + cfg);
    CHECK(r.exit_code == 2);
    CHECK(r.err.rfind("lmcd-error code=config", 0) == 0);
    CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  }
  SUBCASE("unknown key") {
    const std::string cfg = write_config(
        tmp, "c.json", {{"seed", 1}, {"out_dir", tmp.file("x")},
                        {"learning_rate", 0.1}});
    RunResult r = run_cli(tmp, "synth --config " + cfg);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("learning_rate") != std::string::npos);
  }
  SUBCASE("bad scenario value") {
    const std::string cfg = write_config(
        tmp, "c.json",
        {{"seed", 1}, {"out_dir", tmp.file("x")},
         {"corpus_dir", tmp.path()}, {"scenario", "student_cold"}});
    RunResult r = run_cli(tmp, "prepare --config " + cfg);
    CHECK(r.exit_code == 2);
    CHECK(r.err.find("student_cold") != std::string::npos);
  }
  SUBCASE("unknown flag") {
    const std::string cfg =
        write_config(tmp, "c.json", {{"seed", 1}, {"out_dir", tmp.file("x")}});
    RunResult r = run_cli(tmp, "synth --config " + cfg + " --frobnicate");
    CHECK(r.exit_code == 2);
    CHECK(r.err.rfind("lmcd-error code=config", 0) == 0);
  }
  SUBCASE("missing config file") {
    RunResult r = run_cli(tmp, "synth --config " + tmp.file("absent.json"));
    CHECK(r.exit_code == 2);
  }
}

TEST_CASE("data errors exit 3") {
  fixtures::TempDir tmp;
  const std::string corpus = tmp.file("corpus");
  const std::string synth_cfg = write_config(
      tmp, "synth.json",
      {{"seed", 5}, {"out_dir", corpus},
       {"synth", {{"students", 10}, {"exercises", 8}, {"logs", 100},
                  {"domains", 2}, {"leaves_per_domain", 2}}}});
  REQUIRE(run_cli(tmp, "synth --config " + synth_cfg).exit_code == 0);

  SUBCASE("fixture missing a concept names it") {
    fixtures::write_file(tmp.file("fixtures.jsonl"),
                         json{{"kc", "k0000"},
                              {"description", "only one entry"}}.dump() +
                             "\n");
    const std::string cfg = write_config(
        tmp, "enrich.json",
        {{"seed", 5}, {"corpus_dir", corpus}, {"out_dir", tmp.file("diff")},
         {"diffusion",
          {{"offline", true}, {"fixtures", tmp.file("fixtures.jsonl")}}}});
    RunResult r = run_cli(tmp, "diffuse --config " + cfg);
    CHECK(r.exit_code == 3);
    CHECK(r.err.rfind("lmcd-error code=data", 0) == 0);
    CHECK(r.err.find("k0001") != std::string::npos);
    // completed entries are kept for an idempotent retry
    CHECK(fs::exists(tmp.file("diff") + "/descriptions.jsonl"));
  }
  SUBCASE("corrupt corpus line") {
    fixtures::write_file(corpus + "/logs.jsonl", "not json\n");
    const std::string cfg = write_config(
        tmp, "prep.json",
        {{"seed", 5}, {"corpus_dir", corpus}, {"out_dir", tmp.file("s")},
         {"scenario", "exercise_cold"}});
    RunResult r = run_cli(tmp, "prepare --config " + cfg);
    CHECK(r.exit_code == 3);
    CHECK(r.err.rfind("lmcd-error code=data", 0) == 0);
  }
}

TEST_CASE("numeric divergence exits 4 after restoring state") {
  fixtures::TempDir tmp;
  const std::string corpus = tmp.file("corpus");
  const std::string splits = tmp.file("splits");
  REQUIRE(run_cli(tmp, "synth --config " +
                           write_config(
                               tmp, "synth.json",
                               {{"seed", 3}, {"out_dir", corpus},
                                {"synth",
                                 {{"students", 20}, {"exercises", 12},
                                  {"logs", 300}, {"domains", 2},
                                  {"leaves_per_domain", 2}}}}))
              .exit_code == 0);
  REQUIRE(run_cli(tmp, "prepare --config " +
                           write_config(tmp, "prep.json",
                                        {{"seed", 3}, {"corpus_dir", corpus},
                                         {"out_dir", splits},
                                         {"scenario", "exercise_cold"}}))
              .exit_code == 0);
  const std::string cfg = write_config(
      tmp, "train.json",
      {{"seed", 3}, {"corpus_dir", corpus}, {"splits_dir", splits},
       {"out_dir", tmp.file("run")}, {"scenario", "exercise_cold"},
       {"condition", "Q"},
       {"backbone", {{"layers", 1}, {"hidden", 16}, {"heads", 2},
                     {"s_max", 24}}},
       {"train", {{"lr", 1e28}, {"max_epochs", 2}, {"batch_size", 16}}}});
  RunResult r = run_cli(tmp, "train --config " + cfg);
  CHECK(r.exit_code == 4);
  CHECK(r.err.rfind("lmcd-error code=numeric", 0) == 0);
  CHECK(r.err.find("restored") != std::string::npos);
}
