#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lmcd/baselines.hpp"
#include "lmcd/diffusion.hpp"
#include "lmcd/model.hpp"
#include "lmcd/synth.hpp"
#include "lmcd/train.hpp"

namespace lmcd {

// One run-configuration file drives every command; command-line overrides
// beat the file, the file beats defaults, and the resolved snapshot records
// the final values.
struct RunConfig {
  uint64_t seed = 0;  // mandatory in the file or overrides
  std::string corpus_dir;
  std::string out_dir;
  std::string splits_dir;     // where `prepare` wrote split files
  std::string model_dir;      // where `train` wrote weights
  std::string descriptions;   // descriptions.jsonl (DKQ input)
  std::string vectors;        // frozen-text baseline vectors
  std::string scenario;       // exercise_cold | cross_domain
  int folds = 5;
  int fold = 0;
  double test_fraction = 0.2;
  int limit_students = 0;  // 0 = unlimited
  Condition condition = Condition::dkq;
  AblationVariant variant = AblationVariant::none;
  int vocab_min_freq = 1;
  BackboneConfig backbone;
  HeadConfig head;
  TrainConfig train;
  BaselineTrainConfig baseline;
  std::vector<std::string> baselines;  // run by `eval`: random|oracle|frozen_text

  struct Diffusion {
    int negatives = 3;
    int example_cap = 5;
    int workers = 1;
    bool offline = true;
    bool emit_prompts_only = false;
    std::string fixtures;
    std::string template_path;
    std::string api_base;
    std::string api_path = "/v1/chat/completions";
    std::string api_model = "gpt-4o";
    double temperature = 0.7;
    int max_attempts = 3;
    int backoff_ms = 250;
    int timeout_s = 60;
  } diffusion;

  SyntheticSpec synth;

  ModelConfig model_config() const;
};

// Full default tree (seed is null until provided).
nlohmann::json default_config_json();

// defaults <- file <- overrides, with unknown keys rejected at every level.
nlohmann::json resolve_config_json(const std::string& config_path,
                                   const std::vector<std::string>& overrides);

// `spec` is dotted-path=value, e.g. train.lr=0.0001; values parse as json
// when possible, otherwise as strings.
void apply_override(nlohmann::json& config, const std::string& spec);

RunConfig parse_run_config(const nlohmann::json& resolved);

}  // namespace lmcd
