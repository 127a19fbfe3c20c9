#include "lmcd/config.hpp"

#include "lmcd/fileio.hpp"
#include "lmcd/splits.hpp"

namespace lmcd {

using nlohmann::json;

ModelConfig RunConfig::model_config() const {
  ModelConfig cfg;
  cfg.backbone = backbone;
  cfg.head = head;
  cfg.condition = condition;
  cfg.variant = variant;
  cfg.vocab_min_freq = vocab_min_freq;
  cfg.seed = seed;
  return cfg;
}

json default_config_json() {
  return json{
      {"seed", nullptr},
      {"corpus_dir", ""},
      {"out_dir", ""},
      {"splits_dir", ""},
      {"model_dir", ""},
      {"descriptions", ""},
      {"vectors", ""},
      {"scenario", kScenarioExerciseCold},
      {"folds", 5},
      {"fold", 0},
      {"test_fraction", 0.2},
      {"limit_students", 0},
      {"condition", "DKQ"},
      {"variant", "default"},
      {"vocab_min_freq", 1},
      {"backbone",
       {{"layers", 2},
        {"hidden", 64},
        {"heads", 4},
        {"s_max", 128},
        {"adapter_rank", 8},
        {"adapter_alpha", 16.0},
        {"student_pos_embedding", true}}},
      {"head",
       {{"kind", "irt"},
        {"dim", 1},
        {"temperature", 1.703},
        {"guess_cap", 0.5},
        {"eps_a", 1e-4},
        {"per_dim_discrimination", false},
        {"mlp_hidden", 64},
        {"q_mask_routes", false}}},
      {"train",
       {{"lr", 1e-4},
        {"max_epochs", 10},
        {"batch_size", 64},
        {"patience", 3},
        {"early_stop", true},
        {"select_best", true}}},
      {"baseline",
       {{"lr", 0.05},
        {"epochs", 50},
        {"batch_size", 256},
        {"weight_decay", 0.5}}},
      {"baselines", json::array()},
      {"diffusion",
       {{"negatives", 3},
        {"example_cap", 5},
        {"workers", 1},
        {"offline", true},
        {"emit_prompts_only", false},
        {"fixtures", ""},
        {"template_path", ""},
        {"api_base", ""},
        {"api_path", "/v1/chat/completions"},
        {"api_model", "gpt-4o"},
        {"temperature", 0.7},
        {"max_attempts", 3},
        {"backoff_ms", 250},
        {"timeout_s", 60}}},
      {"synth",
       {{"students", 500},
        {"exercises", 400},
        {"logs", 40000},
        {"domains", 3},
        {"leaves_per_domain", 16},
        {"buckets", 2},
        {"heavy_fraction", 0.1},
        {"heavy_weight", 5.0}}}};
}

namespace {

// Reject keys that do not exist in the defaults (typo protection), recursing
// into nested objects.
void check_known_keys(const json& value, const json& defaults,
                      const std::string& prefix) {
  if (!value.is_object()) return;
  for (const auto& [key, sub] : value.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!defaults.is_object() || !defaults.contains(key)) {
      throw ConfigError("unknown config key '" + path + "'");
    }
    check_known_keys(sub, defaults[key], path);
  }
}

void deep_merge(json& base, const json& layer) {
  if (!layer.is_object()) {
    base = layer;
    return;
  }
  for (const auto& [key, sub] : layer.items()) {
    if (base.contains(key) && base[key].is_object() && sub.is_object()) {
      deep_merge(base[key], sub);
    } else {
      base[key] = sub;
    }
  }
}

template <typename T>
T field(const json& j, const std::string& key) {
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError("config field '" + key + "' has the wrong type");
  }
}

}  // namespace

void apply_override(json& config, const std::string& spec) {
  const size_t eq = spec.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + spec + "' is not key=value");
  }
  const std::string path = spec.substr(0, eq);
  const std::string raw = spec.substr(eq + 1);
  json value = json::parse(raw, nullptr, false);
  if (value.is_discarded()) value = raw;  // plain strings need no quotes

  json* node = &config;
  size_t start = 0;
  while (true) {
    const size_t dot = path.find('.', start);
    const std::string key = path.substr(
        start, dot == std::string::npos ? std::string::npos : dot - start);
    if (key.empty()) throw ConfigError("override path '" + path + "' is malformed");
    if (dot == std::string::npos) {
      (*node)[key] = value;
      return;
    }
    node = &(*node)[key];
    start = dot + 1;
  }
}

json resolve_config_json(const std::string& config_path,
                         const std::vector<std::string>& overrides) {
  json resolved = default_config_json();
  if (!std::filesystem::exists(config_path)) {
    throw ConfigError("config file '" + config_path + "' does not exist");
  }
  json file = json::parse(read_file_text(config_path), nullptr, false);
  if (file.is_discarded() || !file.is_object()) {
    throw ConfigError("config file '" + config_path +
                      "' is not a json object");
  }
  check_known_keys(file, resolved, "");
  deep_merge(resolved, file);
  for (const auto& spec : overrides) apply_override(resolved, spec);
  check_known_keys(resolved, default_config_json(), "");
  return resolved;
}

RunConfig parse_run_config(const json& j) {
  RunConfig cfg;
  if (!j.contains("seed") || j["seed"].is_null()) {
    throw ConfigError("seed is mandatory (set it in the config file or via "
                      "--set seed=N)");
  }
  if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer()) {
    throw ConfigError("seed must be a non-negative integer");
  }
  if (j["seed"].is_number_integer() && j["seed"].get<long long>() < 0) {
    throw ConfigError("seed must be a non-negative integer");
  }
  cfg.seed = j["seed"].get<uint64_t>();
  cfg.corpus_dir = field<std::string>(j, "corpus_dir");
  cfg.out_dir = field<std::string>(j, "out_dir");
  cfg.splits_dir = field<std::string>(j, "splits_dir");
  cfg.model_dir = field<std::string>(j, "model_dir");
  cfg.descriptions = field<std::string>(j, "descriptions");
  cfg.vectors = field<std::string>(j, "vectors");
  cfg.scenario = field<std::string>(j, "scenario");
  if (cfg.scenario != kScenarioExerciseCold &&
      cfg.scenario != kScenarioCrossDomain) {
    throw ConfigError("scenario must be '" +
                      std::string(kScenarioExerciseCold) + "' or '" +
                      std::string(kScenarioCrossDomain) + "', got '" +
                      cfg.scenario + "'");
  }
  cfg.folds = field<int>(j, "folds");
  if (cfg.folds < 2) throw ConfigError("folds must be >= 2");
  cfg.fold = field<int>(j, "fold");
  if (cfg.fold < 0) throw ConfigError("fold must be >= 0");
  cfg.test_fraction = field<double>(j, "test_fraction");
  if (cfg.test_fraction <= 0.0 || cfg.test_fraction >= 1.0) {
    throw ConfigError("test_fraction must lie in (0, 1)");
  }
  cfg.limit_students = field<int>(j, "limit_students");
  if (cfg.limit_students < 0) throw ConfigError("limit_students must be >= 0");
  cfg.condition = condition_of(field<std::string>(j, "condition"));
  try {
    cfg.variant = variant_of(field<std::string>(j, "variant"));
  } catch (const ArgumentError& e) {
    throw ConfigError(e.what());
  }
  cfg.vocab_min_freq = field<int>(j, "vocab_min_freq");
  if (cfg.vocab_min_freq < 1) throw ConfigError("vocab_min_freq must be >= 1");

  const json& b = j.at("backbone");
  cfg.backbone.layers = field<int>(b, "layers");
  cfg.backbone.hidden = field<int>(b, "hidden");
  cfg.backbone.heads = field<int>(b, "heads");
  cfg.backbone.s_max = field<int>(b, "s_max");
  cfg.backbone.adapter_rank = field<int>(b, "adapter_rank");
  cfg.backbone.adapter_alpha = field<double>(b, "adapter_alpha");
  cfg.backbone.student_pos_embedding =
      field<bool>(b, "student_pos_embedding");
  cfg.backbone.validate();

  const json& h = j.at("head");
  cfg.head.kind = head_kind_of(field<std::string>(h, "kind"));
  cfg.head.dim = field<int>(h, "dim");
  if (cfg.head.kind == HeadKind::mirt && cfg.head.dim == 1) cfg.head.dim = 4;
  cfg.head.temperature = field<double>(h, "temperature");
  cfg.head.guess_cap = field<double>(h, "guess_cap");
  cfg.head.eps_a = field<double>(h, "eps_a");
  cfg.head.per_dim_discrimination = field<bool>(h, "per_dim_discrimination");
  cfg.head.mlp_hidden = field<int>(h, "mlp_hidden");
  cfg.head.q_mask_routes = field<bool>(h, "q_mask_routes");
  if (cfg.head.kind != HeadKind::ncdm) cfg.head.validate();

  const json& t = j.at("train");
  cfg.train.lr = field<double>(t, "lr");
  cfg.train.max_epochs = field<int>(t, "max_epochs");
  cfg.train.batch_size = field<int>(t, "batch_size");
  cfg.train.patience = field<int>(t, "patience");
  cfg.train.early_stop = field<bool>(t, "early_stop");
  cfg.train.select_best = field<bool>(t, "select_best");
  cfg.train.seed = cfg.seed;
  cfg.train.validate();

  const json& bl = j.at("baseline");
  cfg.baseline.lr = field<double>(bl, "lr");
  cfg.baseline.epochs = field<int>(bl, "epochs");
  cfg.baseline.batch_size = field<int>(bl, "batch_size");
  cfg.baseline.weight_decay = field<double>(bl, "weight_decay");
  cfg.baseline.seed = cfg.seed;
  cfg.baseline.validate();

  for (const auto& name : field<std::vector<std::string>>(j, "baselines")) {
    if (name != "random" && name != "oracle" && name != "frozen_text") {
      throw ConfigError("unknown baseline '" + name + "'");
    }
    cfg.baselines.push_back(name);
  }

  const json& d = j.at("diffusion");
  cfg.diffusion.negatives = field<int>(d, "negatives");
  cfg.diffusion.example_cap = field<int>(d, "example_cap");
  cfg.diffusion.workers = field<int>(d, "workers");
  cfg.diffusion.offline = field<bool>(d, "offline");
  cfg.diffusion.emit_prompts_only = field<bool>(d, "emit_prompts_only");
  cfg.diffusion.fixtures = field<std::string>(d, "fixtures");
  cfg.diffusion.template_path = field<std::string>(d, "template_path");
  cfg.diffusion.api_base = field<std::string>(d, "api_base");
  cfg.diffusion.api_path = field<std::string>(d, "api_path");
  cfg.diffusion.api_model = field<std::string>(d, "api_model");
  cfg.diffusion.temperature = field<double>(d, "temperature");
  cfg.diffusion.max_attempts = field<int>(d, "max_attempts");
  cfg.diffusion.backoff_ms = field<int>(d, "backoff_ms");
  cfg.diffusion.timeout_s = field<int>(d, "timeout_s");
  if (cfg.diffusion.negatives < 0 || cfg.diffusion.example_cap < 0 ||
      cfg.diffusion.workers < 1 || cfg.diffusion.max_attempts < 1) {
    throw ConfigError("diffusion: negatives/example_cap >= 0, workers and "
                      "max_attempts >= 1");
  }

  const json& s = j.at("synth");
  cfg.synth.students = field<int>(s, "students");
  cfg.synth.exercises = field<int>(s, "exercises");
  cfg.synth.logs = field<long>(s, "logs");
  cfg.synth.domains = field<int>(s, "domains");
  cfg.synth.leaves_per_domain = field<int>(s, "leaves_per_domain");
  cfg.synth.buckets = field<int>(s, "buckets");
  cfg.synth.heavy_fraction = field<double>(s, "heavy_fraction");
  cfg.synth.heavy_weight = field<double>(s, "heavy_weight");
  cfg.synth.seed = cfg.seed;
  cfg.synth.validate();

  return cfg;
}

}  // namespace lmcd
