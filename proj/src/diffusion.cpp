#include "lmcd/diffusion.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <mutex>
#include <set>
#include <thread>

#include <httplib.h>
#include <json.hpp>

#include "lmcd/jsonl.hpp"
#include "lmcd/rng.hpp"

namespace lmcd {

using nlohmann::json;

// ---- template / store ------------------------------------------------------

PromptTemplate PromptTemplate::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open prompt template '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw DataError(path + ": " + e.what());
  }
  PromptTemplate tmpl;
  auto pick = [&](const char* key, std::string& dst) {
    if (!j.contains(key)) return;
    if (!j[key].is_string()) {
      throw DataError(path + ": field '" + std::string(key) +
                      "' must be a string");
    }
    dst = j[key].get<std::string>();
  };
  pick("system", tmpl.system);
  pick("kc_header", tmpl.kc_header);
  pick("examples_header", tmpl.examples_header);
  pick("separator", tmpl.separator);
  pick("distractor_header", tmpl.distractor_header);
  return tmpl;
}

const std::string& DescriptionStore::get(const std::string& kc) const {
  auto it = entries_.find(kc);
  if (it == entries_.end()) {
    throw DataError("no description stored for concept '" + kc + "'");
  }
  return it->second;
}

void DescriptionStore::put(const std::string& kc, const std::string& text) {
  if (kc.empty()) throw ArgumentError("description with empty kc id");
  if (text.empty()) {
    throw DataError("empty description for concept '" + kc + "'");
  }
  entries_[kc] = text;
}

DescriptionStore DescriptionStore::load(const std::string& path) {
  DescriptionStore store;
  for_each_jsonl(path, [&](const json& j, const std::string& ctx) {
    if (!j.contains("kc") || !j["kc"].is_string() ||
        !j.contains("description") || !j["description"].is_string()) {
      throw DataError(ctx + ": expected {\"kc\", \"description\"}");
    }
    store.put(j["kc"].get<std::string>(), j["description"].get<std::string>());
  });
  return store;
}

void DescriptionStore::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp);
    if (!out) throw DataError("cannot write '" + tmp + "'");
    for (const auto& [kc, text] : entries_) {
      out << json{{"kc", kc}, {"description", text}}.dump() << "\n";
    }
    if (!out) throw DataError("failed writing '" + tmp + "'");
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw DataError("cannot move '" + tmp + "' into place");
  }
}

// ---- negative selection ----------------------------------------------------

double trigram_cosine(const std::string& a, const std::string& b) {
  auto grams = [](const std::string& s) {
    std::map<std::string, int> counts;
    if (s.size() < 3) {
      if (!s.empty()) counts[s] = 1;
      return counts;
    }
    for (size_t i = 0; i + 3 <= s.size(); ++i) ++counts[s.substr(i, 3)];
    return counts;
  };
  const auto ga = grams(a);
  const auto gb = grams(b);
  if (ga.empty() || gb.empty()) return 0.0;
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (const auto& [g, c] : ga) {
    na += double(c) * c;
    auto it = gb.find(g);
    if (it != gb.end()) dot += double(c) * it->second;
  }
  for (const auto& [g, c] : gb) nb += double(c) * c;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<std::string> select_negatives(const KnowledgeTree& tree,
                                          const std::string& target, int n,
                                          const SimilarityFn& similarity,
                                          uint64_t /*seed*/) {
  const KnowledgeConcept& kc = tree.at(target);
  if (kc.parent.empty()) {
    throw ArgumentError("concept '" + target + "' is the root and has no siblings");
  }
  if (n < 1) throw ArgumentError("negative count must be >= 1");
  const std::string& target_name = kc.name;

  struct Ranked {
    double score;
    std::string id;
  };
  std::vector<Ranked> ranked;
  for (const std::string& sib : tree.children(kc.parent)) {
    if (sib == target) continue;
    ranked.push_back({similarity(target_name, tree.at(sib).name), sib});
  }
  std::sort(ranked.begin(), ranked.end(), [](const Ranked& x, const Ranked& y) {
    if (x.score != y.score) return x.score > y.score;
    return x.id < y.id;
  });
  if (ranked.size() > static_cast<size_t>(n)) ranked.resize(n);
  std::vector<std::string> out;
  out.reserve(ranked.size());
  for (const Ranked& r : ranked) out.push_back(r.id);
  return out;
}

std::vector<std::string> select_negatives(const KnowledgeTree& tree,
                                          const std::string& target, int n,
                                          uint64_t seed) {
  return select_negatives(tree, target, n, trigram_cosine, seed);
}

std::vector<std::string> gather_examples(const std::vector<Exercise>& exercises,
                                         const std::string& kc, int cap,
                                         uint64_t seed) {
  if (cap < 1) throw ArgumentError("example cap must be >= 1");
  std::vector<const Exercise*> matched;
  for (const Exercise& ex : exercises) {
    if (std::find(ex.kcs.begin(), ex.kcs.end(), kc) != ex.kcs.end()) {
      matched.push_back(&ex);
    }
  }
  Rng rng(sub_seed(seed, "examples:" + kc));
  rng.shuffle(matched);
  if (matched.size() > static_cast<size_t>(cap)) matched.resize(cap);
  std::vector<std::string> out;
  out.reserve(matched.size());
  for (const Exercise* ex : matched) out.push_back(ex->text);
  return out;
}

// ---- prompt construction ----------------------------------------------------

namespace {

std::string expand(const std::string& pattern, const std::string& name) {
  std::string out;
  out.reserve(pattern.size() + name.size());
  size_t pos = 0;
  while (true) {
    const size_t hit = pattern.find("{name}", pos);
    if (hit == std::string::npos) {
      out.append(pattern, pos, std::string::npos);
      return out;
    }
    out.append(pattern, pos, hit - pos);
    out += name;
    pos = hit + 6;
  }
}

void append_kc_block(std::string& user, const PromptTemplate& tmpl,
                     const std::string& name,
                     const std::vector<std::string>& examples) {
  user += expand(tmpl.kc_header, name);
  user += "\n\n";
  user += expand(tmpl.examples_header, name);
  user += "\n";
  for (const std::string& ex : examples) {
    user += ex;
    user += "\n";
  }
  user += "\n";
}

}  // namespace

DiffusionPrompt build_prompt(const KnowledgeConcept& target,
                             const std::vector<std::string>& target_examples,
                             const std::vector<KnowledgeConcept>& negatives,
                             const std::vector<std::vector<std::string>>& negative_examples,
                             const PromptTemplate& tmpl) {
  if (target.name.empty()) {
    throw ArgumentError("cannot build a prompt for concept '" + target.id +
                        "' with an empty name");
  }
  if (negatives.size() != negative_examples.size()) {
    throw ArgumentError("negatives and negative_examples differ in length");
  }
  DiffusionPrompt prompt;
  prompt.system = tmpl.system;
  prompt.target_kc = target.id;

  std::string user;
  append_kc_block(user, tmpl, target.name, target_examples);
  if (!negatives.empty()) {
    user += tmpl.separator;
    user += "\n\n";
    user += tmpl.distractor_header;
    user += "\n\n";
    for (size_t i = 0; i < negatives.size(); ++i) {
      prompt.negatives.push_back(negatives[i].id);
      append_kc_block(user, tmpl, negatives[i].name, negative_examples[i]);
    }
  }
  while (!user.empty() && user.back() == '\n') user.pop_back();
  prompt.user = std::move(user);
  return prompt;
}

// ---- clients -----------------------------------------------------------------

OfflineClient::OfflineClient(const std::string& fixtures_path)
    : fixtures_(DescriptionStore::load(fixtures_path)), path_(fixtures_path) {}

std::string OfflineClient::generate(const DiffusionPrompt& prompt) {
  if (!fixtures_.contains(prompt.target_kc)) {
    throw DataError("offline fixtures '" + path_ + "' have no entry for concept '" +
                    prompt.target_kc + "'");
  }
  return fixtures_.get(prompt.target_kc);
}

std::string OfflineClient::describe() const { return "offline(" + path_ + ")"; }

HttpClient::HttpClient(HttpClientOptions options) : options_(std::move(options)) {
  if (options_.base_url.empty()) {
    throw ConfigError("http client needs a base_url");
  }
  if (options_.api_key.empty()) {
    if (const char* key = std::getenv("LMCD_LLM_KEY")) options_.api_key = key;
  }
}

std::string HttpClient::describe() const {
  return "http(" + options_.base_url + options_.path + ", model=" +
         options_.model + ")";
}

std::string HttpClient::generate(const DiffusionPrompt& prompt) {
  const json body{
      {"model", options_.model},
      {"messages",
       {{{"role", "system"}, {"content", prompt.system}},
        {{"role", "user"}, {"content", prompt.user}}}},
      {"temperature", options_.temperature},
  };
  const std::string payload = body.dump();

  std::string last_error;
  for (int attempt = 0; attempt < options_.max_attempts; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(
          options_.backoff_ms * (1 << (attempt - 1))));
    }
    httplib::Client cli(options_.base_url);
    cli.set_connection_timeout(options_.timeout_s, 0);
    cli.set_read_timeout(options_.timeout_s, 0);
    httplib::Headers headers;
    if (!options_.api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + options_.api_key);
    }
    auto res = cli.Post(options_.path, headers, payload, "application/json");
    if (!res) {
      last_error = "transport error: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = "http status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw DataError("generation request for concept '" + prompt.target_kc +
                      "' failed with http status " + std::to_string(res->status));
    }
    json reply;
    try {
      reply = json::parse(res->body);
    } catch (const json::parse_error& e) {
      throw DataError("generation response for concept '" + prompt.target_kc +
                      "' is not valid JSON: " + e.what());
    }
    if (!reply.contains("choices") || !reply["choices"].is_array() ||
        reply["choices"].empty() ||
        !reply["choices"][0].contains("message") ||
        !reply["choices"][0]["message"].contains("content") ||
        !reply["choices"][0]["message"]["content"].is_string()) {
      throw DataError("generation response for concept '" + prompt.target_kc +
                      "' has no choices[0].message.content");
    }
    return reply["choices"][0]["message"]["content"].get<std::string>();
  }
  throw DataError("generation for concept '" + prompt.target_kc + "' failed after " +
                  std::to_string(options_.max_attempts) + " attempts (" +
                  last_error + ")");
}

std::string generate_description(TextClient& client,
                                 const DiffusionPrompt& prompt) {
  std::string text = client.generate(prompt);
  if (text.empty()) {
    throw DataError("client " + client.describe() +
                    " returned an empty description for concept '" +
                    prompt.target_kc + "'");
  }
  return text;
}

// ---- enrichment --------------------------------------------------------------

std::vector<std::string> enrichment_targets(const Corpus& corpus) {
  std::set<std::string> referenced;
  for (const Exercise& ex : corpus.exercises) {
    referenced.insert(ex.kcs.begin(), ex.kcs.end());
  }
  return {referenced.begin(), referenced.end()};
}

std::vector<DiffusionPrompt> build_all_prompts(const Corpus& corpus,
                                               const DiffusionConfig& cfg,
                                               uint64_t seed) {
  std::vector<DiffusionPrompt> prompts;
  for (const std::string& target : enrichment_targets(corpus)) {
    const KnowledgeConcept& kc = corpus.tree.at(target);
    std::vector<std::string> neg_ids;
    if (!kc.parent.empty()) {
      neg_ids = select_negatives(corpus.tree, target, cfg.n_negatives, seed);
    }
    std::vector<KnowledgeConcept> negatives;
    std::vector<std::vector<std::string>> neg_examples;
    for (const std::string& nid : neg_ids) {
      negatives.push_back(corpus.tree.at(nid));
      neg_examples.push_back(
          gather_examples(corpus.exercises, nid, cfg.example_cap, seed));
    }
    prompts.push_back(build_prompt(
        kc, gather_examples(corpus.exercises, target, cfg.example_cap, seed),
        negatives, neg_examples, cfg.tmpl));
  }
  return prompts;
}

void enrich_all(const Corpus& corpus, TextClient& client,
                const DiffusionConfig& cfg, uint64_t seed,
                DescriptionStore& store) {
  std::vector<DiffusionPrompt> todo;
  for (DiffusionPrompt& prompt : build_all_prompts(corpus, cfg, seed)) {
    if (!store.contains(prompt.target_kc)) todo.push_back(std::move(prompt));
  }
  if (todo.empty()) return;

  std::mutex mu;
  std::vector<std::string> failures;
  size_t completed = 0;
  std::atomic<size_t> next{0};

  auto worker = [&] {
    while (true) {
      const size_t i = next.fetch_add(1);
      if (i >= todo.size()) return;
      const DiffusionPrompt& prompt = todo[i];
      try {
        std::string text = generate_description(client, prompt);
        std::lock_guard<std::mutex> lock(mu);
        store.put(prompt.target_kc, text);
        ++completed;
      } catch (const std::exception& e) {
        std::lock_guard<std::mutex> lock(mu);
        failures.push_back(prompt.target_kc + ": " + e.what());
      }
    }
  };

  const int threads = std::max(1, std::min<int>(cfg.concurrency,
                                                static_cast<int>(todo.size())));
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (int t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  if (!failures.empty()) {
    std::sort(failures.begin(), failures.end());
    std::string msg = "enrichment finished " + std::to_string(completed) +
                      " of " + std::to_string(todo.size()) + " pending concepts; " +
                      std::to_string(failures.size()) + " failed: ";
    for (size_t i = 0; i < failures.size() && i < 5; ++i) {
      if (i) msg += "; ";
      msg += failures[i];
    }
    if (failures.size() > 5) msg += "; ...";
    throw DataError(msg);
  }
}

}  // namespace lmcd
