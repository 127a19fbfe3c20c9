#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "lmcd/datamodel.hpp"

namespace lmcd {

// Text layout used to build enrichment prompts.  All pieces can be replaced
// from a JSON file ({"system": ..., "kc_header": ...}); "{name}" in the
// header strings is substituted with the concept name.
struct PromptTemplate {
  std::string system =
      "If you are a seasoned math teacher, you need to generate explanations "
      "for each knowledge concept in a knowledge graph. I will provide you "
      "with the name of the knowledge concept and corresponding example "
      "problems, as well as names and example problems of distractor "
      "knowledge concepts that are not equivalent to it. Please carefully "
      "compare them and generate a core explanation for each knowledge "
      "concept.";
  std::string kc_header = "KC Name: {name}";
  std::string examples_header = "Example exercises for {name}:";
  std::string separator = "------------------------------------------------";
  std::string distractor_header = "Distractor KCs";

  static PromptTemplate load(const std::string& path);
};

struct DiffusionPrompt {
  std::string system;
  std::string user;
  std::string target_kc;
  std::vector<std::string> negatives;
};

// kc-id -> enriched description.  Ordered map so saves are byte-stable.
class DescriptionStore {
 public:
  bool contains(const std::string& kc) const { return entries_.count(kc) > 0; }
  const std::string& get(const std::string& kc) const;
  void put(const std::string& kc, const std::string& text);
  size_t size() const { return entries_.size(); }
  auto begin() const { return entries_.begin(); }
  auto end() const { return entries_.end(); }

  // descriptions.jsonl: one {"kc": ..., "description": ...} per line,
  // sorted by kc id.
  static DescriptionStore load(const std::string& path);
  void save(const std::string& path) const;

 private:
  std::map<std::string, std::string> entries_;
};

using SimilarityFn =
    std::function<double(const std::string&, const std::string&)>;

// Cosine similarity of character-trigram count vectors (names shorter than
// three characters count as a single pseudo-trigram).  Identical strings
// score 1.0.
double trigram_cosine(const std::string& a, const std::string& b);

// Top-n siblings of `target`, ranked by descending name similarity, ties
// broken by ascending id.  The ranking is fully deterministic; `seed` is
// accepted for interface symmetry with the other samplers but unused.
std::vector<std::string> select_negatives(const KnowledgeTree& tree,
                                          const std::string& target, int n,
                                          const SimilarityFn& similarity,
                                          uint64_t seed = 0);
std::vector<std::string> select_negatives(const KnowledgeTree& tree,
                                          const std::string& target, int n,
                                          uint64_t seed = 0);

// Up to `cap` texts of exercises that assess `kc`, seeded shuffle then cut.
std::vector<std::string> gather_examples(const std::vector<Exercise>& exercises,
                                         const std::string& kc, int cap,
                                         uint64_t seed);

DiffusionPrompt build_prompt(const KnowledgeConcept& target,
                             const std::vector<std::string>& target_examples,
                             const std::vector<KnowledgeConcept>& negatives,
                             const std::vector<std::vector<std::string>>& negative_examples,
                             const PromptTemplate& tmpl = PromptTemplate());

// Generation backend; implementations must be safe to call from multiple
// threads at once.
class TextClient {
 public:
  virtual ~TextClient() = default;
  virtual std::string generate(const DiffusionPrompt& prompt) = 0;
  virtual std::string describe() const = 0;  // for logs/errors
};

// Replays canned descriptions from a fixtures file (descriptions.jsonl
// schema).  Missing fixture -> DataError naming the kc.
class OfflineClient : public TextClient {
 public:
  explicit OfflineClient(const std::string& fixtures_path);
  std::string generate(const DiffusionPrompt& prompt) override;
  std::string describe() const override;

 private:
  DescriptionStore fixtures_;
  std::string path_;
};

struct HttpClientOptions {
  std::string base_url;  // e.g. http://localhost:8080
  std::string path = "/v1/chat/completions";
  std::string model = "gpt-4o";
  std::string api_key;  // filled from $LMCD_LLM_KEY when empty
  double temperature = 0.7;
  int max_attempts = 3;
  int backoff_ms = 250;
  int timeout_s = 60;
};

// Chat-completion client: retries transport errors, 429 and 5xx with
// exponential backoff, fails fast on other statuses.
class HttpClient : public TextClient {
 public:
  explicit HttpClient(HttpClientOptions options);
  std::string generate(const DiffusionPrompt& prompt) override;
  std::string describe() const override;

 private:
  HttpClientOptions options_;
};

// Validates and returns one description for the prompt's target.
std::string generate_description(TextClient& client,
                                 const DiffusionPrompt& prompt);

struct DiffusionConfig {
  int n_negatives = 3;
  int example_cap = 5;
  int concurrency = 1;
  PromptTemplate tmpl;
};

// Leaf KCs referenced by at least one exercise, sorted; the population that
// must end up covered in the store.
std::vector<std::string> enrichment_targets(const Corpus& corpus);

// Prompts for every target, in target order (used by enrich_all and by the
// --emit-prompts path).
std::vector<DiffusionPrompt> build_all_prompts(const Corpus& corpus,
                                               const DiffusionConfig& cfg,
                                               uint64_t seed);

// Fills `store` so every enrichment target has a description; entries already
// present are kept as-is (idempotent resume).  On any generation failure the
// successfully generated entries stay in `store` and a DataError summarising
// completed/failed targets is thrown.
void enrich_all(const Corpus& corpus, TextClient& client,
                const DiffusionConfig& cfg, uint64_t seed,
                DescriptionStore& store);

}  // namespace lmcd
