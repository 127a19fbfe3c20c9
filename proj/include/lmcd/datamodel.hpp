#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include "lmcd/errors.hpp"

namespace lmcd {

struct KnowledgeConcept {
  std::string id;
  std::string name;
  std::string parent;  // empty for the root
  int depth = 0;
  std::string description;  // enriched text, filled in after diffusion
};

// Rooted concept hierarchy: depth 0 root, depth 1 domains, leaves below.
class KnowledgeTree {
 public:
  explicit KnowledgeTree(std::vector<KnowledgeConcept> concepts);
  KnowledgeTree() = default;

  bool contains(const std::string& id) const { return index_.count(id) > 0; }
  const KnowledgeConcept& at(const std::string& id) const;
  KnowledgeConcept& at(const std::string& id);
  bool is_leaf(const std::string& id) const;
  const std::string& root() const { return root_; }
  size_t size() const { return concepts_.size(); }

  // Children of a node, sorted by id.
  const std::vector<std::string>& children(const std::string& id) const;
  // All concepts sorted by id.
  const std::vector<KnowledgeConcept>& concepts() const { return concepts_; }
  // Depth-1 nodes, sorted by id.
  std::vector<std::string> domains() const;
  // Leaf ids, sorted.
  std::vector<std::string> leaves() const;
  // Path root -> ... -> id.
  std::vector<std::string> route(const std::string& id) const;
  // Depth-1 ancestor (or the node itself at depth 1).  Root has none.
  const std::string& domain_of(const std::string& id) const;
  // Every node of the subtree rooted at id (including id), sorted.
  std::vector<std::string> subtree(const std::string& id) const;

 private:
  std::vector<KnowledgeConcept> concepts_;
  std::unordered_map<std::string, int> index_;
  std::unordered_map<std::string, std::vector<std::string>> children_;
  std::string root_;
  static const std::vector<std::string> kNoChildren;
};

struct Exercise {
  std::string id;
  std::string text;
  std::vector<std::string> kcs;  // leaf concept ids, order preserved
};

struct ResponseLog {
  std::string student;
  std::string exercise;
  int correct = 0;  // 0 or 1
};

struct Corpus {
  KnowledgeTree tree;
  std::vector<Exercise> exercises;  // file order
  std::vector<ResponseLog> logs;    // file order
  std::unordered_map<std::string, int> exercise_index;

  const Exercise& exercise(const std::string& id) const;
};

// Parses and cross-validates the three corpus files.  Malformed input
// raises DataError with file:line context.
Corpus load_corpus(const std::string& kcs_path,
                   const std::string& exercises_path,
                   const std::string& logs_path);

// One root->leaf path per concept the exercise references, in listing order.
std::vector<std::vector<std::string>> knowledge_routes(const KnowledgeTree& tree,
                                                       const Exercise& ex);

}  // namespace lmcd
