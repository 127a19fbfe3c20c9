#include "lmcd/datamodel.hpp"

#include <algorithm>
#include <fstream>

#include <json.hpp>

#include "lmcd/jsonl.hpp"

namespace lmcd {

using nlohmann::json;

const std::vector<std::string> KnowledgeTree::kNoChildren = {};

KnowledgeTree::KnowledgeTree(std::vector<KnowledgeConcept> concepts)
    : concepts_(std::move(concepts)) {
  if (concepts_.empty()) throw DataError("knowledge tree is empty");
  std::sort(concepts_.begin(), concepts_.end(),
            [](const auto& a, const auto& b) { return a.id < b.id; });
  for (size_t i = 0; i < concepts_.size(); ++i) {
    const KnowledgeConcept& kc = concepts_[i];
    if (kc.id.empty()) throw DataError("knowledge concept with empty id");
    if (!index_.emplace(kc.id, static_cast<int>(i)).second) {
      throw DataError("duplicate knowledge concept id '" + kc.id + "'");
    }
  }
  for (const KnowledgeConcept& kc : concepts_) {
    if (kc.parent.empty()) {
      if (!root_.empty()) {
        throw DataError("multiple roots: '" + root_ + "' and '" + kc.id + "'");
      }
      if (kc.depth != 0) {
        throw DataError("root '" + kc.id + "' must have depth 0");
      }
      root_ = kc.id;
      continue;
    }
    auto it = index_.find(kc.parent);
    if (it == index_.end()) {
      throw DataError("concept '" + kc.id + "' references missing parent '" +
                      kc.parent + "'");
    }
    // depth = parent depth + 1 also rules out parent cycles
    if (kc.depth != concepts_[it->second].depth + 1) {
      throw DataError("concept '" + kc.id + "' depth " +
                      std::to_string(kc.depth) + " does not match parent '" +
                      kc.parent + "' depth " +
                      std::to_string(concepts_[it->second].depth));
    }
    children_[kc.parent].push_back(kc.id);
  }
  if (root_.empty()) throw DataError("knowledge tree has no root");
  for (auto& [id, kids] : children_) std::sort(kids.begin(), kids.end());
}

const KnowledgeConcept& KnowledgeTree::at(const std::string& id) const {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown knowledge concept '" + id + "'");
  return concepts_[it->second];
}

KnowledgeConcept& KnowledgeTree::at(const std::string& id) {
  auto it = index_.find(id);
  if (it == index_.end()) throw DataError("unknown knowledge concept '" + id + "'");
  return concepts_[it->second];
}

bool KnowledgeTree::is_leaf(const std::string& id) const {
  at(id);
  return children_.count(id) == 0;
}

const std::vector<std::string>& KnowledgeTree::children(
    const std::string& id) const {
  auto it = children_.find(id);
  return it == children_.end() ? kNoChildren : it->second;
}

std::vector<std::string> KnowledgeTree::domains() const {
  std::vector<std::string> out;
  for (const KnowledgeConcept& kc : concepts_) {
    if (kc.depth == 1) out.push_back(kc.id);
  }
  return out;  // concepts_ is sorted by id
}

std::vector<std::string> KnowledgeTree::leaves() const {
  std::vector<std::string> out;
  for (const KnowledgeConcept& kc : concepts_) {
    if (children_.count(kc.id) == 0) out.push_back(kc.id);
  }
  return out;
}

std::vector<std::string> KnowledgeTree::route(const std::string& id) const {
  std::vector<std::string> path;
  std::string cur = id;
  while (true) {
    const KnowledgeConcept& kc = at(cur);
    path.push_back(cur);
    if (kc.parent.empty()) break;
    cur = kc.parent;
  }
  std::reverse(path.begin(), path.end());
  return path;
}

const std::string& KnowledgeTree::domain_of(const std::string& id) const {
  if (id == root_) {
    throw ArgumentError("root concept '" + id + "' belongs to no domain");
  }
  const KnowledgeConcept* kc = &at(id);
  while (kc->depth > 1) kc = &at(kc->parent);
  return kc->id;
}

std::vector<std::string> KnowledgeTree::subtree(const std::string& id) const {
  std::vector<std::string> out;
  std::vector<std::string> stack{id};
  at(id);
  while (!stack.empty()) {
    std::string cur = stack.back();
    stack.pop_back();
    out.push_back(cur);
    for (const std::string& kid : children(cur)) stack.push_back(kid);
  }
  std::sort(out.begin(), out.end());
  return out;
}

const Exercise& Corpus::exercise(const std::string& id) const {
  auto it = exercise_index.find(id);
  if (it == exercise_index.end()) {
    throw DataError("unknown exercise '" + id + "'");
  }
  return exercises[it->second];
}

namespace {

std::string field_string(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key) || !j[key].is_string()) {
    throw DataError(ctx + ": missing or non-string field '" + key + "'");
  }
  return j[key].get<std::string>();
}

}  // namespace

void for_each_jsonl(const std::string& path,
                    const std::function<void(const json&, const std::string&)>& fn) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // tolerate blank lines and a trailing \r from CRLF files
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string ctx = path + ":" + std::to_string(lineno);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error& e) {
      throw DataError(ctx + ": " + e.what());
    }
    if (!j.is_object()) throw DataError(ctx + ": expected a JSON object");
    fn(j, ctx);
  }
}

Corpus load_corpus(const std::string& kcs_path,
                   const std::string& exercises_path,
                   const std::string& logs_path) {
  Corpus corpus;

  std::vector<KnowledgeConcept> kcs;
  for_each_jsonl(kcs_path, [&](const json& j, const std::string& ctx) {
    KnowledgeConcept kc;
    kc.id = field_string(j, "id", ctx);
    kc.name = field_string(j, "name", ctx);
    if (!j.contains("parent") || (!j["parent"].is_string() && !j["parent"].is_null())) {
      throw DataError(ctx + ": field 'parent' must be a string or null");
    }
    if (j["parent"].is_string()) kc.parent = j["parent"].get<std::string>();
    if (!j.contains("depth") || !j["depth"].is_number_integer()) {
      throw DataError(ctx + ": missing or non-integer field 'depth'");
    }
    kc.depth = j["depth"].get<int>();
    if (kc.depth < 0) throw DataError(ctx + ": negative depth");
    kcs.push_back(std::move(kc));
  });
  try {
    corpus.tree = KnowledgeTree(std::move(kcs));
  } catch (const DataError& e) {
    throw DataError(kcs_path + ": " + e.what());
  }

  for_each_jsonl(exercises_path, [&](const json& j, const std::string& ctx) {
    Exercise ex;
    ex.id = field_string(j, "id", ctx);
    ex.text = field_string(j, "text", ctx);
    if (!j.contains("kcs") || !j["kcs"].is_array() || j["kcs"].empty()) {
      throw DataError(ctx + ": field 'kcs' must be a non-empty array");
    }
    for (const json& k : j["kcs"]) {
      if (!k.is_string()) throw DataError(ctx + ": non-string kc reference");
      const std::string kid = k.get<std::string>();
      if (!corpus.tree.contains(kid)) {
        throw DataError(ctx + ": exercise '" + ex.id +
                        "' references unknown concept '" + kid + "'");
      }
      if (!corpus.tree.is_leaf(kid)) {
        throw DataError(ctx + ": exercise '" + ex.id +
                        "' references non-leaf concept '" + kid + "'");
      }
      ex.kcs.push_back(kid);
    }
    if (!corpus.exercise_index
             .emplace(ex.id, static_cast<int>(corpus.exercises.size()))
             .second) {
      throw DataError(ctx + ": duplicate exercise id '" + ex.id + "'");
    }
    corpus.exercises.push_back(std::move(ex));
  });

  for_each_jsonl(logs_path, [&](const json& j, const std::string& ctx) {
    ResponseLog log;
    log.student = field_string(j, "student", ctx);
    if (log.student.empty()) throw DataError(ctx + ": empty student id");
    log.exercise = field_string(j, "exercise", ctx);
    if (!corpus.exercise_index.count(log.exercise)) {
      throw DataError(ctx + ": log references unknown exercise '" +
                      log.exercise + "'");
    }
    if (!j.contains("correct")) throw DataError(ctx + ": missing field 'correct'");
    const json& c = j["correct"];
    if (c.is_boolean()) {
      log.correct = c.get<bool>() ? 1 : 0;
    } else if (c.is_number_integer() &&
               (c.get<int>() == 0 || c.get<int>() == 1)) {
      log.correct = c.get<int>();
    } else {
      throw DataError(ctx + ": field 'correct' must be 0 or 1");
    }
    corpus.logs.push_back(std::move(log));
  });

  return corpus;
}

std::vector<std::vector<std::string>> knowledge_routes(const KnowledgeTree& tree,
                                                       const Exercise& ex) {
  std::vector<std::vector<std::string>> routes;
  routes.reserve(ex.kcs.size());
  for (const std::string& kid : ex.kcs) routes.push_back(tree.route(kid));
  return routes;
}

}  // namespace lmcd
