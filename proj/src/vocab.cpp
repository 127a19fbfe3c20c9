#include "lmcd/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <json.hpp>

#include "lmcd/errors.hpp"
#include "lmcd/fileio.hpp"

namespace lmcd {

using nlohmann::json;

std::vector<std::string> tokenize(const std::string& text) {
  std::vector<std::string> out;
  std::string run;
  for (char c : text) {
    const unsigned char u = static_cast<unsigned char>(c);
    if (std::isalnum(u)) {
      run.push_back(static_cast<char>(std::tolower(u)));
      continue;
    }
    if (!run.empty()) {
      out.push_back(run);
      run.clear();
    }
    if (!std::isspace(u)) out.push_back(std::string(1, c));
  }
  if (!run.empty()) out.push_back(run);
  return out;
}

Vocabulary::Vocabulary() {
  add("<unk>");
  add("<pad>");
}

void Vocabulary::add(const std::string& token) {
  index_.emplace(token, static_cast<int>(tokens_.size()));
  tokens_.push_back(token);
}

Vocabulary Vocabulary::build(const std::vector<std::string>& texts,
                             int min_freq) {
  if (texts.empty()) throw ArgumentError("vocabulary: empty corpus");
  std::map<std::string, long> freq;
  for (const auto& text : texts) {
    for (const auto& tok : tokenize(text)) ++freq[tok];
  }
  std::vector<std::pair<long, std::string>> order;
  for (const auto& [tok, n] : freq) {
    if (n >= min_freq) order.emplace_back(-n, tok);
  }
  std::sort(order.begin(), order.end());
  Vocabulary v;
  for (const auto& [neg, tok] : order) {
    (void)neg;
    if (!v.contains(tok)) v.add(tok);
  }
  return v;
}

int Vocabulary::index_of(const std::string& token) const {
  auto it = index_.find(token);
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token_at(int index) const {
  if (index < 0 || index >= size()) {
    throw ArgumentError("vocabulary: index " + std::to_string(index) +
                        " out of range");
  }
  return tokens_[static_cast<size_t>(index)];
}

bool Vocabulary::contains(const std::string& token) const {
  return index_.count(token) > 0;
}

std::vector<int> Vocabulary::encode(const std::string& text) const {
  std::vector<int> ids;
  for (const auto& tok : tokenize(text)) ids.push_back(index_of(tok));
  return ids;
}

void Vocabulary::save(const std::string& path) const {
  json j = json::object();
  for (int i = 0; i < size(); ++i) j[tokens_[static_cast<size_t>(i)]] = i;
  write_file_atomic(path, j.dump(2) + "\n");
}

Vocabulary Vocabulary::load(const std::string& path) {
  json j = json::parse(read_file_text(path), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw DataError("vocab file '" + path + "' is not a json object");
  }
  std::vector<std::string> by_index(j.size());
  for (const auto& [tok, idx] : j.items()) {
    if (!idx.is_number_integer()) {
      throw DataError("vocab file '" + path + "': non-integer index");
    }
    const int i = idx.get<int>();
    if (i < 0 || i >= static_cast<int>(by_index.size()) ||
        !by_index[static_cast<size_t>(i)].empty()) {
      throw DataError("vocab file '" + path + "': indices not dense");
    }
    by_index[static_cast<size_t>(i)] = tok;
  }
  if (by_index.size() < 2 || by_index[0] != "<unk>" || by_index[1] != "<pad>") {
    throw DataError("vocab file '" + path + "': special tokens missing");
  }
  Vocabulary v;
  for (size_t i = 2; i < by_index.size(); ++i) v.add(by_index[i]);
  return v;
}

}  // namespace lmcd
