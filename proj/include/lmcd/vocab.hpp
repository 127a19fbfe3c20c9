#pragma once

#include <string>
#include <unordered_map>
#include <vector>

namespace lmcd {

// Lowercase alphanumeric runs plus single punctuation marks; whitespace is a
// separator and never a token.
std::vector<std::string> tokenize(const std::string& text);

// Word-level vocabulary with two reserved slots. Index order after the
// specials is (-frequency, token), so rebuilding from the same corpus yields
// identical assignments.
class Vocabulary {
 public:
  static constexpr int kUnk = 0;
  static constexpr int kPad = 1;

  Vocabulary();

  static Vocabulary build(const std::vector<std::string>& texts,
                          int min_freq = 1);

  int size() const { return static_cast<int>(tokens_.size()); }
  int index_of(const std::string& token) const;  // kUnk when absent
  const std::string& token_at(int index) const;
  bool contains(const std::string& token) const;

  std::vector<int> encode(const std::string& text) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  void add(const std::string& token);

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

}  // namespace lmcd
