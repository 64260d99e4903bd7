#pragma once

#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace auxtune {

// Whole-word token table. Reserved control tokens come first so their ids are
// stable for a fixed keyword inventory, then one token per keyword, then the
// word list.
class Vocab {
 public:
  static constexpr const char* kPad = "<pad>";
  static constexpr const char* kBos = "<s>";
  static constexpr const char* kEos = "</s>";
  static constexpr const char* kSep = "<sep>";

  Vocab() = default;

  static Vocab build(const std::vector<std::string>& keywords, const std::vector<std::string>& words) {
    Vocab v;
    v.push(kPad);
    v.push(kBos);
    v.push(kEos);
    v.push(kSep);
    v.num_keywords_ = static_cast<int>(keywords.size());
    for (const auto& k : keywords) v.push("<kw:" + k + ">");
    for (const auto& w : words) v.push(w);
    return v;
  }

  int size() const { return static_cast<int>(tokens_.size()); }
  int pad_id() const { return 0; }
  int bos_id() const { return 1; }
  int eos_id() const { return 2; }
  int sep_id() const { return 3; }
  int num_reserved() const { return 4 + num_keywords_; }
  int num_keywords() const { return num_keywords_; }

  bool is_reserved(int id) const { return id >= 0 && id < num_reserved(); }
  bool is_keyword_token(int id) const { return id >= 4 && id < 4 + num_keywords_; }

  int id_of(const std::string& token) const {
    auto it = index_.find(token);
    if (it == index_.end()) throw std::out_of_range("unknown token '" + token + "'");
    return it->second;
  }

  bool contains(const std::string& token) const { return index_.count(token) > 0; }

  const std::string& token(int id) const {
    if (id < 0 || id >= size()) throw std::out_of_range("token id " + std::to_string(id) + " out of range");
    return tokens_[static_cast<size_t>(id)];
  }

  // reserved token id for a keyword's surface word
  int keyword_token_id(const std::string& surface) const { return id_of("<kw:" + surface + ">"); }

  // surface word for a reserved keyword token
  std::string keyword_surface(int id) const {
    const std::string& t = token(id);
    if (!is_keyword_token(id)) throw std::invalid_argument("token '" + t + "' is not a keyword token");
    return t.substr(4, t.size() - 5);
  }

  std::vector<int> encode(const std::string& text) const {
    std::vector<int> out;
    std::istringstream is(text);
    std::string w;
    while (is >> w) out.push_back(id_of(w));
    return out;
  }

  std::string decode(const std::vector<int>& ids, bool skip_control = false) const {
    std::string out;
    for (int id : ids) {
      if (skip_control && is_reserved(id)) continue;
      if (!out.empty()) out += ' ';
      out += token(id);
    }
    return out;
  }

  // single line "num_keywords token token ..." for checkpoint headers
  std::string serialize() const {
    std::string out = std::to_string(num_keywords_);
    for (const auto& t : tokens_) out += ' ' + t;
    return out;
  }

  static Vocab deserialize(const std::string& line) {
    std::istringstream is(line);
    Vocab v;
    if (!(is >> v.num_keywords_)) throw std::runtime_error("vocab header line is malformed");
    std::string t;
    while (is >> t) v.push(t);
    if (v.size() < v.num_reserved()) throw std::runtime_error("vocab header shorter than its reserved block");
    return v;
  }

  bool operator==(const Vocab& o) const { return tokens_ == o.tokens_ && num_keywords_ == o.num_keywords_; }

 private:
  void push(const std::string& t) {
    if (index_.count(t)) throw std::invalid_argument("duplicate token '" + t + "'");
    index_[t] = static_cast<int>(tokens_.size());
    tokens_.push_back(t);
  }

  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
  int num_keywords_ = 0;
};

}  // namespace auxtune
