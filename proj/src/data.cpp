#include "auxtune/data.hpp"

#include <fstream>
#include <stdexcept>

namespace auxtune {

namespace {
std::ofstream open_out(const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  return out;
}

std::ifstream open_in(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return in;
}
}  // namespace

void write_conditional_corpus(const std::string& path, const Vocab& vocab, const std::vector<Example>& examples) {
  auto out = open_out(path);
  for (const auto& ex : examples) {
    if (ex.attribute.size() != 1 || !vocab.is_keyword_token(ex.attribute[0]))
      throw std::invalid_argument("conditional corpus rows need a single keyword attribute");
    out << vocab.keyword_surface(ex.attribute[0]) << '\t' << vocab.decode(ex.prefix) << '\t'
        << vocab.decode(ex.continuation) << '\n';
  }
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<Example> read_conditional_corpus(const std::string& path, const Vocab& vocab) {
  auto in = open_in(path);
  std::vector<Example> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const size_t t1 = line.find('\t');
    const size_t t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected keyword<TAB>prefix<TAB>continuation");
    Example ex;
    ex.attribute = {vocab.keyword_token_id(line.substr(0, t1))};
    ex.prefix = vocab.encode(line.substr(t1 + 1, t2 - t1 - 1));
    ex.continuation = vocab.encode(line.substr(t2 + 1));
    if (ex.continuation.empty())
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty continuation");
    out.push_back(std::move(ex));
  }
  return out;
}

void write_pretrain_corpus(const std::string& path, const Vocab& vocab, const std::vector<std::vector<int>>& lines) {
  auto out = open_out(path);
  for (const auto& ids : lines) out << vocab.decode(ids) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<std::vector<int>> read_pretrain_corpus(const std::string& path, const Vocab& vocab) {
  auto in = open_in(path);
  std::vector<std::vector<int>> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    out.push_back(vocab.encode(line));
  }
  return out;
}

}  // namespace auxtune
