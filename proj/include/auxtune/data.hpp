#pragma once

#include <string>
#include <vector>

#include "auxtune/vocab.hpp"

namespace auxtune {

// One conditional example: generate `continuation` after `prefix`, steered by
// the attribute tokens (length m, usually one keyword token).
struct Example {
  std::vector<int> prefix;
  std::vector<int> attribute;
  std::vector<int> continuation;

  bool operator==(const Example& o) const {
    return prefix == o.prefix && attribute == o.attribute && continuation == o.continuation;
  }
};

// TSV, one example per line: keyword <TAB> prefix text <TAB> continuation text
void write_conditional_corpus(const std::string& path, const Vocab& vocab, const std::vector<Example>& examples);
std::vector<Example> read_conditional_corpus(const std::string& path, const Vocab& vocab);

// plain text, one sentence per line
void write_pretrain_corpus(const std::string& path, const Vocab& vocab, const std::vector<std::vector<int>>& lines);
std::vector<std::vector<int>> read_pretrain_corpus(const std::string& path, const Vocab& vocab);

}  // namespace auxtune
