#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "auxtune/data.hpp"
#include "auxtune/vocab.hpp"

namespace auxtune {

struct SlotPool {
  std::string name;
  std::vector<std::string> words;
};

// one templated sentence shape: a sequence of slot pool names
struct Family {
  double weight = 0.0;
  std::vector<std::string> slots;
};

struct KeywordSpec {
  std::string surface;
  double weight = 0.0;
  std::vector<Family> continuations;
};

// Sentences are prefix + connective keyword + continuation, drawn from
// weighted families whose slots are filled uniformly from closed word pools.
struct GrammarSpec {
  std::vector<SlotPool> pools;
  std::vector<Family> prefix_families;
  std::vector<KeywordSpec> keywords;
  uint64_t seed = 1;

  const SlotPool& pool(const std::string& name) const;
  void validate() const;
};

GrammarSpec default_grammar(uint64_t seed);

// reserved block plus every pool word and keyword surface
Vocab build_vocab(const GrammarSpec& spec);

// full sentences with the keyword inside, keyword marginalized over its
// weights; no reserved tokens appear
std::vector<std::vector<int>> gen_pretrain_corpus(const GrammarSpec& spec, const Vocab& vocab, int count);

// prefix/attribute/continuation rows; the continuation opens with the
// keyword's surface word, the attribute is the reserved keyword token
std::vector<Example> gen_conditional_corpus(const GrammarSpec& spec, const Vocab& vocab, int count);

// expected word frequency per vocab id under the sentence distribution
std::vector<double> analytic_unigram(const GrammarSpec& spec, const Vocab& vocab);

// re-parses generated token sequences against the same templates
class GrammarRecognizer {
 public:
  GrammarRecognizer(const GrammarSpec& spec, const Vocab& vocab);
  bool sentence(const std::vector<int>& tokens) const;
  bool example(const Example& ex) const;

 private:
  bool family_matches(const Family& f, const int* tokens, size_t len) const;
  int keyword_index(int token_id) const;

  const GrammarSpec& spec_;
  std::unordered_map<std::string, std::unordered_set<int>> pool_ids_;
  std::vector<int> keyword_surface_ids_;
  std::vector<int> keyword_token_ids_;
};

}  // namespace auxtune
