#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "auxtune/data.hpp"
#include "auxtune/vocab.hpp"

namespace auxtune {

// First-order Markov process per attribute, small enough to enumerate exactly.
// Symbols are task-local indices 0..num_symbols-1; the vocab maps them to
// tokens "t0".."t{v-1}" and attributes to keyword tokens "a0".."a{A-1}".
struct ExactTask {
  int num_symbols = 8;
  int num_attributes = 2;
  int seq_len = 5;
  std::vector<double> prior;
  std::vector<std::vector<double>> initial;
  std::vector<std::vector<std::vector<double>>> trans;
  Vocab vocab;

  static ExactTask random(int symbols, int attributes, int seq_len, uint64_t seed);

  void validate() const;

  int symbol_token(int symbol) const;
  int token_symbol(int token_id) const;
  int attribute_token(int attribute) const;
  int token_attribute(int token_id) const;

  bool operator==(const ExactTask& other) const;
};

// P(prefix | attribute) from the tables; empty prefix has likelihood 1
double prefix_likelihood(const ExactTask& task, int attribute, const std::vector<int>& prefix);

// P(attribute | prefix) by Bayes over the prior; prefix may be full length
std::vector<double> attribute_posterior(const ExactTask& task, const std::vector<int>& prefix);

// P(next | prefix, attribute); prefix length must be < seq_len
std::vector<double> exact_conditional(const ExactTask& task, int attribute, const std::vector<int>& prefix);

// P(next | prefix) = sum_a P(a | prefix) P(next | prefix, a)
std::vector<double> exact_marginal(const ExactTask& task, const std::vector<int>& prefix);

// P(attribute | prefix, next)
double exact_posterior(const ExactTask& task, int attribute, const std::vector<int>& prefix, int next_symbol);

// all symbol prefixes of the given length with their marginal mass P(prefix);
// masses sum to 1 per length
std::vector<std::pair<std::vector<int>, double>> enumerate_prefixes(const ExactTask& task, int length);

// ancestral samples of full length, emitted as vocab token ids; conditional
// mode keeps the drawn attribute token, marginal mode leaves attribute empty
std::vector<Example> sample_task_corpus(const ExactTask& task, int count, bool conditional, uint64_t seed);

void save_exact_task(const ExactTask& task, const std::string& path);
ExactTask load_exact_task(const std::string& path);

}  // namespace auxtune
