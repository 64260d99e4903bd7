#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "auxtune/aux_model.hpp"
#include "auxtune/data.hpp"
#include "auxtune/exact_task.hpp"
#include "auxtune/rng.hpp"
#include "auxtune/transformer.hpp"
#include "auxtune/vocab.hpp"

namespace auxtune {

struct DecodeConfig {
  int max_new_tokens = 24;
  float temperature = 0.8f;
  int top_k = 0;
  uint64_t seed = 1;

  void validate(int vocab_size) const;
};

// temperature 0 or top_k 1 selects the argmax (first index on ties)
int sample_from_logits(const std::vector<float>& logits, const DecodeConfig& cfg, Rng& rng);

// ancestral sampling; stops at eos (not emitted) or max_new_tokens or the
// model's context window
std::vector<int> sample_continuation(const CausalLM& model, const std::vector<int>& context,
                                     const DecodeConfig& cfg, int eos_id);
std::vector<int> sample_continuation(const AuxTunedModel& model, const std::vector<int>& attribute,
                                     const std::vector<int>& context, const DecodeConfig& cfg, int eos_id);

// fluency scorer: an independently trained LM plus a smoothed unigram table
struct ScoringLM {
  CausalLM model;
  std::vector<double> unigram_log_prob;

  void save_checkpoint(const std::string& path, const Vocab& vocab) const;
  static ScoringLM load_checkpoint(const std::string& path, Vocab* vocab_out = nullptr);
};

// add-one smoothed log P(token) over every vocab id
std::vector<double> unigram_log_probs(const std::vector<std::vector<int>>& corpus, int vocab_size);

// (log P_M(text | bos) - sum_i log P_unigram(text_i)) / |text|
double slor(const ScoringLM& scorer, const std::vector<int>& text, int bos_id);

// fraction of samples whose sequence contains the keyword's surface token
double keyword_accuracy(const std::vector<std::pair<int, std::vector<int>>>& samples);

// model conditional in task-symbol space: P(next symbol | attribute, prefix)
using ConditionalFn = std::function<std::vector<double>(int attribute, const std::vector<int>& prefix)>;

// mass-weighted KL(exact_conditional || model) averaged over prefix lengths
// 0..n-1; each length's contexts are weighted by their joint oracle mass
double kl_to_oracle(const ConditionalFn& model_conditional, const ExactTask& task);
double kl_to_oracle(const AuxTunedModel& model, const ExactTask& task);

struct EvalResult {
  double mean_slor = 0.0;
  double keyword_accuracy = 0.0;
};

// draws one continuation for (prompt, seed); seed varies per prompt
using SampleFn = std::function<std::vector<int>(const Example& prompt, uint64_t seed)>;

// one sample per dev prompt: mean SLOR of prefix + sample (reserved tokens
// stripped) and keyword containment of the sample
EvalResult eval_snapshot(const SampleFn& sampler, const std::vector<Example>& dev_set, const ScoringLM& scorer,
                         const Vocab& vocab, uint64_t seed);

SampleFn make_aux_sampler(AuxTunedModel model, const Vocab& vocab, DecodeConfig cfg);
SampleFn make_baseline_sampler(CausalLM model, const Vocab& vocab, DecodeConfig cfg);
SampleFn make_lm_sampler(CausalLM model, const Vocab& vocab, DecodeConfig cfg);

}  // namespace auxtune
