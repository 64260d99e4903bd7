#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "auxtune/aux_model.hpp"
#include "auxtune/data.hpp"
#include "auxtune/transformer.hpp"
#include "auxtune/vocab.hpp"

namespace auxtune {

struct TrainConfig {
  int batch_size = 16;
  int steps = 1000;
  float learning_rate = 3e-4f;
  int warmup_steps = 100;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.999f;
  float adam_eps = 1e-8f;
  float grad_clip_norm = 1.0f;
  int eval_every = 100;
  uint64_t seed = 1;

  void validate() const;
};

struct AdamState {
  std::vector<std::vector<float>> m, v;

  bool empty() const { return m.empty(); }
  void init(const std::vector<Tensor>& params);
  void check_shapes(const std::vector<Tensor>& params) const;
};

// one Adam update from the gradients accumulated on params; clears them after.
// Gradients are globally norm-clipped before entering the moments; the learning
// rate ramps linearly over warmup_steps. Returns the pre-clip gradient norm.
double adam_step(const std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg, int step);

// step and mean train loss since the previous row; metric fields are NaN until
// an eval callback fills them
struct MetricRow {
  int step = 0;
  double loss = std::numeric_limits<double>::quiet_NaN();
  double slor = std::numeric_limits<double>::quiet_NaN();
  double keyword_accuracy = std::numeric_limits<double>::quiet_NaN();
  double kl_to_oracle = std::numeric_limits<double>::quiet_NaN();
};

struct TrainReport {
  std::vector<MetricRow> rows;
  std::vector<double> step_losses;

  double final_loss() const { return step_losses.empty() ? 0.0 : step_losses.back(); }
};

using EvalFn = std::function<void(int step, MetricRow& row)>;

// NaN metric fields are written as empty cells
void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

// optimizer moments plus the step counter, persisted for exact resume
struct TrainState {
  int completed_steps = 0;
  AdamState opt;
};

void add_train_state(Checkpoint& ck, const TrainState& state);
TrainState read_train_state(const Checkpoint& ck, const std::vector<Tensor>& params);

// next-token loss over full rows [bos, sequence, eos]
TrainReport pretrain_into(CausalLM& model, TrainState& state, const TrainConfig& cfg,
                          const std::vector<std::vector<int>>& corpus, const Vocab& vocab, const EvalFn& eval = {});

struct PretrainResult {
  CausalLM model;
  TrainReport report;
};

PretrainResult pretrain(const TrainConfig& cfg, const std::vector<std::vector<int>>& corpus, const Vocab& vocab,
                        TransformerConfig model_cfg, const EvalFn& eval = {});

// loss over continuation positions of [bos, prefix, continuation, eos] rows;
// only the auxiliary parameters move, the base stays bit-identical
TrainReport train_auxiliary_into(AuxTunedModel& model, TrainState& state, const TrainConfig& cfg,
                                 const std::vector<Example>& corpus, const Vocab& vocab, const EvalFn& eval = {});

struct AuxTrainResult {
  AuxTunedModel model;
  TrainReport report;
};

AuxTrainResult train_auxiliary(const TrainConfig& cfg, const CausalLM& base, const std::vector<Example>& corpus,
                               const Vocab& vocab, const AuxConfig& aux_cfg, const EvalFn& eval = {});

// from-scratch model on rows [keyword, sep, prefix, continuation, eos] with the
// same continuation-only loss surface as the auxiliary path
TrainReport train_baseline_into(CausalLM& model, TrainState& state, const TrainConfig& cfg,
                                const std::vector<Example>& corpus, const Vocab& vocab, const EvalFn& eval = {});

PretrainResult train_baseline(const TrainConfig& cfg, const std::vector<Example>& corpus, const Vocab& vocab,
                              TransformerConfig model_cfg, const EvalFn& eval = {});

// forward-only mean per-token losses, accumulated in double
double lm_corpus_loss(const CausalLM& model, const std::vector<std::vector<int>>& corpus, const Vocab& vocab);
double lm_continuation_loss(const CausalLM& model, const std::vector<Example>& corpus, const Vocab& vocab);
double aux_corpus_loss(const AuxTunedModel& model, const std::vector<Example>& corpus, const Vocab& vocab);
double baseline_corpus_loss(const CausalLM& model, const std::vector<Example>& corpus, const Vocab& vocab);

}  // namespace auxtune
