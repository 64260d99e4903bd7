#pragma once

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "auxtune/checkpoint.hpp"
#include "auxtune/rng.hpp"
#include "auxtune/tensor.hpp"
#include "auxtune/transformer.hpp"

namespace auxtune {

enum class AuxVariant { Direct, FeatureExtraction };

inline std::string to_string(AuxVariant v) {
  return v == AuxVariant::Direct ? "direct" : "feature_extraction";
}

inline AuxVariant aux_variant_from_string(const std::string& s) {
  if (s == "direct") return AuxVariant::Direct;
  if (s == "feature_extraction" || s == "feature") return AuxVariant::FeatureExtraction;
  throw std::invalid_argument("unknown auxiliary variant '" + s + "' (expected direct or feature)");
}

struct AuxConfig {
  AuxVariant variant = AuxVariant::Direct;
  TransformerConfig stack;     // auxiliary transformer dimensions
  int feature_layers = 0;      // feature variant: base layers tapped for features
};

// softmax computed in double; the normalization step shared by every
// conditional in the toolkit
inline std::vector<double> softmax_double(const std::vector<float>& logits) {
  if (logits.empty()) throw std::invalid_argument("softmax_double: empty logits");
  double mx = logits[0];
  for (float v : logits) mx = std::max(mx, static_cast<double>(v));
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (size_t i = 0; i < logits.size(); ++i) {
    out[i] = std::exp(static_cast<double>(logits[i]) - mx);
    sum += out[i];
  }
  for (auto& v : out) v /= sum;
  return out;
}

// P over the vocabulary from the two additive logit terms
inline std::vector<double> combined_conditional(const std::vector<float>& base_logits,
                                                const std::vector<float>& aux_logits) {
  if (base_logits.size() != aux_logits.size())
    throw std::invalid_argument("combined_conditional: size mismatch");
  std::vector<float> sum(base_logits.size());
  for (size_t i = 0; i < sum.size(); ++i) sum[i] = base_logits[i] + aux_logits[i];
  return softmax_double(sum);
}

// A frozen base LM plus a trainable auxiliary pathway whose logits add to the
// base logits. The auxiliary sees the attribute; the base never does.
class AuxTunedModel {
 public:
  AuxTunedModel() = default;

  static AuxTunedModel create(const CausalLM& base, const AuxConfig& cfg, uint64_t seed) {
    AuxTunedModel m;
    m.base_ = base;
    m.base_.set_trainable(false);
    m.variant_ = cfg.variant;
    m.feature_layers_ = cfg.feature_layers;

    TransformerConfig stack = cfg.stack;
    stack.vocab_size = base.config().vocab_size;
    m.aux_ = CausalLM::random_init(stack, mix_seed(seed, 1));

    if (cfg.variant == AuxVariant::FeatureExtraction) {
      if (cfg.feature_layers <= 0 || cfg.feature_layers > base.config().num_layers)
        throw std::invalid_argument("feature_layers " + std::to_string(cfg.feature_layers) +
                                    " out of range for a base with " + std::to_string(base.config().num_layers) +
                                    " layers");
      m.zero_unused_aux_tables();
      const int dl = base.config().d_model, da = stack.d_model;
      Rng rng(mix_seed(seed, 2));
      m.proj_in_w_ = normal_tensor(rng, {dl, da}, stack.init_stddev);
      m.proj_in_b_ = Tensor::zeros({da}, true);
      m.proj_out_w_ = normal_tensor(rng, {da, dl}, stack.init_stddev);
      m.proj_out_b_ = Tensor::zeros({dl}, true);
      m.z_att_ = Tensor::zeros({da}, true);
      m.z_txt_ = Tensor::zeros({da}, true);
    }
    return m;
  }

  AuxVariant variant() const { return variant_; }
  int feature_layers() const { return feature_layers_; }
  const CausalLM& base() const { return base_; }
  const CausalLM& aux_stack() const { return aux_; }

  std::vector<std::pair<std::string, Tensor>> named_trainable_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    for (auto& [name, t] : aux_.named_parameters()) {
      if (variant_ == AuxVariant::FeatureExtraction && (name == "tok_emb" || name == "pos_emb")) continue;
      out.emplace_back("aux." + name, t);
    }
    if (variant_ == AuxVariant::FeatureExtraction) {
      out.emplace_back("fe.proj_in.w", proj_in_w_);
      out.emplace_back("fe.proj_in.b", proj_in_b_);
      out.emplace_back("fe.proj_out.w", proj_out_w_);
      out.emplace_back("fe.proj_out.b", proj_out_b_);
      out.emplace_back("fe.z_att", z_att_);
      out.emplace_back("fe.z_txt", z_txt_);
    }
    return out;
  }

  std::vector<Tensor> trainable_parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_trainable_parameters()) out.push_back(t);
    return out;
  }

  int64_t trainable_parameter_count() const {
    int64_t n = 0;
    for (const auto& t : trainable_parameters()) n += t.numel();
    return n;
  }

  // auxiliary logits for every text position: row j scores the token that
  // follows text[0..j], conditioned on the attribute
  Tensor aux_sequence_logits(Tape& tape, const std::vector<int>& attribute, const std::vector<int>& text) const {
    if (text.empty()) throw std::invalid_argument("aux_sequence_logits: empty text");
    Tensor h = aux_hidden(tape, attribute, text);
    std::vector<int> rows(text.size());
    std::iota(rows.begin(), rows.end(), static_cast<int>(attribute.size()));
    Tensor picked = tape.gather_rows(h, rows);
    return head(tape, picked);
  }

  // base logits plus auxiliary logits, in the base vocabulary space
  Tensor combined_sequence_logits(Tape& tape, const std::vector<int>& attribute,
                                  const std::vector<int>& text) const {
    Tensor base_lg = base_.logits(tape, text);
    return tape.add(base_lg, aux_sequence_logits(tape, attribute, text));
  }

  // next-token auxiliary logits after the full prefix
  std::vector<float> aux_logits(const std::vector<int>& attribute, const std::vector<int>& prefix) const {
    Tape tape(false);
    Tensor h = aux_hidden(tape, attribute, prefix);
    const int last = h.dim(0) - 1;
    Tensor row = head(tape, tape.gather_rows(h, {last}));
    return row.values();
  }

  std::vector<float> aux_logits_direct(const std::vector<int>& attribute, const std::vector<int>& prefix) const {
    if (variant_ != AuxVariant::Direct)
      throw std::invalid_argument("aux_logits_direct called on a feature_extraction model");
    return aux_logits(attribute, prefix);
  }

  std::vector<float> aux_logits_feature(const std::vector<int>& attribute, const std::vector<int>& prefix) const {
    if (variant_ != AuxVariant::FeatureExtraction)
      throw std::invalid_argument("aux_logits_feature called on a direct model");
    return aux_logits(attribute, prefix);
  }

  // next-token combined logits; the base term is a function of the prefix
  // alone and never sees the attribute
  std::vector<float> combined_logits(const std::vector<int>& attribute, const std::vector<int>& prefix) const {
    if (prefix.empty()) throw std::invalid_argument("combined_logits: empty prefix");
    Tape tape(false);
    Tensor base_lg = base_.logits(tape, prefix);
    const std::vector<float> aux = aux_logits(attribute, prefix);
    std::vector<float> out(aux.size());
    const int last = base_lg.dim(0) - 1;
    for (size_t j = 0; j < out.size(); ++j) out[j] = base_lg.at(last, static_cast<int>(j)) + aux[j];
    return out;
  }

  std::vector<double> conditional_distribution(const std::vector<int>& attribute,
                                               const std::vector<int>& prefix) const {
    return softmax_double(combined_logits(attribute, prefix));
  }

  void add_to_checkpoint(Checkpoint& ck) const {
    ck.set_meta("model", "aux_tuned");
    ck.set_meta("variant", to_string(variant_));
    if (variant_ == AuxVariant::FeatureExtraction) ck.set_meta("L", std::to_string(feature_layers_));
    base_.add_to_checkpoint(ck, "base.");
    aux_.add_to_checkpoint(ck, "aux.");
    if (variant_ == AuxVariant::FeatureExtraction) {
      add_fe_tensor(ck, "fe.proj_in.w", proj_in_w_);
      add_fe_tensor(ck, "fe.proj_in.b", proj_in_b_);
      add_fe_tensor(ck, "fe.proj_out.w", proj_out_w_);
      add_fe_tensor(ck, "fe.proj_out.b", proj_out_b_);
      add_fe_tensor(ck, "fe.z_att", z_att_);
      add_fe_tensor(ck, "fe.z_txt", z_txt_);
    }
  }

  void save_checkpoint(const std::string& path) const {
    Checkpoint ck;
    add_to_checkpoint(ck);
    ck.save(path);
  }

  static AuxTunedModel from_checkpoint(const Checkpoint& ck) {
    if (ck.meta_at("model") != "aux_tuned")
      throw std::runtime_error("checkpoint is not an auxiliary-tuned model");
    AuxTunedModel m;
    m.base_ = CausalLM::from_checkpoint(ck, "base.");
    m.base_.set_trainable(false);
    m.aux_ = CausalLM::from_checkpoint(ck, "aux.");
    m.variant_ = aux_variant_from_string(ck.meta_at("variant"));
    if (m.variant_ == AuxVariant::FeatureExtraction) {
      m.feature_layers_ = static_cast<int>(ck.meta_int("L"));
      m.zero_unused_aux_tables();
      m.proj_in_w_ = read_fe_tensor(ck, "fe.proj_in.w");
      m.proj_in_b_ = read_fe_tensor(ck, "fe.proj_in.b");
      m.proj_out_w_ = read_fe_tensor(ck, "fe.proj_out.w");
      m.proj_out_b_ = read_fe_tensor(ck, "fe.proj_out.b");
      m.z_att_ = read_fe_tensor(ck, "fe.z_att");
      m.z_txt_ = read_fe_tensor(ck, "fe.z_txt");
    }
    return m;
  }

  static AuxTunedModel load_checkpoint(const std::string& path) { return from_checkpoint(Checkpoint::load(path)); }

 private:
  static Tensor normal_tensor(Rng& rng, std::vector<int> shape, float stddev) {
    std::vector<float> v(shape_numel(shape));
    rng.fill_normal(v, stddev);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  static void add_fe_tensor(Checkpoint& ck, const std::string& name, const Tensor& t) {
    ck.add_tensor(name, t.shape(), t.values());
  }

  static Tensor read_fe_tensor(const Checkpoint& ck, const std::string& name) {
    const NamedTensor& src = ck.tensor_at(name);
    return Tensor::from(src.shape, src.data, true);
  }

  // the feature variant never reads the auxiliary token or position tables
  void zero_unused_aux_tables() {
    for (auto& [name, t] : aux_.named_parameters())
      if (name == "tok_emb" || name == "pos_emb") {
        auto& vals = t.mutable_values();
        std::fill(vals.begin(), vals.end(), 0.0f);
        t.set_requires_grad(false);
      }
  }

  // final auxiliary hidden states over [attribute ; text], one row per concat
  // position, already final-normed
  Tensor aux_hidden(Tape& tape, const std::vector<int>& attribute, const std::vector<int>& text) const {
    if (attribute.empty() && text.empty()) throw std::invalid_argument("aux_hidden: empty input");
    if (variant_ == AuxVariant::Direct) {
      std::vector<int> concat(attribute);
      concat.insert(concat.end(), text.begin(), text.end());
      return aux_.forward_hidden(tape, concat);
    }
    const int total = static_cast<int>(attribute.size() + text.size());
    if (total > aux_.config().max_seq_len)
      throw std::invalid_argument("aux_hidden: " + std::to_string(total) +
                                  " positions exceed auxiliary max_seq_len " +
                                  std::to_string(aux_.config().max_seq_len));
    std::vector<Tensor> blocks;
    if (!attribute.empty())
      blocks.push_back(project_block(tape, base_.forward_prefix_layers(tape, attribute, feature_layers_), z_att_));
    if (!text.empty())
      blocks.push_back(project_block(tape, base_.forward_prefix_layers(tape, text, feature_layers_), z_txt_));
    Tensor cat = blocks.size() == 1 ? blocks[0] : tape.concat_rows(blocks);
    return aux_.final_norm(tape, aux_.run_layers(tape, cat, 0, aux_.config().num_layers));
  }

  Tensor project_block(Tape& tape, const Tensor& features, const Tensor& z) const {
    return tape.add_row(tape.add_row(tape.matmul(features, proj_in_w_), proj_in_b_), z);
  }

  // the output head: tied to E_AUX in the direct variant, to E_LM through the
  // output projection in the feature variant
  Tensor head(Tape& tape, const Tensor& h) const {
    if (variant_ == AuxVariant::Direct) return tape.matmul_nt(h, aux_.token_embedding());
    Tensor projected = tape.add_row(tape.matmul(h, proj_out_w_), proj_out_b_);
    return tape.matmul_nt(projected, base_.token_embedding());
  }

  CausalLM base_;
  CausalLM aux_;
  AuxVariant variant_ = AuxVariant::Direct;
  int feature_layers_ = 0;
  Tensor proj_in_w_, proj_in_b_, proj_out_w_, proj_out_b_, z_att_, z_txt_;
};

}  // namespace auxtune
