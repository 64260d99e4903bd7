#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "auxtune/checkpoint.hpp"
#include "auxtune/rng.hpp"
#include "auxtune/tensor.hpp"

namespace auxtune {

struct TransformerConfig {
  int vocab_size = 0;
  int d_model = 128;
  int num_layers = 4;
  int num_heads = 4;
  int d_ff = 0;  // 0 means 4 * d_model
  int max_seq_len = 64;
  float layer_norm_eps = 1e-5f;
  float init_stddev = 0.02f;

  int ff_dim() const { return d_ff > 0 ? d_ff : 4 * d_model; }

  void validate() const {
    if (vocab_size <= 0) throw std::invalid_argument("config: vocab_size must be positive");
    if (d_model <= 0 || num_layers <= 0 || max_seq_len <= 0)
      throw std::invalid_argument("config: dimensions must be positive");
    if (num_heads <= 0 || d_model % num_heads != 0)
      throw std::invalid_argument("config: num_heads " + std::to_string(num_heads) + " must divide d_model " +
                                  std::to_string(d_model));
  }
};

// Decoder-only causal LM. Pre-norm blocks, learned absolute positions, GELU
// feed-forward, output head tied to the token embedding.
template <class S>
class CausalLMT {
 public:
  using Tensor = TensorT<S>;
  using Tape = TapeT<S>;

  struct Layer {
    Tensor ln1_gain, ln1_bias;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor ln2_gain, ln2_bias;
    Tensor w1, b1, w2, b2;
  };

  CausalLMT() = default;

  static CausalLMT random_init(const TransformerConfig& cfg, uint64_t seed) {
    cfg.validate();
    CausalLMT m;
    m.cfg_ = cfg;
    Rng rng(seed);
    const int d = cfg.d_model, ff = cfg.ff_dim();
    m.tok_emb_ = normal_tensor(rng, {cfg.vocab_size, d}, cfg.init_stddev);
    m.pos_emb_ = normal_tensor(rng, {cfg.max_seq_len, d}, cfg.init_stddev);
    m.layers_.resize(cfg.num_layers);
    for (auto& l : m.layers_) {
      l.ln1_gain = Tensor::full({d}, S(1), true);
      l.ln1_bias = Tensor::zeros({d}, true);
      l.wq = normal_tensor(rng, {d, d}, cfg.init_stddev);
      l.bq = Tensor::zeros({d}, true);
      l.wk = normal_tensor(rng, {d, d}, cfg.init_stddev);
      l.bk = Tensor::zeros({d}, true);
      l.wv = normal_tensor(rng, {d, d}, cfg.init_stddev);
      l.bv = Tensor::zeros({d}, true);
      l.wo = normal_tensor(rng, {d, d}, cfg.init_stddev);
      l.bo = Tensor::zeros({d}, true);
      l.ln2_gain = Tensor::full({d}, S(1), true);
      l.ln2_bias = Tensor::zeros({d}, true);
      l.w1 = normal_tensor(rng, {d, ff}, cfg.init_stddev);
      l.b1 = Tensor::zeros({ff}, true);
      l.w2 = normal_tensor(rng, {ff, d}, cfg.init_stddev);
      l.b2 = Tensor::zeros({d}, true);
    }
    m.final_gain_ = Tensor::full({d}, S(1), true);
    m.final_bias_ = Tensor::zeros({d}, true);
    return m;
  }

  const TransformerConfig& config() const { return cfg_; }
  const Tensor& token_embedding() const { return tok_emb_; }

  std::vector<std::pair<std::string, Tensor>> named_parameters() const {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_emb", tok_emb_);
    out.emplace_back("pos_emb", pos_emb_);
    for (size_t i = 0; i < layers_.size(); ++i) {
      const std::string p = "layers." + std::to_string(i) + ".";
      const Layer& l = layers_[i];
      out.emplace_back(p + "ln1.gain", l.ln1_gain);
      out.emplace_back(p + "ln1.bias", l.ln1_bias);
      out.emplace_back(p + "attn.wq", l.wq);
      out.emplace_back(p + "attn.bq", l.bq);
      out.emplace_back(p + "attn.wk", l.wk);
      out.emplace_back(p + "attn.bk", l.bk);
      out.emplace_back(p + "attn.wv", l.wv);
      out.emplace_back(p + "attn.bv", l.bv);
      out.emplace_back(p + "attn.wo", l.wo);
      out.emplace_back(p + "attn.bo", l.bo);
      out.emplace_back(p + "ln2.gain", l.ln2_gain);
      out.emplace_back(p + "ln2.bias", l.ln2_bias);
      out.emplace_back(p + "ffn.w1", l.w1);
      out.emplace_back(p + "ffn.b1", l.b1);
      out.emplace_back(p + "ffn.w2", l.w2);
      out.emplace_back(p + "ffn.b2", l.b2);
    }
    out.emplace_back("final_ln.gain", final_gain_);
    out.emplace_back("final_ln.bias", final_bias_);
    return out;
  }

  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  int64_t parameter_count() const {
    int64_t n = 0;
    for (const auto& t : parameters()) n += t.numel();
    return n;
  }

  void set_trainable(bool on) {
    for (auto& t : parameters()) t.set_requires_grad(on);
  }

  bool trainable() const { return tok_emb_.requires_grad(); }

  // token + learned position embeddings; position ids start at pos_offset
  Tensor embed(Tape& tape, const std::vector<int>& tokens, int pos_offset = 0) const {
    if (tokens.empty()) throw std::invalid_argument("embed: empty token sequence");
    if (pos_offset < 0 || pos_offset + static_cast<int>(tokens.size()) > cfg_.max_seq_len)
      throw std::invalid_argument("embed: sequence of " + std::to_string(tokens.size()) + " at offset " +
                                  std::to_string(pos_offset) + " exceeds max_seq_len " +
                                  std::to_string(cfg_.max_seq_len));
    std::vector<int> pos(tokens.size());
    std::iota(pos.begin(), pos.end(), pos_offset);
    return tape.add(tape.gather_rows(tok_emb_, tokens), tape.gather_rows(pos_emb_, pos));
  }

  // pre-norm blocks [begin, end) applied to hidden states h
  Tensor run_layers(Tape& tape, Tensor h, int begin, int end) const {
    if (begin < 0 || end > cfg_.num_layers || begin > end)
      throw std::invalid_argument("run_layers: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                                  ") for " + std::to_string(cfg_.num_layers) + " layers");
    const S eps = static_cast<S>(cfg_.layer_norm_eps);
    for (int i = begin; i < end; ++i) {
      const Layer& l = layers_[static_cast<size_t>(i)];
      Tensor n1 = tape.layer_norm(h, l.ln1_gain, l.ln1_bias, eps);
      Tensor q = tape.add_row(tape.matmul(n1, l.wq), l.bq);
      Tensor k = tape.add_row(tape.matmul(n1, l.wk), l.bk);
      Tensor v = tape.add_row(tape.matmul(n1, l.wv), l.bv);
      Tensor att = tape.attention(q, k, v, cfg_.num_heads, true);
      h = tape.add(h, tape.add_row(tape.matmul(att, l.wo), l.bo));
      Tensor n2 = tape.layer_norm(h, l.ln2_gain, l.ln2_bias, eps);
      Tensor f = tape.gelu(tape.add_row(tape.matmul(n2, l.w1), l.b1));
      h = tape.add(h, tape.add_row(tape.matmul(f, l.w2), l.b2));
    }
    return h;
  }

  Tensor final_norm(Tape& tape, const Tensor& h) const {
    return tape.layer_norm(h, final_gain_, final_bias_, static_cast<S>(cfg_.layer_norm_eps));
  }

  Tensor logits_from_hidden(Tape& tape, const Tensor& h) const { return tape.matmul_nt(h, tok_emb_); }

  // hidden states after every block and the final norm
  Tensor forward_hidden(Tape& tape, const std::vector<int>& tokens) const {
    return final_norm(tape, run_layers(tape, embed(tape, tokens), 0, cfg_.num_layers));
  }

  // hidden states after the first num layers, without the final norm
  Tensor forward_prefix_layers(Tape& tape, const std::vector<int>& tokens, int num) const {
    return run_layers(tape, embed(tape, tokens), 0, num);
  }

  Tensor logits(Tape& tape, const std::vector<int>& tokens) const {
    return logits_from_hidden(tape, forward_hidden(tape, tokens));
  }

  // log P(tokens[1..] | tokens[0]), accumulated in double
  double sequence_logprob(const std::vector<int>& tokens) const {
    if (tokens.size() < 2) return 0.0;
    Tape tape(false);
    Tensor lg = logits(tape, tokens);
    const int n = cfg_.vocab_size;
    double total = 0.0;
    for (size_t t = 0; t + 1 < tokens.size(); ++t) {
      const S* row = lg.values().data() + static_cast<int64_t>(t) * n;
      double mx = static_cast<double>(row[0]);
      for (int j = 1; j < n; ++j) mx = std::max(mx, static_cast<double>(row[j]));
      double sum = 0.0;
      for (int j = 0; j < n; ++j) sum += std::exp(static_cast<double>(row[j]) - mx);
      total += static_cast<double>(row[tokens[t + 1]]) - mx - std::log(sum);
    }
    return total;
  }

  // tensors and config are written under the given name prefix, e.g. "base."
  void add_to_checkpoint(Checkpoint& ck, const std::string& prefix = "") const {
    ck.set_meta(prefix + "vocab_size", std::to_string(cfg_.vocab_size));
    ck.set_meta(prefix + "d_model", std::to_string(cfg_.d_model));
    ck.set_meta(prefix + "num_layers", std::to_string(cfg_.num_layers));
    ck.set_meta(prefix + "num_heads", std::to_string(cfg_.num_heads));
    ck.set_meta(prefix + "d_ff", std::to_string(cfg_.ff_dim()));
    ck.set_meta(prefix + "max_seq_len", std::to_string(cfg_.max_seq_len));
    for (const auto& [name, t] : named_parameters()) {
      std::vector<float> data(t.values().size());
      for (size_t i = 0; i < data.size(); ++i) data[i] = static_cast<float>(t.values()[i]);
      ck.add_tensor(prefix + name, t.shape(), std::move(data));
    }
  }

  static CausalLMT from_checkpoint(const Checkpoint& ck, const std::string& prefix = "") {
    TransformerConfig cfg;
    cfg.vocab_size = static_cast<int>(ck.meta_int(prefix + "vocab_size"));
    cfg.d_model = static_cast<int>(ck.meta_int(prefix + "d_model"));
    cfg.num_layers = static_cast<int>(ck.meta_int(prefix + "num_layers"));
    cfg.num_heads = static_cast<int>(ck.meta_int(prefix + "num_heads"));
    cfg.d_ff = static_cast<int>(ck.meta_int(prefix + "d_ff"));
    cfg.max_seq_len = static_cast<int>(ck.meta_int(prefix + "max_seq_len"));
    CausalLMT m = random_init(cfg, 0);
    for (auto& [name, t] : m.named_parameters()) {
      const NamedTensor& src = ck.tensor_at(prefix + name);
      if (src.shape != t.shape())
        throw std::runtime_error("checkpoint tensor '" + prefix + name + "' has shape " + format_shape(src.shape) +
                                 ", model expects " + format_shape(t.shape()));
      auto& dst = t.mutable_values();
      for (size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<S>(src.data[i]);
    }
    return m;
  }

  void save_checkpoint(const std::string& path) const {
    Checkpoint ck;
    ck.set_meta("model", "causal_lm");
    add_to_checkpoint(ck);
    ck.save(path);
  }

  static CausalLMT load_checkpoint(const std::string& path) { return from_checkpoint(Checkpoint::load(path)); }

  uint64_t parameter_hash() const {
    uint64_t h = 1469598103934665603ull;
    for (const auto& [name, t] : named_parameters()) {
      h = fnv1a64(name.data(), name.size(), h);
      h = fnv1a64(t.values().data(), t.values().size() * sizeof(S), h);
    }
    return h;
  }

 private:
  static Tensor normal_tensor(Rng& rng, std::vector<int> shape, float stddev) {
    std::vector<S> v(shape_numel(shape));
    rng.fill_normal(v, stddev);
    return Tensor::from(std::move(shape), std::move(v), true);
  }

  TransformerConfig cfg_;
  Tensor tok_emb_, pos_emb_;
  std::vector<Layer> layers_;
  Tensor final_gain_, final_bias_;
};

using CausalLM = CausalLMT<float>;

}  // namespace auxtune
