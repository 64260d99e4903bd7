#include "auxtune/eval.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "auxtune/rng.hpp"

namespace auxtune {

namespace {

std::vector<float> last_row(const Tensor& logits, int vocab_size) {
  const float* row = logits.values().data() + static_cast<int64_t>(logits.dim(0) - 1) * vocab_size;
  return std::vector<float>(row, row + vocab_size);
}

void check_text_ids(const std::vector<int>& ids, int vocab_size, const char* what) {
  for (int id : ids)
    if (id < 0 || id >= vocab_size)
      throw std::invalid_argument(std::string(what) + ": token id " + std::to_string(id) +
                                  " outside vocabulary of " + std::to_string(vocab_size));
}

}  // namespace

void DecodeConfig::validate(int vocab_size) const {
  if (max_new_tokens <= 0) throw std::invalid_argument("decode: max_new_tokens must be positive");
  if (!(temperature >= 0.0f) || !std::isfinite(temperature))
    throw std::invalid_argument("decode: temperature must be finite and non-negative");
  if (top_k < 0 || top_k > vocab_size)
    throw std::invalid_argument("decode: top_k " + std::to_string(top_k) + " out of range for vocabulary of " +
                                std::to_string(vocab_size));
}

int sample_from_logits(const std::vector<float>& logits, const DecodeConfig& cfg, Rng& rng) {
  if (logits.empty()) throw std::invalid_argument("sample_from_logits: empty logits");
  const int n = static_cast<int>(logits.size());
  if (cfg.temperature == 0.0f || cfg.top_k == 1) {
    int best = 0;
    for (int j = 1; j < n; ++j)
      if (logits[j] > logits[best]) best = j;
    return best;
  }
  std::vector<int> candidates(logits.size());
  std::iota(candidates.begin(), candidates.end(), 0);
  if (cfg.top_k > 0 && cfg.top_k < n) {
    std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
      if (logits[a] != logits[b]) return logits[a] > logits[b];
      return a < b;
    });
    candidates.resize(static_cast<size_t>(cfg.top_k));
  }
  double mx = -std::numeric_limits<double>::infinity();
  for (int j : candidates) mx = std::max(mx, static_cast<double>(logits[j]) / cfg.temperature);
  std::vector<double> weights(candidates.size());
  for (size_t i = 0; i < candidates.size(); ++i)
    weights[i] = std::exp(static_cast<double>(logits[candidates[i]]) / cfg.temperature - mx);
  return candidates[rng.categorical(weights)];
}

std::vector<int> sample_continuation(const CausalLM& model, const std::vector<int>& context,
                                     const DecodeConfig& cfg, int eos_id) {
  const int vocab = model.config().vocab_size;
  cfg.validate(vocab);
  if (context.empty()) throw std::invalid_argument("sample_continuation: empty context");
  check_text_ids(context, vocab, "sample_continuation");
  Rng rng(cfg.seed);
  std::vector<int> cur = context, out;
  while (static_cast<int>(out.size()) < cfg.max_new_tokens) {
    Tape tape(false);
    const int tok = sample_from_logits(last_row(model.logits(tape, cur), vocab), cfg, rng);
    if (tok == eos_id) break;
    out.push_back(tok);
    cur.push_back(tok);
    if (static_cast<int>(cur.size()) >= model.config().max_seq_len) break;
  }
  return out;
}

std::vector<int> sample_continuation(const AuxTunedModel& model, const std::vector<int>& attribute,
                                     const std::vector<int>& context, const DecodeConfig& cfg, int eos_id) {
  const int vocab = model.base().config().vocab_size;
  cfg.validate(vocab);
  if (context.empty()) throw std::invalid_argument("sample_continuation: empty context");
  check_text_ids(context, vocab, "sample_continuation");
  check_text_ids(attribute, vocab, "sample_continuation");
  const int window = std::min(model.base().config().max_seq_len,
                              model.aux_stack().config().max_seq_len - static_cast<int>(attribute.size()));
  Rng rng(cfg.seed);
  std::vector<int> cur = context, out;
  while (static_cast<int>(out.size()) < cfg.max_new_tokens) {
    const int tok = sample_from_logits(model.combined_logits(attribute, cur), cfg, rng);
    if (tok == eos_id) break;
    out.push_back(tok);
    cur.push_back(tok);
    if (static_cast<int>(cur.size()) >= window) break;
  }
  return out;
}

std::vector<double> unigram_log_probs(const std::vector<std::vector<int>>& corpus, int vocab_size) {
  if (vocab_size <= 0) throw std::invalid_argument("unigram_log_probs: vocab_size must be positive");
  std::vector<int64_t> counts(static_cast<size_t>(vocab_size), 0);
  int64_t total = 0;
  for (const auto& line : corpus)
    for (int id : line) {
      if (id < 0 || id >= vocab_size)
        throw std::invalid_argument("unigram_log_probs: token id " + std::to_string(id) + " out of range");
      ++counts[static_cast<size_t>(id)];
      ++total;
    }
  const double denom = static_cast<double>(total + vocab_size);
  std::vector<double> out(static_cast<size_t>(vocab_size));
  for (size_t i = 0; i < out.size(); ++i) out[i] = std::log((counts[i] + 1) / denom);
  return out;
}

void ScoringLM::save_checkpoint(const std::string& path, const Vocab& vocab) const {
  Checkpoint ck;
  ck.set_meta("model", "scoring_lm");
  ck.set_meta("vocab", vocab.serialize());
  model.add_to_checkpoint(ck, "model.");
  std::vector<float> table(unigram_log_prob.begin(), unigram_log_prob.end());
  const int entries = static_cast<int>(table.size());
  ck.add_tensor("unigram_log_prob", {entries}, std::move(table));
  ck.save(path);
}

ScoringLM ScoringLM::load_checkpoint(const std::string& path, Vocab* vocab_out) {
  Checkpoint ck = Checkpoint::load(path);
  if (ck.meta_at("model") != "scoring_lm")
    throw std::runtime_error("checkpoint " + path + " is not a scoring model");
  ScoringLM s;
  s.model = CausalLM::from_checkpoint(ck, "model.");
  const NamedTensor& table = ck.tensor_at("unigram_log_prob");
  s.unigram_log_prob.assign(table.data.begin(), table.data.end());
  if (static_cast<int>(s.unigram_log_prob.size()) != s.model.config().vocab_size)
    throw std::runtime_error("checkpoint " + path + " unigram table does not match its model vocabulary");
  if (vocab_out) *vocab_out = Vocab::deserialize(ck.meta_at("vocab"));
  return s;
}

double slor(const ScoringLM& scorer, const std::vector<int>& text, int bos_id) {
  if (text.empty()) throw std::invalid_argument("slor: empty text");
  const int vocab = scorer.model.config().vocab_size;
  if (static_cast<int>(scorer.unigram_log_prob.size()) != vocab)
    throw std::invalid_argument("slor: unigram table does not match the scoring model");
  check_text_ids(text, vocab, "slor");
  if (bos_id < 0 || bos_id >= vocab) throw std::invalid_argument("slor: bos id out of range");
  std::vector<int> seq;
  seq.reserve(text.size() + 1);
  seq.push_back(bos_id);
  seq.insert(seq.end(), text.begin(), text.end());
  double unigram = 0.0;
  for (int id : text) unigram += scorer.unigram_log_prob[static_cast<size_t>(id)];
  return (scorer.model.sequence_logprob(seq) - unigram) / static_cast<double>(text.size());
}

double keyword_accuracy(const std::vector<std::pair<int, std::vector<int>>>& samples) {
  if (samples.empty()) throw std::invalid_argument("keyword_accuracy: no samples");
  int hits = 0;
  for (const auto& [keyword, seq] : samples)
    if (std::find(seq.begin(), seq.end(), keyword) != seq.end()) ++hits;
  return static_cast<double>(hits) / static_cast<double>(samples.size());
}

double kl_to_oracle(const ConditionalFn& model_conditional, const ExactTask& task) {
  task.validate();
  if (!model_conditional) throw std::invalid_argument("kl_to_oracle: empty conditional");
  double total = 0.0;
  for (int len = 0; len < task.seq_len; ++len) {
    for (const auto& [prefix, mass] : enumerate_prefixes(task, len)) {
      (void)mass;
      for (int a = 0; a < task.num_attributes; ++a) {
        const double w = task.prior[static_cast<size_t>(a)] * prefix_likelihood(task, a, prefix);
        if (w <= 0.0) continue;
        const std::vector<double> p = exact_conditional(task, a, prefix);
        const std::vector<double> q = model_conditional(a, prefix);
        if (static_cast<int>(q.size()) != task.num_symbols)
          throw std::runtime_error("kl_to_oracle: conditional returned " + std::to_string(q.size()) +
                                   " entries for " + std::to_string(task.num_symbols) + " symbols");
        double kl = 0.0;
        for (int s = 0; s < task.num_symbols; ++s) {
          const double ps = p[static_cast<size_t>(s)];
          if (ps <= 0.0) continue;
          const double qs = q[static_cast<size_t>(s)];
          if (qs <= 0.0) return std::numeric_limits<double>::infinity();
          kl += ps * (std::log(ps) - std::log(qs));
        }
        total += w * kl;
      }
    }
  }
  return total / static_cast<double>(task.seq_len);
}

double kl_to_oracle(const AuxTunedModel& model, const ExactTask& task) {
  if (model.base().config().vocab_size != task.vocab.size())
    throw std::invalid_argument("kl_to_oracle: model vocabulary does not match the task");
  const int bos = task.vocab.bos_id();
  // base logits depend on the prefix alone; one forward serves every attribute
  std::vector<int> cached_context;
  std::vector<float> cached_base;
  ConditionalFn fn = [&](int a, const std::vector<int>& prefix) {
    std::vector<int> context;
    context.reserve(prefix.size() + 1);
    context.push_back(bos);
    for (int s : prefix) context.push_back(task.symbol_token(s));
    if (context != cached_context) {
      Tape tape(false);
      cached_base = last_row(model.base().logits(tape, context), task.vocab.size());
      cached_context = context;
    }
    const std::vector<float> aux = model.aux_logits({task.attribute_token(a)}, context);
    std::vector<float> combined(cached_base.size());
    for (size_t j = 0; j < combined.size(); ++j) combined[j] = cached_base[j] + aux[j];
    const std::vector<double> probs = softmax_double(combined);
    std::vector<double> q(static_cast<size_t>(task.num_symbols));
    for (int s = 0; s < task.num_symbols; ++s) q[static_cast<size_t>(s)] = probs[task.symbol_token(s)];
    return q;
  };
  return kl_to_oracle(fn, task);
}

EvalResult eval_snapshot(const SampleFn& sampler, const std::vector<Example>& dev_set, const ScoringLM& scorer,
                         const Vocab& vocab, uint64_t seed) {
  if (!sampler) throw std::invalid_argument("eval_snapshot: empty sampler");
  if (dev_set.empty()) throw std::invalid_argument("eval_snapshot: empty dev set");
  std::vector<std::pair<int, std::vector<int>>> samples;
  samples.reserve(dev_set.size());
  double slor_sum = 0.0;
  int scored = 0;
  for (size_t i = 0; i < dev_set.size(); ++i) {
    const Example& ex = dev_set[i];
    if (ex.attribute.size() != 1)
      throw std::invalid_argument("eval_snapshot: prompt " + std::to_string(i) + " needs a single keyword token");
    const int surface = vocab.id_of(vocab.keyword_surface(ex.attribute[0]));
    std::vector<int> gen = sampler(ex, mix_seed(seed, i));
    std::vector<int> text;
    text.reserve(ex.prefix.size() + gen.size());
    for (int id : ex.prefix)
      if (!vocab.is_reserved(id)) text.push_back(id);
    for (int id : gen)
      if (!vocab.is_reserved(id)) text.push_back(id);
    if (!text.empty()) {
      slor_sum += slor(scorer, text, vocab.bos_id());
      ++scored;
    }
    samples.emplace_back(surface, std::move(gen));
  }
  if (scored == 0) throw std::runtime_error("eval_snapshot: every scored text was empty");
  EvalResult r;
  r.mean_slor = slor_sum / static_cast<double>(scored);
  r.keyword_accuracy = keyword_accuracy(samples);
  return r;
}

SampleFn make_aux_sampler(AuxTunedModel model, const Vocab& vocab, DecodeConfig cfg) {
  const int bos = vocab.bos_id(), eos = vocab.eos_id();
  return [model = std::move(model), bos, eos, cfg](const Example& ex, uint64_t seed) {
    DecodeConfig c = cfg;
    c.seed = seed;
    std::vector<int> context;
    context.reserve(ex.prefix.size() + 1);
    context.push_back(bos);
    context.insert(context.end(), ex.prefix.begin(), ex.prefix.end());
    return sample_continuation(model, ex.attribute, context, c, eos);
  };
}

SampleFn make_baseline_sampler(CausalLM model, const Vocab& vocab, DecodeConfig cfg) {
  const int sep = vocab.sep_id(), eos = vocab.eos_id();
  return [model = std::move(model), sep, eos, cfg](const Example& ex, uint64_t seed) {
    if (ex.attribute.size() != 1)
      throw std::invalid_argument("baseline sampler: prompt needs a single keyword token");
    DecodeConfig c = cfg;
    c.seed = seed;
    std::vector<int> context;
    context.reserve(ex.prefix.size() + 2);
    context.push_back(ex.attribute[0]);
    context.push_back(sep);
    context.insert(context.end(), ex.prefix.begin(), ex.prefix.end());
    return sample_continuation(model, context, c, eos);
  };
}

SampleFn make_lm_sampler(CausalLM model, const Vocab& vocab, DecodeConfig cfg) {
  const int bos = vocab.bos_id(), eos = vocab.eos_id();
  return [model = std::move(model), bos, eos, cfg](const Example& ex, uint64_t seed) {
    DecodeConfig c = cfg;
    c.seed = seed;
    std::vector<int> context;
    context.reserve(ex.prefix.size() + 1);
    context.push_back(bos);
    context.insert(context.end(), ex.prefix.begin(), ex.prefix.end());
    return sample_continuation(model, context, c, eos);
  };
}

}  // namespace auxtune
