#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "auxtune/aux_model.hpp"
#include "auxtune/data.hpp"
#include "auxtune/eval.hpp"
#include "auxtune/exact_task.hpp"
#include "auxtune/grammar.hpp"
#include "auxtune/manifest.hpp"
#include "auxtune/svg.hpp"
#include "auxtune/training.hpp"

namespace fs = std::filesystem;
using namespace auxtune;

namespace {

Vocab read_vocab_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line.empty()) throw std::runtime_error(path + ": empty vocabulary file");
  return Vocab::deserialize(line);
}

void write_vocab_file(const std::string& path, const Vocab& vocab) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << vocab.serialize() << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

struct TrainFlags {
  int steps = 0;
  int batch = 16;
  float lr = 3e-4f;
  int warmup = 100;
  float clip = 1.0f;
  int eval_every = 250;
  uint64_t seed = 1;

  void attach(CLI::App* cmd, int default_steps) {
    steps = default_steps;
    cmd->add_option("--steps", steps, "total optimization steps")->capture_default_str();
    cmd->add_option("--batch", batch, "sequences per step")->capture_default_str();
    cmd->add_option("--lr", lr, "peak learning rate")->capture_default_str();
    cmd->add_option("--warmup", warmup, "linear warmup steps")->capture_default_str();
    cmd->add_option("--clip", clip, "global gradient norm cap")->capture_default_str();
    cmd->add_option("--eval-every", eval_every, "steps between metric rows")->capture_default_str();
    cmd->add_option("--seed", seed, "run seed")->capture_default_str();
  }

  TrainConfig config() const {
    TrainConfig c;
    c.steps = steps;
    c.batch_size = batch;
    c.learning_rate = lr;
    c.warmup_steps = warmup;
    c.grad_clip_norm = clip;
    c.eval_every = eval_every;
    c.seed = seed;
    return c;
  }

  void record(RunManifest& m) const {
    m.add("steps", static_cast<int64_t>(steps));
    m.add("batch", static_cast<int64_t>(batch));
    m.add("lr", static_cast<double>(lr));
    m.add("warmup", static_cast<int64_t>(warmup));
    m.add("clip", static_cast<double>(clip));
    m.add("eval_every", static_cast<int64_t>(eval_every));
    m.add("seed", seed);
  }
};

struct DimFlags {
  int d_model = 128;
  int layers = 4;
  int heads = 4;
  int d_ff = 0;
  int window = 64;

  void attach(CLI::App* cmd, const std::string& prefix = "") {
    const std::string p = "--" + prefix;
    cmd->add_option(p + "d-model", d_model, "model width")->capture_default_str();
    cmd->add_option(p + "layers", layers, "transformer blocks")->capture_default_str();
    cmd->add_option(p + "heads", heads, "attention heads")->capture_default_str();
    cmd->add_option(p + "d-ff", d_ff, "feed-forward width (0 means 4x width)")->capture_default_str();
    cmd->add_option(p + "window", window, "context window")->capture_default_str();
  }

  TransformerConfig config(int vocab_size) const {
    TransformerConfig c;
    c.vocab_size = vocab_size;
    c.d_model = d_model;
    c.num_layers = layers;
    c.num_heads = heads;
    c.d_ff = d_ff;
    c.max_seq_len = window;
    return c;
  }

  void record(RunManifest& m, const std::string& prefix = "") const {
    m.add(prefix + "d_model", static_cast<int64_t>(d_model));
    m.add(prefix + "layers", static_cast<int64_t>(layers));
    m.add(prefix + "heads", static_cast<int64_t>(heads));
    m.add(prefix + "d_ff", static_cast<int64_t>(d_ff));
    m.add(prefix + "window", static_cast<int64_t>(window));
  }
};

struct EvalFlags {
  std::string dev, scorer, task;
  float temperature = 0.8f;
  int max_tokens = 24;

  void attach(CLI::App* cmd) {
    cmd->add_option("--dev", dev, "dev prompt TSV for SLOR and keyword accuracy");
    cmd->add_option("--scorer", scorer, "scoring model checkpoint (required with --dev)");
    cmd->add_option("--task", task, "exact task manifest enabling the KL metric");
    cmd->add_option("--sample-temperature", temperature, "dev sampling temperature")->capture_default_str();
    cmd->add_option("--sample-tokens", max_tokens, "dev sampling budget")->capture_default_str();
  }

  void record(RunManifest& m) const {
    if (!dev.empty()) m.add_input("dev", dev);
    if (!scorer.empty()) m.add_input("scorer", scorer);
    if (!task.empty()) m.add_input("task", task);
    m.add("sample_temperature", static_cast<double>(temperature));
    m.add("sample_tokens", static_cast<int64_t>(max_tokens));
  }
};

// loaded evaluation artifacts shared by the training commands and cmd_eval
struct EvalHarness {
  std::vector<Example> dev;
  ScoringLM scorer;
  ExactTask task;
  Vocab vocab;
  DecodeConfig decode;
  uint64_t seed = 1;
  bool has_snapshot = false;
  bool has_task = false;

  static EvalHarness make(const EvalFlags& flags, const Vocab& vocab, uint64_t seed) {
    EvalHarness h;
    h.vocab = vocab;
    h.seed = seed;
    h.decode.temperature = flags.temperature;
    h.decode.max_new_tokens = flags.max_tokens;
    if (!flags.dev.empty() || !flags.scorer.empty()) {
      if (flags.dev.empty() || flags.scorer.empty())
        throw std::invalid_argument("--dev and --scorer must be given together");
      Vocab scorer_vocab;
      h.scorer = ScoringLM::load_checkpoint(flags.scorer, &scorer_vocab);
      if (!(scorer_vocab == vocab))
        throw std::invalid_argument("scorer vocabulary does not match the run vocabulary");
      h.dev = read_conditional_corpus(flags.dev, vocab);
      if (h.dev.empty()) throw std::invalid_argument(flags.dev + " holds no prompts");
      h.has_snapshot = true;
    }
    if (!flags.task.empty()) {
      h.task = load_exact_task(flags.task);
      if (!(h.task.vocab == vocab)) throw std::invalid_argument("task vocabulary does not match the run vocabulary");
      h.has_task = true;
    }
    return h;
  }
};

// next-symbol conditional of a bare LM over the task's symbol tokens
ConditionalFn model_conditional_fn(const CausalLM& model, const ExactTask& task, bool baseline_framing) {
  return [&model, &task, baseline_framing](int a, const std::vector<int>& prefix) {
    std::vector<int> context;
    if (baseline_framing) {
      context.push_back(task.attribute_token(a));
      context.push_back(task.vocab.sep_id());
    } else {
      context.push_back(task.vocab.bos_id());
    }
    for (int s : prefix) context.push_back(task.symbol_token(s));
    Tape tape(false);
    Tensor lg = model.logits(tape, context);
    const int vocab = model.config().vocab_size;
    const float* row = lg.values().data() + static_cast<int64_t>(lg.dim(0) - 1) * vocab;
    const std::vector<double> probs = softmax_double(std::vector<float>(row, row + vocab));
    std::vector<double> q(static_cast<size_t>(task.num_symbols));
    for (int s = 0; s < task.num_symbols; ++s) q[static_cast<size_t>(s)] = probs[task.symbol_token(s)];
    return q;
  };
}

EvalFn make_aux_eval(const EvalHarness& h, const AuxTunedModel& model) {
  if (!h.has_snapshot && !h.has_task) return {};
  return [&h, &model](int step, MetricRow& row) {
    if (h.has_snapshot) {
      const EvalResult r = eval_snapshot(make_aux_sampler(model, h.vocab, h.decode), h.dev, h.scorer, h.vocab,
                                         mix_seed(h.seed, 7000 + static_cast<uint64_t>(step)));
      row.slor = r.mean_slor;
      row.keyword_accuracy = r.keyword_accuracy;
    }
    if (h.has_task) row.kl_to_oracle = kl_to_oracle(model, h.task);
  };
}

EvalFn make_lm_eval(const EvalHarness& h, const CausalLM& model, bool baseline_framing) {
  if (!h.has_snapshot && !h.has_task) return {};
  return [&h, &model, baseline_framing](int step, MetricRow& row) {
    if (h.has_snapshot) {
      const SampleFn sampler = baseline_framing ? make_baseline_sampler(model, h.vocab, h.decode)
                                                : make_lm_sampler(model, h.vocab, h.decode);
      const EvalResult r =
          eval_snapshot(sampler, h.dev, h.scorer, h.vocab, mix_seed(h.seed, 7000 + static_cast<uint64_t>(step)));
      row.slor = r.mean_slor;
      row.keyword_accuracy = r.keyword_accuracy;
    }
    if (h.has_task) row.kl_to_oracle = kl_to_oracle(model_conditional_fn(model, h.task, baseline_framing), h.task);
  };
}

void save_lm_checkpoint(const std::string& path, const CausalLM& model, const Vocab& vocab,
                        const std::string& framing, const TrainState& state) {
  Checkpoint ck;
  ck.set_meta("model", "causal_lm");
  ck.set_meta("framing", framing);
  ck.set_meta("vocab", vocab.serialize());
  model.add_to_checkpoint(ck);
  add_train_state(ck, state);
  ck.save(path);
}

void save_aux_checkpoint(const std::string& path, const AuxTunedModel& model, const Vocab& vocab,
                         const TrainState& state) {
  Checkpoint ck;
  model.add_to_checkpoint(ck);
  ck.set_meta("vocab", vocab.serialize());
  add_train_state(ck, state);
  ck.save(path);
}

std::string default_metrics_path(const std::string& out) { return out + ".metrics.csv"; }

void print_final_metrics(const TrainReport& report) {
  if (report.rows.empty()) return;
  const MetricRow& last = report.rows.back();
  std::cout << "step " << last.step << " loss " << last.loss;
  if (!std::isnan(last.slor)) std::cout << " slor " << last.slor;
  if (!std::isnan(last.keyword_accuracy)) std::cout << " keyword_accuracy " << last.keyword_accuracy;
  if (!std::isnan(last.kl_to_oracle)) std::cout << " kl_to_oracle " << last.kl_to_oracle;
  std::cout << '\n';
}

// ---------------------------------------------------------------- datagen

struct DatagenOpts {
  std::string task, out_dir;
  int count = 50000;
  uint64_t seed = 1;
  int dev_count = 200;
  int scorer_count = 0;
  int symbols = 8;
  int attributes = 2;
  int length = 5;
};

void run_datagen(const DatagenOpts& o) {
  if (o.count <= 0) throw std::invalid_argument("--count must be positive");
  if (o.dev_count <= 0) throw std::invalid_argument("--dev-count must be positive");
  fs::create_directories(o.out_dir);
  const std::string dir = o.out_dir + "/";

  RunManifest m;
  m.add("command", "datagen");
  m.add("task", o.task);
  m.add("count", static_cast<int64_t>(o.count));
  m.add("seed", o.seed);
  const bool grammar = o.task == "grammar";
  const int scorer_count = o.scorer_count > 0 ? o.scorer_count : std::max(1, o.count / 5);
  if (grammar) {
    m.add("dev_count", static_cast<int64_t>(o.dev_count));
    m.add("scorer_count", static_cast<int64_t>(scorer_count));
  } else {
    m.add("symbols", static_cast<int64_t>(o.symbols));
    m.add("attributes", static_cast<int64_t>(o.attributes));
    m.add("length", static_cast<int64_t>(o.length));
  }
  m.add("out.vocab", dir + "vocab.txt");
  m.add("out.pretrain", dir + "pretrain.txt");
  m.add("out.conditional", dir + "conditional.tsv");
  if (grammar) {
    m.add("out.dev", dir + "dev.tsv");
    m.add("out.scorer_corpus", dir + "scorer.txt");
  } else {
    m.add("out.task", dir + "task.txt");
  }
  m.write(dir + "datagen.manifest.txt");

  if (grammar) {
    const GrammarSpec spec = default_grammar(o.seed);
    const Vocab vocab = build_vocab(spec);
    write_vocab_file(dir + "vocab.txt", vocab);
    write_pretrain_corpus(dir + "pretrain.txt", vocab, gen_pretrain_corpus(spec, vocab, o.count));
    write_conditional_corpus(dir + "conditional.tsv", vocab, gen_conditional_corpus(spec, vocab, o.count));
    const GrammarSpec dev_spec = default_grammar(mix_seed(o.seed, 11));
    write_conditional_corpus(dir + "dev.tsv", vocab, gen_conditional_corpus(dev_spec, vocab, o.dev_count));
    const GrammarSpec scorer_spec = default_grammar(mix_seed(o.seed, 12));
    write_pretrain_corpus(dir + "scorer.txt", vocab, gen_pretrain_corpus(scorer_spec, vocab, scorer_count));
  } else {
    const ExactTask task = ExactTask::random(o.symbols, o.attributes, o.length, o.seed);
    save_exact_task(task, dir + "task.txt");
    write_vocab_file(dir + "vocab.txt", task.vocab);
    std::vector<std::vector<int>> lines;
    for (const auto& ex : sample_task_corpus(task, o.count, false, mix_seed(o.seed, 1)))
      lines.push_back(ex.continuation);
    write_pretrain_corpus(dir + "pretrain.txt", task.vocab, lines);
    write_conditional_corpus(dir + "conditional.tsv", task.vocab,
                             sample_task_corpus(task, o.count, true, mix_seed(o.seed, 2)));
  }
  std::cout << "wrote " << o.task << " data under " << o.out_dir << '\n';
}

// ---------------------------------------------------------------- pretrain

struct PretrainOpts {
  std::string corpus, vocab_path, out, metrics, resume;
  bool scorer = false;
  TrainFlags train;
  DimFlags dims;
};

void run_pretrain(PretrainOpts& o) {
  if (o.metrics.empty()) o.metrics = default_metrics_path(o.out);

  RunManifest m;
  m.add("command", "pretrain");
  m.add_input("corpus", o.corpus);
  if (!o.vocab_path.empty()) m.add_input("vocab", o.vocab_path);
  if (!o.resume.empty()) m.add_input("resume", o.resume);
  o.train.record(m);
  o.dims.record(m);
  m.add("scorer", o.scorer ? "true" : "false");
  m.add("out.checkpoint", o.out);
  m.add("out.metrics", o.metrics);
  m.write(o.out + ".manifest.txt");

  CausalLM model;
  TrainState state;
  Vocab vocab;
  if (!o.resume.empty()) {
    const Checkpoint ck = Checkpoint::load(o.resume);
    if (ck.meta_at("model") != "causal_lm")
      throw std::invalid_argument("--resume expects a causal_lm checkpoint, got " + ck.meta_at("model"));
    vocab = Vocab::deserialize(ck.meta_at("vocab"));
    model = CausalLM::from_checkpoint(ck);
    state = read_train_state(ck, model.parameters());
    if (!o.vocab_path.empty() && !(read_vocab_file(o.vocab_path) == vocab))
      throw std::invalid_argument("--vocab does not match the resumed checkpoint");
  } else {
    if (o.vocab_path.empty()) throw std::invalid_argument("--vocab is required unless resuming");
    vocab = read_vocab_file(o.vocab_path);
    model = CausalLM::random_init(o.dims.config(vocab.size()), o.train.seed);
  }

  const auto corpus = read_pretrain_corpus(o.corpus, vocab);
  const TrainReport report = pretrain_into(model, state, o.train.config(), corpus, vocab);
  write_metrics_csv(o.metrics, report.rows);
  if (o.scorer) {
    ScoringLM s;
    s.model = model;
    s.unigram_log_prob = unigram_log_probs(corpus, vocab.size());
    s.save_checkpoint(o.out, vocab);
  } else {
    save_lm_checkpoint(o.out, model, vocab, "lm", state);
  }
  print_final_metrics(report);
}

// ---------------------------------------------------------------- train-aux

struct TrainAuxOpts {
  std::string base_ckpt, corpus, out, metrics, resume;
  std::string variant = "direct";
  int feature_layers = 0;
  TrainFlags train;
  int aux_d_model = 64;
  int aux_layers = 2;
  int aux_heads = 4;
  int aux_window = 0;
  EvalFlags eval;
};

void run_train_aux(TrainAuxOpts& o) {
  if (o.metrics.empty()) o.metrics = default_metrics_path(o.out);

  RunManifest m;
  m.add("command", "train-aux");
  if (!o.base_ckpt.empty()) m.add_input("base_checkpoint", o.base_ckpt);
  m.add_input("corpus", o.corpus);
  if (!o.resume.empty()) m.add_input("resume", o.resume);
  m.add("variant", o.variant);
  m.add("feature_layers", static_cast<int64_t>(o.feature_layers));
  m.add("aux_d_model", static_cast<int64_t>(o.aux_d_model));
  m.add("aux_layers", static_cast<int64_t>(o.aux_layers));
  m.add("aux_heads", static_cast<int64_t>(o.aux_heads));
  m.add("aux_window", static_cast<int64_t>(o.aux_window));
  o.train.record(m);
  o.eval.record(m);
  m.add("out.checkpoint", o.out);
  m.add("out.metrics", o.metrics);
  m.write(o.out + ".manifest.txt");

  AuxTunedModel model;
  TrainState state;
  Vocab vocab;
  if (!o.resume.empty()) {
    const Checkpoint ck = Checkpoint::load(o.resume);
    if (ck.meta_at("model") != "aux_tuned")
      throw std::invalid_argument("--resume expects an aux_tuned checkpoint, got " + ck.meta_at("model"));
    vocab = Vocab::deserialize(ck.meta_at("vocab"));
    model = AuxTunedModel::from_checkpoint(ck);
    state = read_train_state(ck, model.trainable_parameters());
  } else {
    if (o.base_ckpt.empty()) throw std::invalid_argument("--base-checkpoint is required unless resuming");
    const Checkpoint bck = Checkpoint::load(o.base_ckpt);
    if (bck.meta_at("model") != "causal_lm")
      throw std::invalid_argument("--base-checkpoint expects a causal_lm checkpoint, got " + bck.meta_at("model"));
    vocab = Vocab::deserialize(bck.meta_at("vocab"));
    const CausalLM base = CausalLM::from_checkpoint(bck);

    AuxConfig ac;
    ac.variant = aux_variant_from_string(o.variant);
    if (ac.variant == AuxVariant::FeatureExtraction && o.feature_layers <= 0)
      throw std::invalid_argument("--layers must be a positive base layer count for the feature variant");
    if (ac.variant == AuxVariant::Direct && o.feature_layers != 0)
      throw std::invalid_argument("--layers applies only to the feature variant");
    ac.feature_layers = o.feature_layers;
    ac.stack.vocab_size = vocab.size();
    ac.stack.d_model = o.aux_d_model;
    ac.stack.num_layers = o.aux_layers;
    ac.stack.num_heads = o.aux_heads;
    ac.stack.max_seq_len = o.aux_window > 0 ? o.aux_window : base.config().max_seq_len;
    model = AuxTunedModel::create(base, ac, o.train.seed);
  }

  const auto corpus = read_conditional_corpus(o.corpus, vocab);
  const EvalHarness harness = EvalHarness::make(o.eval, vocab, o.train.seed);
  const TrainReport report =
      train_auxiliary_into(model, state, o.train.config(), corpus, vocab, make_aux_eval(harness, model));
  write_metrics_csv(o.metrics, report.rows);
  save_aux_checkpoint(o.out, model, vocab, state);
  print_final_metrics(report);
}

// ---------------------------------------------------------------- train-baseline

struct TrainBaselineOpts {
  std::string corpus, vocab_path, out, metrics, resume;
  TrainFlags train;
  DimFlags dims;
  EvalFlags eval;
};

void run_train_baseline(TrainBaselineOpts& o) {
  if (o.metrics.empty()) o.metrics = default_metrics_path(o.out);

  RunManifest m;
  m.add("command", "train-baseline");
  m.add_input("corpus", o.corpus);
  if (!o.vocab_path.empty()) m.add_input("vocab", o.vocab_path);
  if (!o.resume.empty()) m.add_input("resume", o.resume);
  o.train.record(m);
  o.dims.record(m);
  o.eval.record(m);
  m.add("out.checkpoint", o.out);
  m.add("out.metrics", o.metrics);
  m.write(o.out + ".manifest.txt");

  CausalLM model;
  TrainState state;
  Vocab vocab;
  if (!o.resume.empty()) {
    const Checkpoint ck = Checkpoint::load(o.resume);
    if (ck.meta_at("model") != "causal_lm")
      throw std::invalid_argument("--resume expects a causal_lm checkpoint, got " + ck.meta_at("model"));
    vocab = Vocab::deserialize(ck.meta_at("vocab"));
    model = CausalLM::from_checkpoint(ck);
    state = read_train_state(ck, model.parameters());
  } else {
    if (o.vocab_path.empty()) throw std::invalid_argument("--vocab is required unless resuming");
    vocab = read_vocab_file(o.vocab_path);
    model = CausalLM::random_init(o.dims.config(vocab.size()), o.train.seed);
  }

  const auto corpus = read_conditional_corpus(o.corpus, vocab);
  const EvalHarness harness = EvalHarness::make(o.eval, vocab, o.train.seed);
  const TrainReport report =
      train_baseline_into(model, state, o.train.config(), corpus, vocab, make_lm_eval(harness, model, true));
  write_metrics_csv(o.metrics, report.rows);
  save_lm_checkpoint(o.out, model, vocab, "baseline", state);
  print_final_metrics(report);
}

// ---------------------------------------------------------------- generate

struct GenerateOpts {
  std::string ckpt, prefix_text, keyword, out;
  int n = 1;
  float temperature = 0.8f;
  int top_k = 0;
  int max_tokens = 24;
  bool greedy = false;
  uint64_t seed = 1;
};

void run_generate(const GenerateOpts& o) {
  if (o.n <= 0) throw std::invalid_argument("--n must be positive");
  const Checkpoint ck = Checkpoint::load(o.ckpt);
  const std::string& kind = ck.meta_at("model");
  if (kind != "causal_lm" && kind != "aux_tuned")
    throw std::invalid_argument(o.ckpt + " holds a " + kind + " model; generate needs causal_lm or aux_tuned");
  const Vocab vocab = Vocab::deserialize(ck.meta_at("vocab"));
  const bool baseline_framing = kind == "causal_lm" && ck.find_meta("framing") && ck.meta_at("framing") == "baseline";
  const bool needs_keyword = kind == "aux_tuned" || baseline_framing;

  int attribute = -1;
  if (needs_keyword) {
    if (o.keyword.empty()) throw std::invalid_argument("this model conditions on a keyword; pass --keyword");
    if (!vocab.contains("<kw:" + o.keyword + ">")) {
      std::string inventory;
      for (int id = 4; id < vocab.num_reserved(); ++id) inventory += ' ' + vocab.keyword_surface(id);
      throw std::invalid_argument("unknown keyword '" + o.keyword + "'; inventory:" + inventory);
    }
    attribute = vocab.keyword_token_id(o.keyword);
  } else if (!o.keyword.empty()) {
    throw std::invalid_argument("this model was trained without keyword conditioning; drop --keyword");
  }

  std::vector<int> prefix;
  {
    std::istringstream is(o.prefix_text);
    std::string w;
    while (is >> w) {
      if (!vocab.contains(w)) throw std::invalid_argument("unknown word '" + w + "' in prefix");
      prefix.push_back(vocab.id_of(w));
    }
  }

  if (!o.out.empty()) {
    RunManifest m;
    m.add("command", "generate");
    m.add_input("checkpoint", o.ckpt);
    m.add("prefix", o.prefix_text);
    m.add("keyword", o.keyword);
    m.add("n", static_cast<int64_t>(o.n));
    m.add("temperature", static_cast<double>(o.temperature));
    m.add("top_k", static_cast<int64_t>(o.top_k));
    m.add("max_tokens", static_cast<int64_t>(o.max_tokens));
    m.add("greedy", o.greedy ? "true" : "false");
    m.add("seed", o.seed);
    m.add("out.samples", o.out);
    m.write(o.out + ".manifest.txt");
  }

  DecodeConfig cfg;
  cfg.max_new_tokens = o.max_tokens;
  cfg.temperature = o.greedy ? 0.0f : o.temperature;
  cfg.top_k = o.top_k;

  CausalLM lm;
  AuxTunedModel aux;
  if (kind == "aux_tuned")
    aux = AuxTunedModel::from_checkpoint(ck);
  else
    lm = CausalLM::from_checkpoint(ck);

  std::ostringstream lines;
  for (int i = 0; i < o.n; ++i) {
    cfg.seed = mix_seed(o.seed, static_cast<uint64_t>(i));
    std::vector<int> context, continuation;
    if (kind == "aux_tuned") {
      context.push_back(vocab.bos_id());
      context.insert(context.end(), prefix.begin(), prefix.end());
      continuation = sample_continuation(aux, {attribute}, context, cfg, vocab.eos_id());
    } else {
      if (baseline_framing) {
        context.push_back(attribute);
        context.push_back(vocab.sep_id());
      } else {
        context.push_back(vocab.bos_id());
      }
      context.insert(context.end(), prefix.begin(), prefix.end());
      continuation = sample_continuation(lm, context, cfg, vocab.eos_id());
    }
    std::vector<int> sentence = prefix;
    sentence.insert(sentence.end(), continuation.begin(), continuation.end());
    lines << vocab.decode(sentence, true) << '\n';
  }

  if (o.out.empty()) {
    std::cout << lines.str();
  } else {
    std::ofstream f(o.out, std::ios::trunc);
    if (!f) throw std::runtime_error("cannot open " + o.out + " for writing");
    f << lines.str();
    if (!f) throw std::runtime_error("write failed for " + o.out);
  }
}

// ---------------------------------------------------------------- eval

struct EvalOpts {
  std::string ckpt, out;
  EvalFlags eval;
  uint64_t seed = 1;
};

void run_eval(EvalOpts& o) {
  if (o.eval.dev.empty() && o.eval.task.empty())
    throw std::invalid_argument("eval needs --dev with --scorer, or --task");

  RunManifest m;
  m.add("command", "eval");
  m.add_input("checkpoint", o.ckpt);
  o.eval.record(m);
  m.add("seed", o.seed);
  m.add("out.metrics", o.out);
  m.write(o.out + ".manifest.txt");

  const Checkpoint ck = Checkpoint::load(o.ckpt);
  const std::string& kind = ck.meta_at("model");
  const Vocab vocab = Vocab::deserialize(ck.meta_at("vocab"));
  const EvalHarness harness = EvalHarness::make(o.eval, vocab, o.seed);

  MetricRow row;
  row.step = ck.find_meta("completed_steps") ? static_cast<int>(ck.meta_int("completed_steps")) : 0;

  CausalLM lm;
  AuxTunedModel aux;
  EvalFn fill;
  if (kind == "aux_tuned") {
    aux = AuxTunedModel::from_checkpoint(ck);
    fill = make_aux_eval(harness, aux);
  } else if (kind == "causal_lm") {
    lm = CausalLM::from_checkpoint(ck);
    const bool baseline_framing = ck.find_meta("framing") && ck.meta_at("framing") == "baseline";
    fill = make_lm_eval(harness, lm, baseline_framing);
  } else {
    throw std::invalid_argument(o.ckpt + " holds a " + kind + " model; eval needs causal_lm or aux_tuned");
  }
  fill(row.step, row);
  write_metrics_csv(o.out, {row});

  std::cout << "step " << row.step;
  if (!std::isnan(row.slor)) std::cout << " slor " << row.slor;
  if (!std::isnan(row.keyword_accuracy)) std::cout << " keyword_accuracy " << row.keyword_accuracy;
  if (!std::isnan(row.kl_to_oracle)) std::cout << " kl_to_oracle " << row.kl_to_oracle;
  std::cout << '\n';
}

// ---------------------------------------------------------------- plot

struct PlotOpts {
  std::vector<std::string> csvs, labels;
  std::string out_dir;
};

void run_plot(const PlotOpts& o) {
  if (!o.labels.empty() && o.labels.size() != o.csvs.size())
    throw std::invalid_argument("--label count must match --csv count");
  fs::create_directories(o.out_dir);

  RunManifest m;
  m.add("command", "plot");
  for (size_t i = 0; i < o.csvs.size(); ++i) m.add_input("csv." + std::to_string(i), o.csvs[i]);
  m.add("out_dir", o.out_dir);
  m.write(o.out_dir + "/plot.manifest.txt");

  std::vector<std::vector<MetricRow>> runs;
  for (const auto& path : o.csvs) runs.push_back(read_metrics_csv(path));

  const struct {
    const char* name;
    double MetricRow::*field;
  } metrics[] = {{"loss", &MetricRow::loss},
                 {"slor", &MetricRow::slor},
                 {"keyword_accuracy", &MetricRow::keyword_accuracy},
                 {"kl_to_oracle", &MetricRow::kl_to_oracle}};

  int written = 0;
  for (const auto& metric : metrics) {
    std::vector<ChartSeries> series;
    for (size_t i = 0; i < runs.size(); ++i) {
      ChartSeries s;
      s.label = i < o.labels.size() ? o.labels[i] : fs::path(o.csvs[i]).filename().string();
      for (const MetricRow& row : runs[i])
        if (!std::isnan(row.*metric.field)) s.points.emplace_back(row.step, row.*metric.field);
      if (!s.points.empty()) series.push_back(std::move(s));
    }
    if (series.empty()) continue;
    const std::string path = o.out_dir + "/" + metric.name + ".svg";
    write_line_chart(path, metric.name, series);
    std::cout << "wrote " << path << '\n';
    ++written;
  }
  if (written == 0) std::cout << "no plottable metric columns in the given CSVs\n";
}

// Appends --key=value for every config entry whose flag is absent from the
// command line, so explicit flags always win.  CLI11 2.4.2 never processes a
// config file registered on a subcommand, hence the manual merge.
std::vector<std::string> apply_config_file(std::vector<std::string> args) {
  std::string path;
  for (size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size())
      path = args[i + 1];
    else if (args[i].rfind("--config=", 0) == 0)
      path = args[i].substr(9);
  }
  if (path.empty()) return args;

  std::ifstream in(path);
  if (!in) throw std::invalid_argument("cannot open config file '" + path + "'");
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const size_t start = line.find_first_not_of(" \t");
    if (start == std::string::npos || line[start] == '#') continue;
    const size_t eq = line.find('=', start);
    if (eq == std::string::npos || eq == start)
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": expected key=value");
    std::string key = line.substr(start, eq - start);
    while (!key.empty() && (key.back() == ' ' || key.back() == '\t')) key.pop_back();
    if (key == "config")
      throw std::invalid_argument(path + ":" + std::to_string(lineno) + ": config files cannot nest");
    const std::string flag = "--" + key;
    const bool given = std::any_of(args.begin(), args.end(), [&](const std::string& a) {
      return a == flag || a.rfind(flag + "=", 0) == 0;
    });
    if (!given) args.push_back(flag + "=" + line.substr(eq + 1));
  }
  return args;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"auxiliary-tuned language modeling toolkit"};
  app.require_subcommand(1);

  DatagenOpts dg;
  PretrainOpts pt;
  TrainAuxOpts ta;
  TrainBaselineOpts tb;
  GenerateOpts gn;
  EvalOpts ev;
  PlotOpts pl;
  std::string config_path;
  std::function<void()> run;

  CLI::App* c = app.add_subcommand("datagen", "write corpora, vocabulary and task files");
  c->add_option("--task", dg.task, "grammar or exact")->required()->check(CLI::IsMember({"grammar", "exact"}));
  c->add_option("--count", dg.count, "sentences / examples per corpus")->capture_default_str();
  c->add_option("--seed", dg.seed, "generation seed")->capture_default_str();
  c->add_option("--out-dir", dg.out_dir, "output directory")->required();
  c->add_option("--dev-count", dg.dev_count, "grammar: held-out dev prompts")->capture_default_str();
  c->add_option("--scorer-count", dg.scorer_count, "grammar: scorer corpus size (0 means count/5)")
      ->capture_default_str();
  c->add_option("--symbols", dg.symbols, "exact: symbol count")->capture_default_str();
  c->add_option("--attributes", dg.attributes, "exact: attribute count")->capture_default_str();
  c->add_option("--length", dg.length, "exact: sequence length")->capture_default_str();
  c->add_option("--config", config_path, "key=value defaults; explicit flags win");
  c->callback([&] { run = [&] { run_datagen(dg); }; });

  c = app.add_subcommand("pretrain", "train a language model on a pretraining corpus");
  c->add_option("--corpus", pt.corpus, "pretraining corpus, one sentence per line")->required();
  c->add_option("--vocab", pt.vocab_path, "vocabulary file");
  c->add_option("--out", pt.out, "checkpoint to write")->required();
  c->add_option("--metrics", pt.metrics, "metrics CSV (default <out>.metrics.csv)");
  c->add_option("--resume", pt.resume, "continue from an earlier checkpoint");
  c->add_flag("--as-scorer", pt.scorer, "save a scoring model (adds a unigram table, drops resume state)");
  pt.train.attach(c, 5000);
  pt.dims.attach(c);
  c->add_option("--config", config_path, "key=value defaults; explicit flags win");
  c->callback([&] { run = [&] { run_pretrain(pt); }; });

  c = app.add_subcommand("train-aux", "train an auxiliary model on a frozen base");
  c->add_option("--base-checkpoint", ta.base_ckpt, "pretrained base checkpoint");
  c->add_option("--corpus", ta.corpus, "conditional corpus TSV")->required();
  c->add_option("--variant", ta.variant, "direct or feature")
      ->capture_default_str()
      ->check(CLI::IsMember({"direct", "feature"}));
  c->add_option("--layers", ta.feature_layers, "feature variant: frozen base layers to tap");
  c->add_option("--out", ta.out, "checkpoint to write")->required();
  c->add_option("--metrics", ta.metrics, "metrics CSV (default <out>.metrics.csv)");
  c->add_option("--resume", ta.resume, "continue from an earlier aux checkpoint");
  c->add_option("--aux-d-model", ta.aux_d_model, "auxiliary width")->capture_default_str();
  c->add_option("--aux-layers", ta.aux_layers, "auxiliary blocks")->capture_default_str();
  c->add_option("--aux-heads", ta.aux_heads, "auxiliary heads")->capture_default_str();
  c->add_option("--aux-window", ta.aux_window, "auxiliary context window (0 means the base window)")
      ->capture_default_str();
  ta.train.attach(c, 2000);
  ta.eval.attach(c);
  c->add_option("--config", config_path, "key=value defaults; explicit flags win");
  c->callback([&] { run = [&] { run_train_aux(ta); }; });

  c = app.add_subcommand("train-baseline", "train a keyword-prefixed model from scratch");
  c->add_option("--corpus", tb.corpus, "conditional corpus TSV")->required();
  c->add_option("--vocab", tb.vocab_path, "vocabulary file");
  c->add_option("--out", tb.out, "checkpoint to write")->required();
  c->add_option("--metrics", tb.metrics, "metrics CSV (default <out>.metrics.csv)");
  c->add_option("--resume", tb.resume, "continue from an earlier checkpoint");
  tb.train.attach(c, 5000);
  tb.dims.attach(c);
  tb.eval.attach(c);
  c->add_option("--config", config_path, "key=value defaults; explicit flags win");
  c->callback([&] { run = [&] { run_train_baseline(tb); }; });

  c = app.add_subcommand("generate", "sample continuations from a trained model");
  c->add_option("--checkpoint", gn.ckpt, "model checkpoint")->required();
  c->add_option("--prefix", gn.prefix_text, "prefix words, space separated");
  c->add_option("--keyword", gn.keyword, "conditioning keyword");
  c->add_option("--n", gn.n, "samples to draw")->capture_default_str();
  c->add_option("--temperature", gn.temperature, "sampling temperature")->capture_default_str();
  c->add_option("--top-k", gn.top_k, "restrict sampling to the k best tokens (0 disables)")->capture_default_str();
  c->add_option("--max-tokens", gn.max_tokens, "continuation budget")->capture_default_str();
  c->add_flag("--greedy", gn.greedy, "argmax decoding, seed independent");
  c->add_option("--seed", gn.seed, "sampling seed")->capture_default_str();
  c->add_option("--out", gn.out, "write samples here instead of stdout");
  c->add_option("--config", config_path, "key=value defaults; explicit flags win");
  c->callback([&] { run = [&] { run_generate(gn); }; });

  c = app.add_subcommand("eval", "score a checkpoint on dev prompts and/or the exact task");
  c->add_option("--checkpoint", ev.ckpt, "model checkpoint")->required();
  ev.eval.attach(c);
  c->add_option("--seed", ev.seed, "sampling seed")->capture_default_str();
  c->add_option("--out", ev.out, "metrics CSV to write")->required();
  c->add_option("--config", config_path, "key=value defaults; explicit flags win");
  c->callback([&] { run = [&] { run_eval(ev); }; });

  c = app.add_subcommand("plot", "render metric CSVs as SVG charts");
  c->add_option("--csv", pl.csvs, "metrics CSV, repeatable")->required();
  c->add_option("--label", pl.labels, "series label per CSV");
  c->add_option("--out-dir", pl.out_dir, "directory for the SVG files")->required();
  c->add_option("--config", config_path, "key=value defaults; explicit flags win");
  c->callback([&] { run = [&] { run_plot(pl); }; });

  std::vector<std::string> args(argv + 1, argv + argc);
  try {
    args = apply_config_file(std::move(args));
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  std::reverse(args.begin(), args.end());

  try {
    app.parse(std::move(args));
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    run();
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
