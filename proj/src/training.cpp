#include "auxtune/training.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "auxtune/rng.hpp"

namespace auxtune {

void TrainConfig::validate() const {
  if (batch_size <= 0 || steps <= 0) throw std::invalid_argument("batch_size and steps must be positive");
  if (!(learning_rate > 0.0f)) throw std::invalid_argument("learning_rate must be positive");
  if (warmup_steps < 0) throw std::invalid_argument("warmup_steps must be non-negative");
  if (!(adam_beta1 > 0.0f && adam_beta1 < 1.0f && adam_beta2 > 0.0f && adam_beta2 < 1.0f))
    throw std::invalid_argument("adam betas must lie in (0, 1)");
  if (!(adam_eps > 0.0f)) throw std::invalid_argument("adam_eps must be positive");
  if (!(grad_clip_norm > 0.0f)) throw std::invalid_argument("grad_clip_norm must be positive");
  if (eval_every <= 0 || eval_every > steps) throw std::invalid_argument("eval_every must lie in [1, steps]");
}

void AdamState::init(const std::vector<Tensor>& params) {
  m.clear();
  v.clear();
  for (const auto& p : params) {
    m.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
    v.emplace_back(static_cast<size_t>(p.numel()), 0.0f);
  }
}

void AdamState::check_shapes(const std::vector<Tensor>& params) const {
  if (m.size() != params.size() || v.size() != params.size())
    throw std::invalid_argument("optimizer state does not match parameter count");
  for (size_t i = 0; i < params.size(); ++i)
    if (m[i].size() != static_cast<size_t>(params[i].numel()) || v[i].size() != static_cast<size_t>(params[i].numel()))
      throw std::invalid_argument("optimizer state shape mismatch at parameter " + std::to_string(i));
}

double adam_step(const std::vector<Tensor>& params, AdamState& state, const TrainConfig& cfg, int step) {
  if (step < 1) throw std::invalid_argument("adam step numbers start at 1");
  state.check_shapes(params);

  double sq = 0.0;
  for (size_t i = 0; i < params.size(); ++i) {
    if (!params[i].has_grad()) continue;
    for (float g : params[i].grad()) {
      if (!std::isfinite(g))
        throw std::runtime_error("non-finite gradient in parameter " + std::to_string(i) + " at step " +
                                 std::to_string(step) + "; aborting");
      sq += static_cast<double>(g) * static_cast<double>(g);
    }
  }
  const double norm = std::sqrt(sq);
  const double clip = static_cast<double>(cfg.grad_clip_norm);
  const double scale = norm > clip ? clip / norm : 1.0;
  const double beta1 = cfg.adam_beta1, beta2 = cfg.adam_beta2;
  // linear warmup to the peak rate at warmup_steps, inverse-sqrt decay after;
  // a function of the step alone, so any resume split reproduces the schedule
  const double w = static_cast<double>(std::max(cfg.warmup_steps, 1));
  const double s = static_cast<double>(step);
  const double lr = static_cast<double>(cfg.learning_rate) * std::min(s / w, std::sqrt(w / s));
  const double bc1 = 1.0 - std::pow(beta1, step);
  const double bc2 = 1.0 - std::pow(beta2, step);

  for (size_t i = 0; i < params.size(); ++i) {
    Tensor p = params[i];
    const float* g = p.has_grad() ? p.grad().data() : nullptr;
    auto& vals = p.mutable_values();
    auto& mi = state.m[i];
    auto& vi = state.v[i];
    for (size_t j = 0; j < vals.size(); ++j) {
      const double gd = scale * (g ? static_cast<double>(g[j]) : 0.0);
      mi[j] = static_cast<float>(beta1 * mi[j] + (1.0 - beta1) * gd);
      vi[j] = static_cast<float>(beta2 * vi[j] + (1.0 - beta2) * gd * gd);
      const double mhat = mi[j] / bc1;
      const double vhat = vi[j] / bc2;
      vals[j] -= static_cast<float>(lr * mhat / (std::sqrt(vhat) + cfg.adam_eps));
    }
    p.clear_grad();
  }
  return norm;
}

namespace {

std::string csv_cell(double x) {
  if (std::isnan(x)) return "";
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.10g", x);
  return buf;
}

}  // namespace

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "step,loss,slor,keyword_accuracy,kl_to_oracle\n";
  for (const auto& r : rows)
    out << r.step << ',' << csv_cell(r.loss) << ',' << csv_cell(r.slor) << ',' << csv_cell(r.keyword_accuracy) << ','
        << csv_cell(r.kl_to_oracle) << '\n';
  if (!out) throw std::runtime_error("write failed for " + path);
}

std::vector<MetricRow> read_metrics_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::string line;
  if (!std::getline(in, line) || line != "step,loss,slor,keyword_accuracy,kl_to_oracle")
    throw std::runtime_error(path + ":1: bad metrics header");
  std::vector<MetricRow> rows;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (std::count(line.begin(), line.end(), ',') != 4)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": expected 5 comma-separated fields");
    std::vector<std::string> cells;
    std::string cell;
    std::istringstream is(line);
    while (std::getline(is, cell, ',')) cells.push_back(cell);
    while (cells.size() < 5) cells.emplace_back();
    MetricRow r;
    auto num = [&](const std::string& s, const char* what) {
      if (s.empty()) return std::numeric_limits<double>::quiet_NaN();
      size_t used = 0;
      double x = 0.0;
      try {
        x = std::stod(s, &used);
      } catch (const std::exception&) {
        used = 0;
      }
      if (used != s.size())
        throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad " + what + " '" + s + "'");
      return x;
    };
    const double step = num(cells[0], "step");
    if (std::isnan(step) || step != std::floor(step))
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": bad step '" + cells[0] + "'");
    r.step = static_cast<int>(step);
    if (!rows.empty() && r.step <= rows.back().step)
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": non-monotone step " + cells[0]);
    r.loss = num(cells[1], "loss");
    r.slor = num(cells[2], "slor");
    r.keyword_accuracy = num(cells[3], "keyword_accuracy");
    r.kl_to_oracle = num(cells[4], "kl_to_oracle");
    rows.push_back(r);
  }
  return rows;
}

void add_train_state(Checkpoint& ck, const TrainState& state) {
  ck.set_meta("completed_steps", std::to_string(state.completed_steps));
  ck.set_meta("opt_params", std::to_string(state.opt.m.size()));
  for (size_t i = 0; i < state.opt.m.size(); ++i) {
    const auto n = static_cast<int>(state.opt.m[i].size());
    ck.add_tensor("opt.m." + std::to_string(i), {n}, state.opt.m[i]);
    ck.add_tensor("opt.v." + std::to_string(i), {n}, state.opt.v[i]);
  }
}

TrainState read_train_state(const Checkpoint& ck, const std::vector<Tensor>& params) {
  TrainState st;
  st.completed_steps = static_cast<int>(ck.meta_int("completed_steps"));
  if (ck.meta_int("opt_params") != static_cast<int64_t>(params.size()))
    throw std::runtime_error("optimizer state was saved for a different parameter list");
  for (size_t i = 0; i < params.size(); ++i) {
    const NamedTensor& m = ck.tensor_at("opt.m." + std::to_string(i));
    const NamedTensor& v = ck.tensor_at("opt.v." + std::to_string(i));
    if (m.data.size() != static_cast<size_t>(params[i].numel()) || v.data.size() != static_cast<size_t>(params[i].numel()))
      throw std::runtime_error("optimizer state shape mismatch at parameter " + std::to_string(i));
    st.opt.m.push_back(m.data);
    st.opt.v.push_back(v.data);
  }
  return st;
}

namespace {

using RowFn = std::function<Tensor(Tape&, size_t, std::vector<int>&)>;

void check_token_ids(const std::vector<int>& tokens, int vocab_size, const char* what) {
  for (int id : tokens)
    if (id < 0 || id >= vocab_size)
      throw std::out_of_range(std::string(what) + " token id " + std::to_string(id) + " outside vocabulary of " +
                              std::to_string(vocab_size));
}

TrainReport run_loop(const TrainConfig& cfg, TrainState& state, size_t corpus_size,
                     const std::vector<Tensor>& params, const RowFn& row_fn, const EvalFn& eval) {
  cfg.validate();
  if (state.opt.empty()) state.opt.init(params);
  state.opt.check_shapes(params);
  if (state.completed_steps < 0 || state.completed_steps >= cfg.steps)
    throw std::invalid_argument("resume point " + std::to_string(state.completed_steps) +
                                " is not below the requested " + std::to_string(cfg.steps) + " steps");

  auto batch_loss = [&](int step, bool record) {
    Tape tape(record);
    Rng rng(mix_seed(cfg.seed, static_cast<uint64_t>(step)));
    std::vector<Tensor> parts;
    std::vector<int> targets;
    parts.reserve(static_cast<size_t>(cfg.batch_size));
    for (int b = 0; b < cfg.batch_size; ++b) parts.push_back(row_fn(tape, rng.uniform_int(corpus_size), targets));
    Tensor loss = tape.cross_entropy(tape.concat_rows(parts), targets);
    if (record) tape.backward(loss);
    return static_cast<double>(loss.item());
  };

  TrainReport report;
  if (state.completed_steps == 0) {
    MetricRow row;
    row.step = 0;
    row.loss = batch_loss(0, false);
    if (eval) eval(0, row);
    report.rows.push_back(row);
  }
  double window_sum = 0.0;
  int window_count = 0;
  for (int step = state.completed_steps + 1; step <= cfg.steps; ++step) {
    const double loss = batch_loss(step, true);
    adam_step(params, state.opt, cfg, step);
    state.completed_steps = step;
    report.step_losses.push_back(loss);
    window_sum += loss;
    ++window_count;
    if (step % cfg.eval_every == 0 || step == cfg.steps) {
      MetricRow row;
      row.step = step;
      row.loss = window_sum / window_count;
      window_sum = 0.0;
      window_count = 0;
      if (eval) eval(step, row);
      report.rows.push_back(row);
    }
  }
  return report;
}

std::vector<int> lm_row(const Vocab& vocab, const std::vector<int>& seq) {
  std::vector<int> row;
  row.reserve(seq.size() + 2);
  row.push_back(vocab.bos_id());
  row.insert(row.end(), seq.begin(), seq.end());
  row.push_back(vocab.eos_id());
  return row;
}

std::vector<int> text_row(const Vocab& vocab, const Example& ex) {
  std::vector<int> row;
  row.reserve(ex.prefix.size() + ex.continuation.size() + 2);
  row.push_back(vocab.bos_id());
  row.insert(row.end(), ex.prefix.begin(), ex.prefix.end());
  row.insert(row.end(), ex.continuation.begin(), ex.continuation.end());
  row.push_back(vocab.eos_id());
  return row;
}

std::vector<int> baseline_row(const Vocab& vocab, const Example& ex) {
  std::vector<int> row;
  row.reserve(ex.prefix.size() + ex.continuation.size() + 3);
  row.push_back(ex.attribute.at(0));
  row.push_back(vocab.sep_id());
  row.insert(row.end(), ex.prefix.begin(), ex.prefix.end());
  row.insert(row.end(), ex.continuation.begin(), ex.continuation.end());
  row.push_back(vocab.eos_id());
  return row;
}

// continuation tokens plus the closing eos, predicted from `first_row` onward
Tensor gather_tail(Tape& tape, const Tensor& logits, const std::vector<int>& row, int first_row,
                   std::vector<int>& targets) {
  const int last_row = static_cast<int>(row.size()) - 2;
  std::vector<int> pos(static_cast<size_t>(last_row - first_row + 1));
  std::iota(pos.begin(), pos.end(), first_row);
  targets.insert(targets.end(), row.begin() + first_row + 1, row.end());
  return tape.gather_rows(logits, pos);
}

void check_examples(const std::vector<Example>& corpus, int vocab_size, const char* what) {
  if (corpus.empty()) throw std::invalid_argument(std::string(what) + ": corpus is empty");
  for (const auto& ex : corpus) {
    if (ex.attribute.empty()) throw std::invalid_argument(std::string(what) + ": example without attribute");
    if (ex.continuation.empty()) throw std::invalid_argument(std::string(what) + ": example without continuation");
    check_token_ids(ex.attribute, vocab_size, what);
    check_token_ids(ex.prefix, vocab_size, what);
    check_token_ids(ex.continuation, vocab_size, what);
  }
}

}  // namespace

TrainReport pretrain_into(CausalLM& model, TrainState& state, const TrainConfig& cfg,
                          const std::vector<std::vector<int>>& corpus, const Vocab& vocab, const EvalFn& eval) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: corpus is empty");
  if (vocab.size() != model.config().vocab_size)
    throw std::invalid_argument("pretrain: vocab size " + std::to_string(vocab.size()) +
                                " does not match model vocab " + std::to_string(model.config().vocab_size));
  const auto window = static_cast<size_t>(model.config().max_seq_len);
  for (const auto& seq : corpus) {
    check_token_ids(seq, vocab.size(), "pretrain");
    if (seq.size() + 2 > window) throw std::invalid_argument("pretrain: sequence exceeds the context window");
  }
  auto row_fn = [&](Tape& tape, size_t idx, std::vector<int>& targets) {
    const std::vector<int> row = lm_row(vocab, corpus[idx]);
    return gather_tail(tape, model.logits(tape, row), row, 0, targets);
  };
  return run_loop(cfg, state, corpus.size(), model.parameters(), row_fn, eval);
}

PretrainResult pretrain(const TrainConfig& cfg, const std::vector<std::vector<int>>& corpus, const Vocab& vocab,
                        TransformerConfig model_cfg, const EvalFn& eval) {
  model_cfg.vocab_size = vocab.size();
  PretrainResult out{CausalLM::random_init(model_cfg, cfg.seed), {}};
  TrainState state;
  out.report = pretrain_into(out.model, state, cfg, corpus, vocab, eval);
  return out;
}

TrainReport train_auxiliary_into(AuxTunedModel& model, TrainState& state, const TrainConfig& cfg,
                                 const std::vector<Example>& corpus, const Vocab& vocab, const EvalFn& eval) {
  const TransformerConfig& base_cfg = model.base().config();
  if (vocab.size() != base_cfg.vocab_size)
    throw std::invalid_argument("train_auxiliary: vocab size " + std::to_string(vocab.size()) +
                                " does not match the base model vocab " + std::to_string(base_cfg.vocab_size));
  check_examples(corpus, vocab.size(), "train_auxiliary");
  const auto base_window = static_cast<size_t>(base_cfg.max_seq_len);
  const auto aux_window = static_cast<size_t>(model.aux_stack().config().max_seq_len);
  for (const auto& ex : corpus) {
    const size_t text_len = ex.prefix.size() + ex.continuation.size() + 2;
    if (text_len > base_window || ex.attribute.size() + text_len > aux_window)
      throw std::invalid_argument("train_auxiliary: example exceeds the context window");
  }
  auto row_fn = [&](Tape& tape, size_t idx, std::vector<int>& targets) {
    const Example& ex = corpus[idx];
    const std::vector<int> row = text_row(vocab, ex);
    Tensor logits = model.combined_sequence_logits(tape, ex.attribute, row);
    return gather_tail(tape, logits, row, static_cast<int>(ex.prefix.size()), targets);
  };
  return run_loop(cfg, state, corpus.size(), model.trainable_parameters(), row_fn, eval);
}

AuxTrainResult train_auxiliary(const TrainConfig& cfg, const CausalLM& base, const std::vector<Example>& corpus,
                               const Vocab& vocab, const AuxConfig& aux_cfg, const EvalFn& eval) {
  AuxTrainResult out{AuxTunedModel::create(base, aux_cfg, cfg.seed), {}};
  TrainState state;
  out.report = train_auxiliary_into(out.model, state, cfg, corpus, vocab, eval);
  return out;
}

TrainReport train_baseline_into(CausalLM& model, TrainState& state, const TrainConfig& cfg,
                                const std::vector<Example>& corpus, const Vocab& vocab, const EvalFn& eval) {
  if (vocab.size() != model.config().vocab_size)
    throw std::invalid_argument("train_baseline: vocab size " + std::to_string(vocab.size()) +
                                " does not match model vocab " + std::to_string(model.config().vocab_size));
  check_examples(corpus, vocab.size(), "train_baseline");
  for (const auto& ex : corpus) {
    if (ex.attribute.size() != 1)
      throw std::invalid_argument("train_baseline: examples need a single attribute token");
    if (ex.prefix.size() + ex.continuation.size() + 3 > static_cast<size_t>(model.config().max_seq_len))
      throw std::invalid_argument("train_baseline: example exceeds the context window");
  }
  auto row_fn = [&](Tape& tape, size_t idx, std::vector<int>& targets) {
    const Example& ex = corpus[idx];
    const std::vector<int> row = baseline_row(vocab, ex);
    return gather_tail(tape, model.logits(tape, row), row, static_cast<int>(ex.prefix.size()) + 1, targets);
  };
  return run_loop(cfg, state, corpus.size(), model.parameters(), row_fn, eval);
}

PretrainResult train_baseline(const TrainConfig& cfg, const std::vector<Example>& corpus, const Vocab& vocab,
                              TransformerConfig model_cfg, const EvalFn& eval) {
  model_cfg.vocab_size = vocab.size();
  PretrainResult out{CausalLM::random_init(model_cfg, cfg.seed), {}};
  TrainState state;
  out.report = train_baseline_into(out.model, state, cfg, corpus, vocab, eval);
  return out;
}

namespace {

double row_nll(const Tensor& logits, int row, int target) {
  const int v = logits.dim(1);
  const float* p = logits.values().data() + static_cast<size_t>(row) * static_cast<size_t>(v);
  double mx = p[0];
  for (int j = 1; j < v; ++j) mx = std::max(mx, static_cast<double>(p[j]));
  double sum = 0.0;
  for (int j = 0; j < v; ++j) sum += std::exp(static_cast<double>(p[j]) - mx);
  return -(static_cast<double>(p[target]) - mx - std::log(sum));
}

double tail_nll(const Tensor& logits, const std::vector<int>& row, int first_row, double& count) {
  double total = 0.0;
  for (int j = first_row; j + 1 < static_cast<int>(row.size()); ++j) {
    total += row_nll(logits, j, row[static_cast<size_t>(j) + 1]);
    count += 1.0;
  }
  return total;
}

}  // namespace

double lm_corpus_loss(const CausalLM& model, const std::vector<std::vector<int>>& corpus, const Vocab& vocab) {
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  double total = 0.0, count = 0.0;
  for (const auto& seq : corpus) {
    Tape tape(false);
    const std::vector<int> row = lm_row(vocab, seq);
    total += tail_nll(model.logits(tape, row), row, 0, count);
  }
  return total / count;
}

double lm_continuation_loss(const CausalLM& model, const std::vector<Example>& corpus, const Vocab& vocab) {
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  double total = 0.0, count = 0.0;
  for (const auto& ex : corpus) {
    Tape tape(false);
    const std::vector<int> row = text_row(vocab, ex);
    total += tail_nll(model.logits(tape, row), row, static_cast<int>(ex.prefix.size()), count);
  }
  return total / count;
}

double aux_corpus_loss(const AuxTunedModel& model, const std::vector<Example>& corpus, const Vocab& vocab) {
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  double total = 0.0, count = 0.0;
  for (const auto& ex : corpus) {
    Tape tape(false);
    const std::vector<int> row = text_row(vocab, ex);
    Tensor logits = model.combined_sequence_logits(tape, ex.attribute, row);
    total += tail_nll(logits, row, static_cast<int>(ex.prefix.size()), count);
  }
  return total / count;
}

double baseline_corpus_loss(const CausalLM& model, const std::vector<Example>& corpus, const Vocab& vocab) {
  if (corpus.empty()) throw std::invalid_argument("corpus is empty");
  double total = 0.0, count = 0.0;
  for (const auto& ex : corpus) {
    Tape tape(false);
    const std::vector<int> row = baseline_row(vocab, ex);
    total += tail_nll(model.logits(tape, row), row, static_cast<int>(ex.prefix.size()) + 1, count);
  }
  return total / count;
}

}  // namespace auxtune
