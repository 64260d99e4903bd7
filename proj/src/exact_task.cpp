#include "auxtune/exact_task.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "auxtune/rng.hpp"

namespace auxtune {

namespace {

Vocab task_vocab(int symbols, int attributes) {
  std::vector<std::string> keywords, words;
  for (int a = 0; a < attributes; ++a) keywords.push_back("a" + std::to_string(a));
  for (int s = 0; s < symbols; ++s) words.push_back("t" + std::to_string(s));
  return Vocab::build(keywords, words);
}

void check_row(const std::vector<double>& row, size_t want, const std::string& what) {
  if (row.size() != want) throw std::invalid_argument(what + ": expected " + std::to_string(want) + " entries");
  double sum = 0.0;
  for (double p : row) {
    if (!(p >= 0.0)) throw std::invalid_argument(what + ": negative or non-finite entry");
    sum += p;
  }
  if (std::fabs(sum - 1.0) > 1e-12) throw std::invalid_argument(what + ": row sums to " + std::to_string(sum));
}

std::vector<double> random_row(Rng& rng, int n, double lo) {
  std::vector<double> row(static_cast<size_t>(n));
  double sum = 0.0;
  for (auto& p : row) {
    p = lo + (1.0 - lo) * rng.uniform();
    sum += p;
  }
  for (auto& p : row) p /= sum;
  return row;
}

}  // namespace

ExactTask ExactTask::random(int symbols, int attributes, int seq_len, uint64_t seed) {
  if (symbols < 2 || attributes < 1 || seq_len < 1)
    throw std::invalid_argument("exact task needs >=2 symbols, >=1 attribute, length >=1");
  ExactTask t;
  t.num_symbols = symbols;
  t.num_attributes = attributes;
  t.seq_len = seq_len;
  t.vocab = task_vocab(symbols, attributes);
  Rng rng(seed);
  t.prior = random_row(rng, attributes, 0.5);
  for (int a = 0; a < attributes; ++a) {
    // the 0.05 floor keeps every context reachable with usable mass
    t.initial.push_back(random_row(rng, symbols, 0.05));
    t.trans.emplace_back();
    for (int s = 0; s < symbols; ++s) t.trans.back().push_back(random_row(rng, symbols, 0.05));
  }
  t.validate();
  return t;
}

void ExactTask::validate() const {
  if (num_symbols < 2 || num_attributes < 1 || seq_len < 1)
    throw std::invalid_argument("exact task: bad dimensions");
  check_row(prior, static_cast<size_t>(num_attributes), "prior");
  if (initial.size() != static_cast<size_t>(num_attributes) || trans.size() != static_cast<size_t>(num_attributes))
    throw std::invalid_argument("exact task: table count does not match attribute count");
  for (int a = 0; a < num_attributes; ++a) {
    check_row(initial[static_cast<size_t>(a)], static_cast<size_t>(num_symbols),
              "initial[" + std::to_string(a) + "]");
    if (trans[static_cast<size_t>(a)].size() != static_cast<size_t>(num_symbols))
      throw std::invalid_argument("exact task: transition table has wrong row count");
    for (int s = 0; s < num_symbols; ++s)
      check_row(trans[static_cast<size_t>(a)][static_cast<size_t>(s)], static_cast<size_t>(num_symbols),
                "trans[" + std::to_string(a) + "][" + std::to_string(s) + "]");
  }
}

int ExactTask::symbol_token(int symbol) const {
  if (symbol < 0 || symbol >= num_symbols) throw std::out_of_range("symbol out of range");
  return vocab.num_reserved() + symbol;
}

int ExactTask::token_symbol(int token_id) const {
  const int s = token_id - vocab.num_reserved();
  if (s < 0 || s >= num_symbols) throw std::out_of_range("token is not a task symbol");
  return s;
}

int ExactTask::attribute_token(int attribute) const {
  if (attribute < 0 || attribute >= num_attributes) throw std::out_of_range("attribute out of range");
  return vocab.keyword_token_id("a" + std::to_string(attribute));
}

int ExactTask::token_attribute(int token_id) const {
  if (!vocab.is_keyword_token(token_id)) throw std::out_of_range("token is not an attribute token");
  return std::stoi(vocab.keyword_surface(token_id).substr(1));
}

bool ExactTask::operator==(const ExactTask& other) const {
  return num_symbols == other.num_symbols && num_attributes == other.num_attributes && seq_len == other.seq_len &&
         prior == other.prior && initial == other.initial && trans == other.trans;
}

namespace {

void check_query(const ExactTask& t, const std::vector<int>& prefix, int max_len) {
  if (static_cast<int>(prefix.size()) > max_len)
    throw std::invalid_argument("prefix of length " + std::to_string(prefix.size()) + " exceeds " +
                                std::to_string(max_len));
  for (int s : prefix)
    if (s < 0 || s >= t.num_symbols) throw std::out_of_range("prefix symbol out of range");
}

void check_attribute(const ExactTask& t, int attribute) {
  if (attribute < 0 || attribute >= t.num_attributes) throw std::out_of_range("attribute out of range");
}

}  // namespace

double prefix_likelihood(const ExactTask& task, int attribute, const std::vector<int>& prefix) {
  check_attribute(task, attribute);
  check_query(task, prefix, task.seq_len);
  if (prefix.empty()) return 1.0;
  const auto a = static_cast<size_t>(attribute);
  double p = task.initial[a][static_cast<size_t>(prefix[0])];
  for (size_t i = 1; i < prefix.size(); ++i)
    p *= task.trans[a][static_cast<size_t>(prefix[i - 1])][static_cast<size_t>(prefix[i])];
  return p;
}

std::vector<double> attribute_posterior(const ExactTask& task, const std::vector<int>& prefix) {
  std::vector<double> post(static_cast<size_t>(task.num_attributes));
  double total = 0.0;
  for (int a = 0; a < task.num_attributes; ++a) {
    post[static_cast<size_t>(a)] = task.prior[static_cast<size_t>(a)] * prefix_likelihood(task, a, prefix);
    total += post[static_cast<size_t>(a)];
  }
  if (total <= 0.0) throw std::domain_error("prefix has zero probability under every attribute");
  for (auto& p : post) p /= total;
  return post;
}

std::vector<double> exact_conditional(const ExactTask& task, int attribute, const std::vector<int>& prefix) {
  check_attribute(task, attribute);
  check_query(task, prefix, task.seq_len - 1);
  const auto a = static_cast<size_t>(attribute);
  if (prefix.empty()) return task.initial[a];
  return task.trans[a][static_cast<size_t>(prefix.back())];
}

std::vector<double> exact_marginal(const ExactTask& task, const std::vector<int>& prefix) {
  const std::vector<double> post = attribute_posterior(task, prefix);
  std::vector<double> out(static_cast<size_t>(task.num_symbols), 0.0);
  for (int a = 0; a < task.num_attributes; ++a) {
    const std::vector<double> cond = exact_conditional(task, a, prefix);
    for (int s = 0; s < task.num_symbols; ++s)
      out[static_cast<size_t>(s)] += post[static_cast<size_t>(a)] * cond[static_cast<size_t>(s)];
  }
  return out;
}

double exact_posterior(const ExactTask& task, int attribute, const std::vector<int>& prefix, int next_symbol) {
  check_attribute(task, attribute);
  if (next_symbol < 0 || next_symbol >= task.num_symbols) throw std::out_of_range("next symbol out of range");
  std::vector<int> extended = prefix;
  extended.push_back(next_symbol);
  return attribute_posterior(task, extended)[static_cast<size_t>(attribute)];
}

std::vector<std::pair<std::vector<int>, double>> enumerate_prefixes(const ExactTask& task, int length) {
  if (length < 0 || length > task.seq_len) throw std::invalid_argument("prefix length out of range");
  std::vector<std::pair<std::vector<int>, double>> out;
  std::vector<int> prefix(static_cast<size_t>(length), 0);
  while (true) {
    double mass = 0.0;
    for (int a = 0; a < task.num_attributes; ++a)
      mass += task.prior[static_cast<size_t>(a)] * prefix_likelihood(task, a, prefix);
    out.emplace_back(prefix, mass);
    int i = length - 1;
    while (i >= 0 && prefix[static_cast<size_t>(i)] == task.num_symbols - 1) {
      prefix[static_cast<size_t>(i)] = 0;
      --i;
    }
    if (i < 0) break;
    ++prefix[static_cast<size_t>(i)];
  }
  return out;
}

std::vector<Example> sample_task_corpus(const ExactTask& task, int count, bool conditional, uint64_t seed) {
  if (count <= 0) throw std::invalid_argument("sample_task_corpus: count must be positive");
  task.validate();
  Rng rng(seed);
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(count));
  for (int i = 0; i < count; ++i) {
    const auto a = rng.categorical(task.prior);
    Example ex;
    if (conditional) ex.attribute = {task.attribute_token(static_cast<int>(a))};
    int prev = static_cast<int>(rng.categorical(task.initial[a]));
    ex.continuation.push_back(task.symbol_token(prev));
    for (int t = 1; t < task.seq_len; ++t) {
      prev = static_cast<int>(rng.categorical(task.trans[a][static_cast<size_t>(prev)]));
      ex.continuation.push_back(task.symbol_token(prev));
    }
    out.push_back(std::move(ex));
  }
  return out;
}

namespace {

void write_row(std::FILE* f, const std::vector<double>& row) {
  for (double p : row) std::fprintf(f, " %.17g", p);
  std::fputc('\n', f);
}

std::vector<double> parse_row(std::istringstream& in, size_t n, const std::string& what) {
  std::vector<double> row(n);
  for (auto& p : row)
    if (!(in >> p)) throw std::runtime_error(what + ": truncated probability row");
  return row;
}

}  // namespace

void save_exact_task(const ExactTask& task, const std::string& path) {
  task.validate();
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) throw std::runtime_error("cannot write " + path);
  std::fprintf(f, "exact_task\n");
  std::fprintf(f, "symbols %d\n", task.num_symbols);
  std::fprintf(f, "attributes %d\n", task.num_attributes);
  std::fprintf(f, "length %d\n", task.seq_len);
  std::fprintf(f, "prior");
  write_row(f, task.prior);
  for (int a = 0; a < task.num_attributes; ++a) {
    std::fprintf(f, "initial %d", a);
    write_row(f, task.initial[static_cast<size_t>(a)]);
  }
  for (int a = 0; a < task.num_attributes; ++a)
    for (int s = 0; s < task.num_symbols; ++s) {
      std::fprintf(f, "trans %d %d", a, s);
      write_row(f, task.trans[static_cast<size_t>(a)][static_cast<size_t>(s)]);
    }
  if (std::fclose(f) != 0) throw std::runtime_error("cannot write " + path);
}

ExactTask load_exact_task(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read " + path);
  auto fail = [&](const std::string& why) { return std::runtime_error(path + ": " + why); };

  std::string line;
  if (!std::getline(in, line) || line != "exact_task") throw fail("missing exact_task header");

  ExactTask t;
  auto read_dim = [&](const std::string& key) {
    if (!std::getline(in, line)) throw fail("truncated");
    std::istringstream is(line);
    std::string word;
    int value = 0;
    if (!(is >> word >> value) || word != key) throw fail("expected '" + key + " <n>' line");
    return value;
  };
  t.num_symbols = read_dim("symbols");
  t.num_attributes = read_dim("attributes");
  t.seq_len = read_dim("length");
  if (t.num_symbols < 2 || t.num_attributes < 1 || t.seq_len < 1) throw fail("bad dimensions");
  t.vocab = task_vocab(t.num_symbols, t.num_attributes);
  t.initial.resize(static_cast<size_t>(t.num_attributes));
  t.trans.assign(static_cast<size_t>(t.num_attributes),
                 std::vector<std::vector<double>>(static_cast<size_t>(t.num_symbols)));

  const auto v = static_cast<size_t>(t.num_symbols);
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream is(line);
    std::string kind;
    is >> kind;
    if (kind == "prior") {
      t.prior = parse_row(is, static_cast<size_t>(t.num_attributes), "prior");
    } else if (kind == "initial") {
      int a = -1;
      if (!(is >> a) || a < 0 || a >= t.num_attributes) throw fail("bad initial line");
      t.initial[static_cast<size_t>(a)] = parse_row(is, v, "initial");
    } else if (kind == "trans") {
      int a = -1, s = -1;
      if (!(is >> a >> s) || a < 0 || a >= t.num_attributes || s < 0 || s >= t.num_symbols)
        throw fail("bad trans line");
      t.trans[static_cast<size_t>(a)][static_cast<size_t>(s)] = parse_row(is, v, "trans");
    } else {
      throw fail("unknown line '" + kind + "'");
    }
  }
  try {
    t.validate();
  } catch (const std::invalid_argument& e) {
    throw fail(e.what());
  }
  return t;
}

}  // namespace auxtune
