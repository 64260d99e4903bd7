#include "auxtune/grammar.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "auxtune/rng.hpp"

namespace auxtune {

const SlotPool& GrammarSpec::pool(const std::string& name) const {
  for (const auto& p : pools)
    if (p.name == name) return p;
  throw std::out_of_range("grammar has no pool '" + name + "'");
}

namespace {

void check_weights(const std::vector<double>& ws, const std::string& what) {
  double sum = 0.0;
  for (double w : ws) {
    if (w <= 0.0) throw std::invalid_argument(what + ": non-positive weight");
    sum += w;
  }
  if (std::fabs(sum - 1.0) > 1e-9) throw std::invalid_argument(what + ": weights sum to " + std::to_string(sum));
}

std::vector<double> family_weights(const std::vector<Family>& fams) {
  std::vector<double> ws;
  for (const auto& f : fams) ws.push_back(f.weight);
  return ws;
}

}  // namespace

void GrammarSpec::validate() const {
  if (pools.empty() || prefix_families.empty() || keywords.empty())
    throw std::invalid_argument("grammar: pools, prefix families and keywords must be non-empty");
  check_weights(family_weights(prefix_families), "prefix families");
  std::vector<double> kws;
  for (const auto& k : keywords) kws.push_back(k.weight);
  check_weights(kws, "keywords");
  for (const auto& k : keywords) {
    if (k.continuations.empty()) throw std::invalid_argument("keyword '" + k.surface + "' has no continuations");
    check_weights(family_weights(k.continuations), "continuations of '" + k.surface + "'");
  }
  auto check_slots = [&](const Family& f) {
    if (f.slots.empty()) throw std::invalid_argument("grammar: empty family");
    for (const auto& s : f.slots) (void)pool(s);
  };
  for (const auto& f : prefix_families) check_slots(f);
  for (const auto& k : keywords)
    for (const auto& f : k.continuations) check_slots(f);
  // a keyword surface appearing inside a pool would break the
  // exactly-one-keyword-per-continuation construction
  for (const auto& k : keywords)
    for (const auto& p : pools)
      for (const auto& w : p.words)
        if (w == k.surface)
          throw std::invalid_argument("keyword surface '" + k.surface + "' collides with pool '" + p.name + "'");
}

namespace {

// A slot written "noun@s" agrees in number with every other "@s" slot;
// expansion enumerates singular/plural per tag and splits the weight, so
// each family in the result is over concrete "_sg"/"_pl" pools.
std::vector<Family> number_agreement(double weight, const std::vector<std::string>& tagged) {
  std::vector<std::string> tags;
  for (const auto& s : tagged) {
    const size_t at = s.find('@');
    if (at == std::string::npos) continue;
    const std::string t = s.substr(at + 1);
    if (std::find(tags.begin(), tags.end(), t) == tags.end()) tags.push_back(t);
  }
  std::vector<Family> out;
  const size_t combos = size_t{1} << tags.size();
  for (size_t mask = 0; mask < combos; ++mask) {
    Family f;
    f.weight = weight / static_cast<double>(combos);
    for (const auto& s : tagged) {
      const size_t at = s.find('@');
      if (at == std::string::npos) {
        f.slots.push_back(s);
        continue;
      }
      const size_t ti = static_cast<size_t>(
          std::find(tags.begin(), tags.end(), s.substr(at + 1)) - tags.begin());
      f.slots.push_back(s.substr(0, at) + ((mask >> ti & 1) ? "_pl" : "_sg"));
    }
    out.push_back(std::move(f));
  }
  return out;
}

void append_families(std::vector<Family>& dst, std::vector<Family> src) {
  for (auto& f : src) dst.push_back(std::move(f));
}

}  // namespace

GrammarSpec default_grammar(uint64_t seed) {
  GrammarSpec g;
  g.seed = seed;
  g.pools = {
      {"det_sg", {"the", "a", "this", "that", "every", "each", "one", "my", "our", "his", "her", "their", "some"}},
      {"det_pl",
       {"the", "these", "those", "many", "few", "several", "both", "my", "our", "his", "her", "their", "some"}},
      {"noun_sg",
       {"salary",  "job",     "house",   "garden", "morning", "report", "meeting", "city",   "train",   "kitchen",
        "teacher", "student", "doctor",  "neighbor", "project", "winter", "summer", "market", "movie",   "book",
        "song",    "road",    "office",  "child",  "friend",  "dinner", "lesson",  "river",  "mountain", "holiday",
        "engine",  "computer", "letter", "story",  "game",    "team",   "plan",    "idea",   "window",  "door",
        "table",   "chair",   "phone",   "ticket", "box",     "street"}},
      {"noun_pl",
       {"salaries", "jobs",     "houses",  "gardens", "mornings", "reports", "meetings", "cities",  "trains",
        "kitchens", "teachers", "students", "doctors", "neighbors", "projects", "winters", "summers", "markets",
        "movies",   "books",    "songs",   "roads",   "offices",  "children", "friends", "dinners", "lessons",
        "rivers",   "mountains", "holidays", "engines", "computers", "letters", "stories", "games",  "teams",
        "plans",    "ideas",    "windows", "doors",   "tables",   "chairs",  "phones",   "tickets", "boxes",
        "streets"}},
      {"link_verb_sg", {"seems", "feels", "looks", "sounds", "remains", "appears", "gets", "stays", "turns",
                        "proves"}},
      {"link_verb_pl", {"seem", "feel", "look", "sound", "remain", "appear", "get", "stay", "turn", "prove"}},
      {"trans_verb_sg", {"likes", "needs", "wants", "finds",  "keeps", "makes",  "takes", "sees",
                         "hears", "knows", "brings", "sends", "shows", "gives",  "buys",  "sells",
                         "reads", "writes", "opens", "closes", "holds", "carries", "watches", "cleans"}},
      {"trans_verb_pl", {"like", "need", "want", "find",  "keep", "make",  "take", "see",
                         "hear", "know", "bring", "send", "show", "give",  "buy",  "sell",
                         "read", "write", "open", "close", "hold", "carry", "watch", "clean"}},
      {"pres_verb_sg", {"works",  "walks",  "talks",   "waits",   "plays",  "moves",   "lives", "cooks",
                        "rests",  "studies", "travels", "listens", "sleeps", "smiles",  "laughs", "wanders",
                        "pauses", "sings",  "dances",  "rides"}},
      {"pres_verb_pl", {"work",  "walk",  "talk",   "wait",   "play",  "move",   "live", "cook",
                        "rest",  "study", "travel", "listen", "sleep", "smile",  "laugh", "wander",
                        "pause", "sing",  "dance",  "ride"}},
      {"feel_verb_sg", {"finds", "considers", "calls", "deems"}},
      {"feel_verb_pl", {"find", "consider", "call", "deem"}},
      {"pronoun_sg", {"he", "she", "it"}},
      {"pronoun_pl", {"i", "you", "we", "they"}},
      {"adj", {"low",    "high",  "good",  "bad",   "quiet", "busy",   "bright", "dark",  "heavy", "light",
               "warm",   "cold",  "early", "late",  "simple", "hard",  "clean",  "messy", "cheap", "costly",
               "calm",   "loud",  "fresh", "stale", "strong", "weak",  "quick",  "slow",  "full",  "empty",
               "happy",  "sad",   "tired", "eager", "plain", "fancy",  "rough",  "smooth", "wide", "narrow"}},
      {"adv", {"really", "quite", "very", "rather", "almost", "simply", "clearly", "barely", "nearly", "truly",
               "deeply", "fairly", "mostly", "oddly", "surely", "incredibly"}},
      {"place", {"home", "outside", "upstairs", "downtown", "nearby", "abroad", "inside", "downstairs",
                 "everywhere", "somewhere", "around", "away"}},
      {"time", {"today", "yesterday", "tonight", "tomorrow", "sometimes", "often", "rarely", "usually", "always",
                "never", "soon", "later"}},
      {"inf_verb", {"stay", "work", "walk", "talk", "wait", "play", "move", "live", "cook", "rest",
                    "study", "travel", "listen", "sleep", "smile", "laugh", "read", "write", "sing", "dance"}},
      {"obj_noun", {"work", "life", "music", "food", "travel", "reading", "silence", "routine", "schedule",
                    "pace", "noise", "view"}},
      {"quality", {"rewarding", "boring", "pleasant", "tiring", "exciting", "peaceful", "stressful", "charming",
                   "awkward", "soothing", "delightful", "dreadful"}},
      {"modal", {"will", "might", "should", "could", "must", "may"}},
  };

  append_families(g.prefix_families, number_agreement(0.30, {"det@s", "noun@s", "link_verb@s", "adv", "adj"}));
  append_families(g.prefix_families, number_agreement(0.25, {"pronoun@s", "pres_verb@s", "place", "time"}));
  append_families(g.prefix_families,
                  number_agreement(0.25, {"det@s", "noun@s", "trans_verb@s", "det@o", "noun@o"}));
  append_families(g.prefix_families,
                  number_agreement(0.20, {"pronoun@s", "trans_verb@s", "det@o", "noun@o", "time"}));

  const std::vector<std::vector<std::string>> shapes = {
      {"pronoun@s", "feel_verb@s", "det_sg", "obj_noun", "adv", "quality"},
      {"pronoun@s", "modal", "inf_verb", "place", "time"},
      {"det@s", "noun@s", "link_verb@s", "adv", "adj"},
      {"pronoun@s", "pres_verb@s", "adv", "time"},
  };
  const std::vector<std::string> connectives = {"nevertheless", "however",      "because",  "therefore",
                                                "moreover",     "although",     "meanwhile", "instead",
                                                "otherwise",    "furthermore",  "consequently", "besides"};
  const int n = static_cast<int>(connectives.size());
  const double denom = n * (n + 1) / 2.0;
  for (int i = 0; i < n; ++i) {
    KeywordSpec k;
    k.surface = connectives[static_cast<size_t>(i)];
    k.weight = static_cast<double>(n - i) / denom;
    append_families(k.continuations, number_agreement(0.6, shapes[static_cast<size_t>(i % 4)]));
    append_families(k.continuations, number_agreement(0.4, shapes[static_cast<size_t>((i + 2) % 4)]));
    g.keywords.push_back(std::move(k));
  }
  g.validate();
  return g;
}

Vocab build_vocab(const GrammarSpec& spec) {
  std::vector<std::string> keywords, words;
  std::unordered_set<std::string> seen;
  for (const auto& k : spec.keywords) keywords.push_back(k.surface);
  for (const auto& p : spec.pools)
    for (const auto& w : p.words)
      if (seen.insert(w).second) words.push_back(w);
  for (const auto& k : spec.keywords)
    if (seen.insert(k.surface).second) words.push_back(k.surface);
  return Vocab::build(keywords, words);
}

namespace {

struct Sampler {
  const GrammarSpec& spec;
  const Vocab& vocab;
  Rng rng;
  std::vector<double> prefix_ws, keyword_ws;

  Sampler(const GrammarSpec& s, const Vocab& v, uint64_t seed) : spec(s), vocab(v), rng(seed) {
    spec.validate();
    prefix_ws = family_weights(spec.prefix_families);
    for (const auto& k : spec.keywords) keyword_ws.push_back(k.weight);
  }

  void render(const Family& f, std::vector<int>& out) {
    for (const auto& slot : f.slots) {
      const auto& pool = spec.pool(slot).words;
      out.push_back(vocab.id_of(pool[rng.uniform_int(pool.size())]));
    }
  }

  void draw(std::vector<int>& prefix, int& kw_index, std::vector<int>& continuation) {
    prefix.clear();
    continuation.clear();
    render(spec.prefix_families[rng.categorical(prefix_ws)], prefix);
    kw_index = static_cast<int>(rng.categorical(keyword_ws));
    const KeywordSpec& k = spec.keywords[static_cast<size_t>(kw_index)];
    render(k.continuations[rng.categorical(family_weights(k.continuations))], continuation);
  }
};

}  // namespace

std::vector<std::vector<int>> gen_pretrain_corpus(const GrammarSpec& spec, const Vocab& vocab, int count) {
  if (count <= 0) throw std::invalid_argument("gen_pretrain_corpus: count must be positive");
  Sampler s(spec, vocab, mix_seed(spec.seed, 1));
  std::vector<std::vector<int>> out;
  out.reserve(static_cast<size_t>(count));
  std::vector<int> prefix, continuation;
  int kw;
  for (int i = 0; i < count; ++i) {
    s.draw(prefix, kw, continuation);
    std::vector<int> line = prefix;
    line.push_back(vocab.id_of(spec.keywords[static_cast<size_t>(kw)].surface));
    line.insert(line.end(), continuation.begin(), continuation.end());
    out.push_back(std::move(line));
  }
  return out;
}

std::vector<Example> gen_conditional_corpus(const GrammarSpec& spec, const Vocab& vocab, int count) {
  if (count <= 0) throw std::invalid_argument("gen_conditional_corpus: count must be positive");
  Sampler s(spec, vocab, mix_seed(spec.seed, 2));
  std::vector<Example> out;
  out.reserve(static_cast<size_t>(count));
  std::vector<int> prefix, continuation;
  int kw;
  for (int i = 0; i < count; ++i) {
    s.draw(prefix, kw, continuation);
    const KeywordSpec& k = spec.keywords[static_cast<size_t>(kw)];
    Example ex;
    ex.prefix = prefix;
    ex.attribute = {vocab.keyword_token_id(k.surface)};
    ex.continuation.push_back(vocab.id_of(k.surface));
    ex.continuation.insert(ex.continuation.end(), continuation.begin(), continuation.end());
    out.push_back(std::move(ex));
  }
  return out;
}

std::vector<double> analytic_unigram(const GrammarSpec& spec, const Vocab& vocab) {
  spec.validate();
  std::vector<double> count(static_cast<size_t>(vocab.size()), 0.0);
  double expected_len = 0.0;
  auto add_family = [&](const Family& f, double w) {
    for (const auto& slot : f.slots) {
      const auto& pool = spec.pool(slot).words;
      const double per = w / static_cast<double>(pool.size());
      for (const auto& word : pool) count[static_cast<size_t>(vocab.id_of(word))] += per;
    }
    expected_len += w * static_cast<double>(f.slots.size());
  };
  for (const auto& f : spec.prefix_families) add_family(f, f.weight);
  for (const auto& k : spec.keywords) {
    count[static_cast<size_t>(vocab.id_of(k.surface))] += k.weight;
    for (const auto& f : k.continuations) add_family(f, k.weight * f.weight);
  }
  expected_len += 1.0;
  for (auto& c : count) c /= expected_len;
  return count;
}

GrammarRecognizer::GrammarRecognizer(const GrammarSpec& spec, const Vocab& vocab) : spec_(spec) {
  spec.validate();
  for (const auto& p : spec.pools) {
    auto& ids = pool_ids_[p.name];
    for (const auto& w : p.words) ids.insert(vocab.id_of(w));
  }
  for (const auto& k : spec.keywords) {
    keyword_surface_ids_.push_back(vocab.id_of(k.surface));
    keyword_token_ids_.push_back(vocab.keyword_token_id(k.surface));
  }
}

bool GrammarRecognizer::family_matches(const Family& f, const int* tokens, size_t len) const {
  if (len != f.slots.size()) return false;
  for (size_t i = 0; i < len; ++i)
    if (!pool_ids_.at(f.slots[i]).count(tokens[i])) return false;
  return true;
}

int GrammarRecognizer::keyword_index(int token_id) const {
  for (size_t i = 0; i < keyword_surface_ids_.size(); ++i)
    if (keyword_surface_ids_[i] == token_id) return static_cast<int>(i);
  return -1;
}

bool GrammarRecognizer::sentence(const std::vector<int>& tokens) const {
  for (const auto& pf : spec_.prefix_families) {
    const size_t plen = pf.slots.size();
    if (tokens.size() < plen + 2) continue;
    if (!family_matches(pf, tokens.data(), plen)) continue;
    const int ki = keyword_index(tokens[plen]);
    if (ki < 0) continue;
    const auto& conts = spec_.keywords[static_cast<size_t>(ki)].continuations;
    for (const auto& cf : conts)
      if (family_matches(cf, tokens.data() + plen + 1, tokens.size() - plen - 1)) return true;
  }
  return false;
}

bool GrammarRecognizer::example(const Example& ex) const {
  if (ex.attribute.size() != 1 || ex.continuation.empty()) return false;
  int ki = -1;
  for (size_t i = 0; i < spec_.keywords.size(); ++i)
    if (keyword_surface_ids_[i] == ex.continuation[0]) ki = static_cast<int>(i);
  if (ki < 0) return false;
  if (ex.attribute[0] != keyword_token_ids_[static_cast<size_t>(ki)]) return false;

  bool prefix_ok = false;
  for (const auto& pf : spec_.prefix_families)
    if (family_matches(pf, ex.prefix.data(), ex.prefix.size())) prefix_ok = true;
  if (!prefix_ok) return false;

  for (const auto& cf : spec_.keywords[static_cast<size_t>(ki)].continuations)
    if (family_matches(cf, ex.continuation.data() + 1, ex.continuation.size() - 1)) return true;
  return false;
}

}  // namespace auxtune
