#include "cory/tasks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "cory/errors.hpp"

namespace cory {

namespace {

constexpr const char* kFillers[] = {"a", "b", "c", "d", "e"};

const std::vector<std::pair<std::string, double>>& lexicon_words() {
  static const std::vector<std::pair<std::string, double>> words = {
      {"great", 1.0}, {"good", 0.5}, {"fun", 1.0},  {"witty", 0.5}, {"love", 1.0},  {"best", 1.0},
      {"bad", -1.0},  {"awful", -1.0}, {"dull", -0.5}, {"boring", -1.0}, {"worst", -1.0}, {"poor", -0.5}};
  return words;
}

constexpr const char* kNeutralWords[] = {"the", "a", "movie", "film", "plot", "actor", "story", "was",
                                         "is",  "and", "this", "it",   "very", "not",  "so",    "but"};

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

}  // namespace

Vocab arithmetic_vocab() {
  std::vector<std::string> s = {std::string(kPadSymbol), std::string(kEosSymbol), std::string(kSepSymbol)};
  for (int d = 0; d < 10; ++d) s.push_back(std::to_string(d));
  s.push_back("+");
  s.push_back("=");
  for (const char* f : kFillers) s.push_back(f);
  return Vocab(std::move(s));
}

Vocab sentiment_vocab() {
  std::vector<std::string> s = {std::string(kPadSymbol), std::string(kEosSymbol), std::string(kSepSymbol)};
  for (const auto& [w, _] : lexicon_words()) s.push_back(w);
  for (const char* w : kNeutralWords) s.push_back(w);
  return Vocab(std::move(s));
}

Lexicon default_lexicon(const Vocab& vocab) {
  Lexicon lex;
  for (const auto& [w, weight] : lexicon_words())
    if (auto id = vocab.find(w)) lex[*id] = weight;
  return lex;
}

bool is_digit_token(TokenId id, const Vocab& vocab) {
  if (id < 0 || static_cast<std::size_t>(id) >= vocab.size()) return false;
  const auto& s = vocab.symbol(id);
  return s.size() == 1 && s[0] >= '0' && s[0] <= '9';
}

std::vector<TokenId> number_tokens(int value, const Vocab& vocab) {
  std::vector<TokenId> out;
  for (char c : std::to_string(value)) out.push_back(vocab.id(std::string(1, c)));
  return out;
}

ObjectiveInstance make_arithmetic_instance(int a, int b, const Vocab& vocab, std::size_t max_prompt_len) {
  std::vector<TokenId> prompt = number_tokens(a, vocab);
  prompt.push_back(vocab.id("+"));
  const auto rhs = number_tokens(b, vocab);
  prompt.insert(prompt.end(), rhs.begin(), rhs.end());
  prompt.push_back(vocab.id("="));
  return {TokenSeq::from(prompt, max_prompt_len, vocab), number_tokens(a + b, vocab)};
}

ObjectiveInstance gen_arithmetic_instance(Rng& rng, int difficulty, const Vocab& vocab, std::size_t max_prompt_len) {
  switch (difficulty) {
    case 1: {
      // 55 ordered pairs with a + b <= 9, drawn uniformly.
      std::uint64_t k = uniform_index(rng, 55);
      for (int a = 0; a <= 9; ++a) {
        const auto row = static_cast<std::uint64_t>(10 - a);
        if (k < row) return make_arithmetic_instance(a, static_cast<int>(k), vocab, max_prompt_len);
        k -= row;
      }
      break;
    }
    case 2: {
      const int a = static_cast<int>(uniform_index(rng, 10));
      const int b = static_cast<int>(uniform_index(rng, 10));
      return make_arithmetic_instance(a, b, vocab, max_prompt_len);
    }
    case 3: {
      const int a = 10 + static_cast<int>(uniform_index(rng, 90));
      const int b = 10 + static_cast<int>(uniform_index(rng, 90));
      return make_arithmetic_instance(a, b, vocab, max_prompt_len);
    }
    default:
      break;
  }
  throw std::invalid_argument("difficulty must be 1, 2 or 3");
}

double lexicon_score(const TokenSeq& action, const Lexicon& lexicon) {
  const auto content = action.content();
  if (content.empty()) return 0.0;
  double sum = 0.0;
  for (auto id : content) {
    auto it = lexicon.find(id);
    if (it != lexicon.end()) sum += it->second;
  }
  return std::clamp(sum / static_cast<double>(content.size()), -1.0, 1.0);
}

std::vector<TokenId> extract_last_number(std::span<const TokenId> tokens, const Vocab& vocab) {
  std::size_t end = tokens.size();
  while (end > 0 && !is_digit_token(tokens[end - 1], vocab)) --end;
  std::size_t begin = end;
  while (begin > 0 && is_digit_token(tokens[begin - 1], vocab)) --begin;
  return {tokens.begin() + static_cast<std::ptrdiff_t>(begin), tokens.begin() + static_cast<std::ptrdiff_t>(end)};
}

double extract_and_match(const TokenSeq& action, std::span<const TokenId> truth, const Vocab& vocab) {
  const auto found = extract_last_number(action.real(), vocab);
  if (found.empty()) return 0.0;
  return std::equal(found.begin(), found.end(), truth.begin(), truth.end()) ? 1.0 : 0.0;
}

TaskSpec make_arithmetic_task(int difficulty, std::size_t max_action_len) {
  if (difficulty < 1 || difficulty > 3) throw ConfigError("difficulty must be 1, 2 or 3");
  const std::size_t prompt_len = difficulty == 3 ? 6 : 4;
  return TaskSpec{"arithmetic", arithmetic_vocab(), RewardKind::objective, prompt_len, max_action_len, difficulty, {}, {}};
}

TaskSpec make_sentiment_task(std::size_t max_action_len) {
  TaskSpec t{"sentiment", sentiment_vocab(), RewardKind::subjective, 8, max_action_len, 1, {}, {}};
  t.lexicon = default_lexicon(t.vocab);
  return t;
}

Query TaskSpec::sample_query(Rng& rng) const {
  if (!corpus.empty()) return corpus[uniform_index(rng, corpus.size())];
  if (kind == RewardKind::objective) return gen_arithmetic_instance(rng, difficulty, vocab, max_prompt_len);
  // 2 to 8 token review openings drawn from the neutral and mildly
  // sentimental words.
  const std::size_t len = 2 + uniform_index(rng, std::min<std::size_t>(7, max_prompt_len - 1));
  std::vector<TokenId> ids;
  for (std::size_t i = 0; i < len; ++i) {
    TokenId id;
    do {
      id = static_cast<TokenId>(uniform_index(rng, vocab.size()));
    } while (vocab.is_special(id));
    ids.push_back(id);
  }
  return {TokenSeq::from(ids, max_prompt_len, vocab), {}};
}

double TaskSpec::reward(const Query& query, const TokenSeq& action) const {
  if (kind == RewardKind::objective) return extract_and_match(action, query.truth, vocab);
  return lexicon_score(action, lexicon);
}

std::vector<Query> TaskSpec::eval_queries(std::size_t n, std::uint64_t seed) const {
  std::vector<Query> out;
  if (corpus.empty() && kind == RewardKind::objective && difficulty == 1) {
    for (int a = 0; a <= 9; ++a)
      for (int b = 0; a + b <= 9; ++b) out.push_back(make_arithmetic_instance(a, b, vocab, max_prompt_len));
    return out;
  }
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) out.push_back(sample_query(rng));
  return out;
}

std::vector<Query> load_corpus(const std::filesystem::path& path, const Vocab& vocab, std::size_t max_prompt_len,
                               bool with_truth) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open corpus " + path.string());
  std::vector<Query> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    std::string prompt_text = line, answer_text;
    const auto tab = line.find('\t');
    if (with_truth) {
      if (tab == std::string::npos) throw ParseError("expected 'prompt<TAB>answer'", line_no);
      prompt_text = line.substr(0, tab);
      answer_text = line.substr(tab + 1);
    } else if (tab != std::string::npos) {
      throw ParseError("unexpected TAB in prompt-only corpus", line_no);
    }
    const auto ids = tokenize(prompt_text, vocab, line_no);
    if (ids.empty()) throw ParseError("empty prompt", line_no);
    if (ids.size() > max_prompt_len)
      throw ParseError("prompt of " + std::to_string(ids.size()) + " tokens exceeds limit " +
                           std::to_string(max_prompt_len),
                       line_no);
    for (auto id : ids)
      if (vocab.is_special(id)) throw ParseError("reserved symbol in prompt", line_no);
    Query q{TokenSeq::from(ids, max_prompt_len, vocab), {}};
    if (with_truth) {
      q.truth = tokenize(answer_text, vocab, line_no);
      if (q.truth.empty()) throw ParseError("empty answer", line_no);
    }
    out.push_back(std::move(q));
  }
  if (out.empty()) throw EmptyCorpus("corpus " + path.string() + " has no prompts");
  return out;
}

Lexicon load_lexicon(const std::filesystem::path& path, const Vocab& vocab) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open lexicon " + path.string());
  Lexicon lex;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw ParseError("expected 'symbol<TAB>weight'", line_no);
    const std::string sym = trim(line.substr(0, tab));
    auto id = vocab.find(sym);
    if (!id) throw ParseError("unknown symbol '" + sym + "'", line_no);
    double w;
    std::istringstream ws(line.substr(tab + 1));
    if (!(ws >> w) || !std::isfinite(w)) throw ParseError("bad weight for '" + sym + "'", line_no);
    lex[*id] = w;
  }
  return lex;
}

}  // namespace cory
