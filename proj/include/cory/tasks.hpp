#pragma once

// Synthetic reward regimes: a subjective lexicon scorer over word tokens and
// an objective arithmetic task scored 0/1 by extracting the final number.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cory/mdp.hpp"
#include "cory/rng.hpp"

namespace cory {

enum class RewardKind { subjective, objective };

using Lexicon = std::unordered_map<TokenId, double>;

// A query s0 plus, for objective tasks, its ground-truth answer tokens.
struct Query {
  TokenSeq prompt;
  std::vector<TokenId> truth;
};

using ObjectiveInstance = Query;

struct TaskSpec {
  std::string name;
  Vocab vocab;
  RewardKind kind = RewardKind::objective;
  std::size_t max_prompt_len = 8;  // M
  std::size_t max_action_len = 8;  // N
  int difficulty = 1;              // arithmetic generator only
  std::vector<Query> corpus;       // when non-empty, queries are drawn from here
  Lexicon lexicon;                 // subjective scoring weights

  Query sample_query(Rng& rng) const;
  double reward(const Query& query, const TokenSeq& action) const;
  // Deterministic evaluation set: the full enumeration for difficulty-1
  // arithmetic, otherwise `n` queries drawn from `seed`.
  std::vector<Query> eval_queries(std::size_t n, std::uint64_t seed) const;
};

// Digits 0-9, '+', '=', five fillers and the three specials (V = 20).
Vocab arithmetic_vocab();
// Sentiment-bearing and neutral word symbols plus specials.
Vocab sentiment_vocab();
Lexicon default_lexicon(const Vocab& vocab);

TaskSpec make_arithmetic_task(int difficulty = 1, std::size_t max_action_len = 8);
TaskSpec make_sentiment_task(std::size_t max_action_len = 8);

bool is_digit_token(TokenId id, const Vocab& vocab);

// Mean lexicon weight over the content tokens (eos excluded; unknown tokens
// weigh 0), clamped to [-1, 1]. Empty content scores 0.
double lexicon_score(const TokenSeq& action, const Lexicon& lexicon);

// Last maximal run of digit tokens among the action's real tokens (empty if
// there is none).
std::vector<TokenId> extract_last_number(std::span<const TokenId> tokens, const Vocab& vocab);

// 1 iff the last digit run equals truth exactly, else 0.
double extract_and_match(const TokenSeq& action, std::span<const TokenId> truth, const Vocab& vocab);

// difficulty 1: single-digit operands with a single-digit sum;
// 2: any single-digit operands; 3: two-digit operands.
ObjectiveInstance gen_arithmetic_instance(Rng& rng, int difficulty, const Vocab& vocab, std::size_t max_prompt_len);
ObjectiveInstance make_arithmetic_instance(int a, int b, const Vocab& vocab, std::size_t max_prompt_len);
std::vector<TokenId> number_tokens(int value, const Vocab& vocab);

// Whitespace-separated symbols per line; objective corpora carry
// "prompt<TAB>answer". Blank lines are skipped.
std::vector<Query> load_corpus(const std::filesystem::path& path, const Vocab& vocab, std::size_t max_prompt_len,
                               bool with_truth);
// "symbol<TAB>weight" lines.
Lexicon load_lexicon(const std::filesystem::path& path, const Vocab& vocab);

}  // namespace cory
