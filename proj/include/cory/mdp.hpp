#pragma once

// Token-level decision process: vocabulary, padded token sequences and the
// deterministic concatenation transition.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace cory {

using TokenId = std::int32_t;

inline constexpr std::string_view kPadSymbol = "<pad>";
inline constexpr std::string_view kEosSymbol = "<eos>";
inline constexpr std::string_view kSepSymbol = "<sep>";

class Vocab {
 public:
  // Symbols are assigned ids in order. Must contain the three reserved
  // symbols exactly once.
  explicit Vocab(std::vector<std::string> symbols);

  static Vocab load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;

  std::size_t size() const { return symbols_.size(); }
  TokenId pad_id() const { return pad_; }
  TokenId eos_id() const { return eos_; }
  TokenId sep_id() const { return sep_; }

  const std::string& symbol(TokenId id) const;
  std::optional<TokenId> find(std::string_view symbol) const;
  TokenId id(std::string_view symbol) const;  // throws std::out_of_range
  const std::vector<std::string>& symbols() const { return symbols_; }

  bool is_special(TokenId id) const { return id == pad_ || id == eos_ || id == sep_; }

 private:
  std::vector<std::string> symbols_;
  std::unordered_map<std::string, TokenId> index_;
  TokenId pad_ = -1;
  TokenId eos_ = -1;
  TokenId sep_ = -1;
};

// Fixed-capacity token sequence. Positions at or past real_len() hold the pad
// id; an eos, if present, is the last real token.
class TokenSeq {
 public:
  TokenSeq(std::size_t max_len, TokenId pad_id, TokenId eos_id);
  TokenSeq(std::span<const TokenId> tokens, std::size_t max_len, TokenId pad_id, TokenId eos_id);
  static TokenSeq from(std::span<const TokenId> tokens, std::size_t max_len, const Vocab& vocab) {
    return TokenSeq(tokens, max_len, vocab.pad_id(), vocab.eos_id());
  }

  std::size_t real_len() const { return real_len_; }
  std::size_t max_len() const { return ids_.size(); }
  TokenId pad_id() const { return pad_; }
  TokenId eos_id() const { return eos_; }

  const std::vector<TokenId>& padded() const { return ids_; }
  std::span<const TokenId> real() const { return {ids_.data(), real_len_}; }
  TokenId operator[](std::size_t i) const { return ids_[i]; }
  bool ends_with_eos() const { return real_len_ > 0 && ids_[real_len_ - 1] == eos_; }

  // Real tokens with a trailing eos removed.
  std::span<const TokenId> content() const {
    return {ids_.data(), ends_with_eos() ? real_len_ - 1 : real_len_};
  }

  friend bool operator==(const TokenSeq&, const TokenSeq&) = default;

 private:
  friend TokenSeq append(const TokenSeq&, TokenId);
  std::vector<TokenId> ids_;
  std::size_t real_len_ = 0;
  TokenId pad_;
  TokenId eos_;
};

// s_{i+1} = (s_i, w). Throws CapacityExceeded when the state is full.
TokenSeq append(const TokenSeq& state, TokenId token);

// True iff the last real token is eos or the sequence is at capacity.
bool is_complete(const TokenSeq& seq);

// Concatenation of real tokens; the result has the given capacity.
TokenSeq concat(const TokenSeq& a, std::span<const TokenId> tail, std::size_t max_len);

struct Transition {
  TokenSeq state;
  TokenId token;
  double reward = 0.0;
  TokenSeq next_state;
  bool is_terminal = false;
};

// Unrolls an action taken from `start` into one transition per real action
// token; the last one is terminal. Rewards, when given, must have one entry
// per real token.
std::vector<Transition> unroll(const TokenSeq& start, const TokenSeq& action,
                               std::span<const double> rewards = {});

std::vector<TokenId> tokenize(std::string_view line, const Vocab& vocab, std::size_t line_no = 0);
std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab);

}  // namespace cory
