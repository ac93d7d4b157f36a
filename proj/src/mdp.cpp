#include "cory/mdp.hpp"

#include <fstream>
#include <sstream>

#include "cory/errors.hpp"

namespace cory {

Vocab::Vocab(std::vector<std::string> symbols) : symbols_(std::move(symbols)) {
  if (symbols_.size() < 4 || symbols_.size() > 512)
    throw ConfigError("vocabulary size must be in [4, 512], got " + std::to_string(symbols_.size()));
  for (std::size_t i = 0; i < symbols_.size(); ++i) {
    const auto& s = symbols_[i];
    if (s.empty()) throw ConfigError("empty symbol at id " + std::to_string(i));
    if (!index_.emplace(s, static_cast<TokenId>(i)).second)
      throw ConfigError("duplicate symbol '" + s + "'");
  }
  auto special = [&](std::string_view name) {
    auto it = index_.find(std::string(name));
    if (it == index_.end()) throw ConfigError("vocabulary lacks reserved symbol " + std::string(name));
    return it->second;
  };
  pad_ = special(kPadSymbol);
  eos_ = special(kEosSymbol);
  sep_ = special(kSepSymbol);
}

Vocab Vocab::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open vocabulary file " + path.string());
  std::vector<std::string> symbols;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    symbols.push_back(line);
  }
  while (!symbols.empty() && symbols.back().empty()) symbols.pop_back();
  return Vocab(std::move(symbols));
}

void Vocab::save(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write vocabulary file " + path.string());
  for (const auto& s : symbols_) out << s << '\n';
}

const std::string& Vocab::symbol(TokenId id) const {
  return symbols_.at(static_cast<std::size_t>(id));
}

std::optional<TokenId> Vocab::find(std::string_view symbol) const {
  auto it = index_.find(std::string(symbol));
  if (it == index_.end()) return std::nullopt;
  return it->second;
}

TokenId Vocab::id(std::string_view symbol) const {
  auto found = find(symbol);
  if (!found) throw std::out_of_range("unknown symbol '" + std::string(symbol) + "'");
  return *found;
}

TokenSeq::TokenSeq(std::size_t max_len, TokenId pad_id, TokenId eos_id)
    : ids_(max_len, pad_id), pad_(pad_id), eos_(eos_id) {}

TokenSeq::TokenSeq(std::span<const TokenId> tokens, std::size_t max_len, TokenId pad_id, TokenId eos_id)
    : TokenSeq(max_len, pad_id, eos_id) {
  if (tokens.size() > max_len)
    throw CapacityExceeded("sequence of " + std::to_string(tokens.size()) + " tokens exceeds capacity " +
                           std::to_string(max_len));
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (tokens[i] == pad_id) throw std::invalid_argument("pad token inside real sequence");
    if (tokens[i] == eos_id && i + 1 != tokens.size())
      throw std::invalid_argument("eos must be the last real token");
    ids_[i] = tokens[i];
  }
  real_len_ = tokens.size();
}

TokenSeq append(const TokenSeq& state, TokenId token) {
  if (state.real_len_ >= state.max_len())
    throw CapacityExceeded("append to full sequence (capacity " + std::to_string(state.max_len()) + ")");
  if (state.ends_with_eos()) throw std::invalid_argument("append after eos");
  if (token == state.pad_) throw std::invalid_argument("cannot append the pad token");
  TokenSeq next = state;
  next.ids_[next.real_len_++] = token;
  return next;
}

bool is_complete(const TokenSeq& seq) {
  return seq.ends_with_eos() || seq.real_len() == seq.max_len();
}

TokenSeq concat(const TokenSeq& a, std::span<const TokenId> tail, std::size_t max_len) {
  std::vector<TokenId> ids(a.real().begin(), a.real().end());
  ids.insert(ids.end(), tail.begin(), tail.end());
  return TokenSeq(ids, max_len, a.pad_id(), a.eos_id());
}

std::vector<Transition> unroll(const TokenSeq& start, const TokenSeq& action, std::span<const double> rewards) {
  if (!rewards.empty() && rewards.size() != action.real_len())
    throw LengthMismatch("unroll: rewards/action length mismatch");
  std::vector<Transition> out;
  out.reserve(action.real_len());
  TokenSeq s = start;
  for (std::size_t i = 0; i < action.real_len(); ++i) {
    TokenSeq next = append(s, action[i]);
    const double r = rewards.empty() ? 0.0 : rewards[i];
    out.push_back(Transition{s, action[i], r, next, i + 1 == action.real_len()});
    s = std::move(next);
  }
  return out;
}

std::vector<TokenId> tokenize(std::string_view line, const Vocab& vocab, std::size_t line_no) {
  std::vector<TokenId> ids;
  std::istringstream in{std::string(line)};
  std::string sym;
  while (in >> sym) {
    auto id = vocab.find(sym);
    if (!id) throw ParseError("unknown symbol '" + sym + "'", line_no);
    ids.push_back(*id);
  }
  return ids;
}

std::string detokenize(std::span<const TokenId> ids, const Vocab& vocab) {
  std::string out;
  for (auto id : ids) {
    if (!out.empty()) out += ' ';
    out += vocab.symbol(id);
  }
  return out;
}

}  // namespace cory
