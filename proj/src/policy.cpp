#include "cory/policy.hpp"

#include <cmath>
#include <stdexcept>

#include "cory/numeric.hpp"

namespace cory {

double SampledAction::sentence_kl() const {
  double s = 0.0;
  for (double k : token_kls) s += k;
  return s;
}

double SampledAction::sentence_logprob() const {
  double s = 0.0;
  for (double l : token_logprobs) s += l;
  return s;
}

double categorical_kl(std::span<const double> p_logits, std::span<const double> q_logits, int mask) {
  if (p_logits.size() != q_logits.size()) throw std::invalid_argument("categorical_kl: size mismatch");
  std::vector<double> lp(p_logits.size()), lq(q_logits.size());
  masked_log_softmax(p_logits, mask, lp);
  masked_log_softmax(q_logits, mask, lq);
  double kl = 0.0;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    const double p = std::exp(lp[i]);
    if (p > 0.0) kl += p * (lp[i] - lq[i]);
  }
  // Rounding can leave a tiny negative residue for equal distributions.
  return kl < 0.0 ? 0.0 : kl;
}

TokenId sample_token(std::span<const double> logits, Rng& rng, int mask) {
  std::vector<double> p(logits.size());
  masked_log_softmax(logits, mask, p);
  for (double& v : p) v = std::exp(v);
  const double u = uniform01(rng);
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (u < acc) return static_cast<TokenId>(i);
  }
  // u landed in the rounding gap above the accumulated mass.
  for (std::size_t i = p.size(); i-- > 0;)
    if (p[i] > 0.0) return static_cast<TokenId>(i);
  return 0;
}

TokenId argmax_token(std::span<const double> logits, int mask) {
  std::size_t best = mask == 0 ? 1 : 0;
  for (std::size_t i = best + 1; i < logits.size(); ++i)
    if (static_cast<int>(i) != mask && logits[i] > logits[best]) best = i;
  return static_cast<TokenId>(best);
}

namespace {

std::vector<TokenId> generate(const ParamStore& model, const TokenSeq& prompt, std::size_t max_new, Rng* rng,
                              Decoding mode, std::vector<double>* logprobs) {
  if (prompt.real_len() == 0) throw std::invalid_argument("generation needs a non-empty prompt");
  if (max_new == 0) throw std::invalid_argument("max_new must be >= 1");
  std::vector<TokenId> ctx(prompt.real().begin(), prompt.real().end());
  std::vector<TokenId> out;
  std::vector<double> lsm(model.dims().vocab);
  const int mask = model.dims().pad_id;
  while (out.size() < max_new) {
    const auto trace = forward(model, ctx);
    const auto row = trace.logits_row(trace.positions() - 1);
    const TokenId tok = mode == Decoding::greedy ? argmax_token(row, mask) : sample_token(row, *rng, mask);
    if (logprobs) {
      masked_log_softmax(row, mask, lsm);
      logprobs->push_back(lsm[static_cast<std::size_t>(tok)]);
    }
    out.push_back(tok);
    ctx.push_back(tok);
    if (tok == prompt.eos_id()) break;
  }
  return out;
}

}  // namespace

SampledAction score_action(const ParamStore& model, const ParamStore& ref, const TokenSeq& prompt,
                           const TokenSeq& action) {
  const std::size_t n = action.real_len();
  if (n == 0) throw std::invalid_argument("score_action: empty action");
  std::vector<TokenId> ctx(prompt.real().begin(), prompt.real().end());
  ctx.insert(ctx.end(), action.real().begin(), action.real().end() - 1);
  const auto tm = forward(model, ctx);
  const auto tr = forward(ref, ctx);
  SampledAction s{action, {}, {}, {}};
  std::vector<double> lsm(model.dims().vocab);
  const std::size_t base = prompt.real_len() - 1;
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = tm.logits_row(base + i);
    masked_log_softmax(row, model.dims().pad_id, lsm);
    s.token_logprobs.push_back(lsm[static_cast<std::size_t>(action[i])]);
    s.token_kls.push_back(categorical_kl(row, tr.logits_row(base + i), model.dims().pad_id));
    s.values.push_back(tm.values[base + i]);
  }
  return s;
}

SampledAction sample_action(const ParamStore& model, const ParamStore& ref, const TokenSeq& prompt,
                            std::size_t max_new, Rng& rng, Decoding mode) {
  std::vector<double> logprobs;
  const auto tokens = generate(model, prompt, max_new, &rng, mode, &logprobs);
  TokenSeq action(tokens, max_new, prompt.pad_id(), prompt.eos_id());
  SampledAction s = score_action(model, ref, prompt, action);
  s.token_logprobs = std::move(logprobs);
  return s;
}

TokenSeq greedy_action(const ParamStore& model, const TokenSeq& prompt, std::size_t max_new) {
  const auto tokens = generate(model, prompt, max_new, nullptr, Decoding::greedy, nullptr);
  return TokenSeq(tokens, max_new, prompt.pad_id(), prompt.eos_id());
}

TokenSeq sampled_tokens(const ParamStore& model, const TokenSeq& prompt, std::size_t max_new, Rng& rng) {
  const auto tokens = generate(model, prompt, max_new, &rng, Decoding::sample, nullptr);
  return TokenSeq(tokens, max_new, prompt.pad_id(), prompt.eos_id());
}

double sentence_logprob(const ParamStore& model, const TokenSeq& prompt, const TokenSeq& action) {
  if (action.real_len() == 0) throw std::invalid_argument("sentence_logprob: empty action");
  std::vector<TokenId> ctx(prompt.real().begin(), prompt.real().end());
  ctx.insert(ctx.end(), action.real().begin(), action.real().end() - 1);
  const auto trace = forward(model, ctx);
  std::vector<double> lsm(model.dims().vocab);
  double total = 0.0;
  const std::size_t base = prompt.real_len() - 1;
  for (std::size_t i = 0; i < action.real_len(); ++i) {
    masked_log_softmax(trace.logits_row(base + i), model.dims().pad_id, lsm);
    total += lsm[static_cast<std::size_t>(action[i])];
  }
  return total;
}

double step_kl(const ParamStore& model, const ParamStore& ref, const TokenSeq& context) {
  const auto tm = forward(model, context);
  const auto tr = forward(ref, context);
  const std::size_t last = tm.positions() - 1;
  return categorical_kl(tm.logits_row(last), tr.logits_row(last), model.dims().pad_id);
}

}  // namespace cory
