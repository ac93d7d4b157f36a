#pragma once

// Token-level and sentence-level views of a model: categorical sampling,
// log-probabilities and exact per-step KL against a frozen reference.

#include <span>
#include <vector>

#include "cory/mdp.hpp"
#include "cory/model.hpp"
#include "cory/rng.hpp"

namespace cory {

enum class Decoding { sample, greedy };

struct SampledAction {
  TokenSeq action;
  std::vector<double> token_logprobs;  // log pi(w_i | s0, w_{1:i-1}), one per real token
  std::vector<double> token_kls;       // KL(pi(.|ctx) || pi_ref(.|ctx)) at each decision
  std::vector<double> values;          // V at each pre-decision state

  double sentence_kl() const;
  double sentence_logprob() const;
};

// The policy never emits the pad token: every distribution below is the
// softmax over the vocabulary with the model's pad id (if any) removed.

// KL(softmax(p_logits) || softmax(q_logits)), summed over the full vocabulary
// except `mask` (-1 for none).
double categorical_kl(std::span<const double> p_logits, std::span<const double> q_logits, int mask = -1);

// Draws one token from softmax(logits) by inverse CDF on a single uniform draw.
TokenId sample_token(std::span<const double> logits, Rng& rng, int mask = -1);
TokenId argmax_token(std::span<const double> logits, int mask = -1);

// Generates up to max_new tokens after `prompt` (stopping at eos) at
// temperature 1, or greedily. Records log-prob, exact KL against `ref` and
// the value estimate at every step.
SampledAction sample_action(const ParamStore& model, const ParamStore& ref, const TokenSeq& prompt,
                            std::size_t max_new, Rng& rng, Decoding mode = Decoding::sample);

// Decoding without the reference (evaluation path).
TokenSeq greedy_action(const ParamStore& model, const TokenSeq& prompt, std::size_t max_new);
TokenSeq sampled_tokens(const ParamStore& model, const TokenSeq& prompt, std::size_t max_new, Rng& rng);

// Re-scores a given action: per-token logprobs, KLs and values.
SampledAction score_action(const ParamStore& model, const ParamStore& ref, const TokenSeq& prompt,
                           const TokenSeq& action);

// sum_i log pi(w_i | prompt, w_{1:i-1}) over the real action tokens.
double sentence_logprob(const ParamStore& model, const TokenSeq& prompt, const TokenSeq& action);

// Exact KL of the next-token distributions of model and ref given context.
double step_kl(const ParamStore& model, const ParamStore& ref, const TokenSeq& context);

}  // namespace cory
