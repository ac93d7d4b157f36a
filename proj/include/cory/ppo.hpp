#pragma once

// PPO token-level update: GAE advantages, clipped surrogate, value loss and
// minibatch gradient ascent on L = L_policy - value_coef * L_value.

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "cory/mdp.hpp"
#include "cory/model.hpp"
#include "cory/rng.hpp"

namespace cory {

struct PpoConfig {
  double lr = 1.41e-5;
  double clip_eps = 0.2;
  double value_coef = 0.1;
  double gamma = 1.0;
  double lambda = 0.95;
  double eta = 0.3;
  std::size_t ppo_epochs = 4;
  std::size_t minibatch_size = 256;    // episodes per minibatch
  std::size_t grad_accum_steps = 1;    // minibatches per optimizer step
  bool clip_value = true;
  double value_clip = 0.2;
  bool normalize_advantages = false;
  OptimizerKind optimizer = OptimizerKind::sgd;

  void validate() const;  // throws ConfigError
};

// One sentence-level record (s~0, a, reward) expanded to token level. Index i
// refers to the i-th real action token.
struct Episode {
  std::vector<TokenId> context;  // s~0
  std::vector<TokenId> action;   // real action tokens, eos included when generated
  std::vector<double> rewards;
  std::vector<double> old_logprobs;
  std::vector<double> old_values;
  std::vector<double> advantages;
  std::vector<double> returns;

  std::size_t size() const { return action.size(); }
  // The transitions (s_i, w_i, r_i, s_{i+1}) of this episode.
  std::vector<Transition> transitions(std::size_t context_capacity, TokenId pad, TokenId eos) const;
};

struct TokenBatch {
  std::vector<Episode> episodes;
  std::size_t token_count() const;
};

// A_i = sum_{j>=i} (gamma*lambda)^{j-i} delta_j with
// delta_j = r_j + gamma * V_{j+1} - V_j and V past the terminal step = 0.
std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                        double lambda);

// Fills advantages and returns (advantage + old value) for every episode.
void compute_advantages(TokenBatch& batch, const PpoConfig& cfg);

// mean_t min(rho_t * A_t, clip(rho_t, 1-eps, 1+eps) * A_t), rho = exp(new-old).
double policy_loss(std::span<const double> new_logprobs, std::span<const double> old_logprobs,
                   std::span<const double> advantages, double eps);

// Mean squared error.
double value_loss(std::span<const double> pred_values, std::span<const double> target_returns);

// mean max((v - R)^2, (v_old + clip(v - v_old, -c, c) - R)^2).
double clipped_value_loss(std::span<const double> pred_values, std::span<const double> old_values,
                          std::span<const double> target_returns, double clip);

struct ObjectiveParts {
  double objective = 0.0;  // L = L_policy - value_coef * L_value
  double policy = 0.0;
  double value = 0.0;
  double ratio_sum = 0.0;
  std::size_t clipped = 0;
  std::size_t tokens = 0;
};

// Evaluates L over the selected episodes (token-mean). When grad_scale is
// non-zero, grad_scale * dL/dparams is accumulated into model.grad().
ObjectiveParts ppo_objective(ParamStore& model, const TokenBatch& batch, std::span<const std::size_t> episodes,
                             const PpoConfig& cfg, double grad_scale);

struct UpdateStats {
  double mean_ratio = 1.0;
  double first_minibatch_ratio = 1.0;
  double clip_fraction = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double grad_norm = 0.0;  // mean over optimizer steps
  std::size_t optimizer_steps = 0;
  std::size_t tokens = 0;
};

// cfg.ppo_epochs passes of shuffled minibatch ascent. Advantages must already
// be present. On NonFiniteGradient the exception names the epoch and
// minibatch; parameters may be partially updated (callers snapshot).
UpdateStats update(ParamStore& model, Optimizer& optimizer, const TokenBatch& batch, const PpoConfig& cfg,
                   Rng& rng);

}  // namespace cory
