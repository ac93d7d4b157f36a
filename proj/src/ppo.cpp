#include "cory/ppo.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "cory/errors.hpp"
#include "cory/numeric.hpp"

namespace cory {

void PpoConfig::validate() const {
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("clip range must be in (0, 1)");
  if (!(gamma >= 0.0 && gamma <= 1.0)) throw ConfigError("gamma must be in [0, 1]");
  if (!(lambda >= 0.0 && lambda <= 1.0)) throw ConfigError("lambda must be in [0, 1]");
  if (!(eta >= 0.0)) throw ConfigError("KL coefficient must be >= 0");
  if (!(lr >= 0.0)) throw ConfigError("learning rate must be >= 0");
  if (!(value_coef >= 0.0)) throw ConfigError("value coefficient must be >= 0");
  if (clip_value && !(value_clip > 0.0)) throw ConfigError("value clip range must be > 0");
  if (ppo_epochs < 1 || minibatch_size < 1 || grad_accum_steps < 1) throw ConfigError("counts must be >= 1");
}

std::vector<Transition> Episode::transitions(std::size_t context_capacity, TokenId pad, TokenId eos) const {
  TokenSeq start(context, context_capacity, pad, eos);
  std::vector<TokenId> act = action;
  TokenSeq a(act, std::max<std::size_t>(act.size(), 1), pad, eos);
  return unroll(start, a, rewards);
}

std::size_t TokenBatch::token_count() const {
  std::size_t n = 0;
  for (const auto& e : episodes) n += e.size();
  return n;
}

std::vector<double> gae(std::span<const double> rewards, std::span<const double> values, double gamma,
                        double lambda) {
  if (rewards.size() != values.size()) throw LengthMismatch("gae: rewards and values differ in length");
  const std::size_t n = rewards.size();
  std::vector<double> adv(n, 0.0);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next_value = i + 1 < n ? values[i + 1] : 0.0;
    const double delta = rewards[i] + gamma * next_value - values[i];
    running = delta + gamma * lambda * running;
    adv[i] = running;
  }
  return adv;
}

void compute_advantages(TokenBatch& batch, const PpoConfig& cfg) {
  for (auto& e : batch.episodes) {
    e.advantages = gae(e.rewards, e.old_values, cfg.gamma, cfg.lambda);
    e.returns.resize(e.size());
    for (std::size_t i = 0; i < e.size(); ++i) e.returns[i] = e.advantages[i] + e.old_values[i];
  }
  if (!cfg.normalize_advantages) return;
  std::vector<double> all;
  for (const auto& e : batch.episodes) all.insert(all.end(), e.advantages.begin(), e.advantages.end());
  const double m = mean(all);
  const double s = stddev(all);
  for (auto& e : batch.episodes)
    for (double& a : e.advantages) a = (a - m) / (s + 1e-8);
}

double policy_loss(std::span<const double> new_logprobs, std::span<const double> old_logprobs,
                   std::span<const double> advantages, double eps) {
  if (new_logprobs.size() != old_logprobs.size() || new_logprobs.size() != advantages.size())
    throw LengthMismatch("policy_loss: length mismatch");
  if (new_logprobs.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < new_logprobs.size(); ++i) {
    const double rho = std::exp(new_logprobs[i] - old_logprobs[i]);
    const double clipped = std::clamp(rho, 1.0 - eps, 1.0 + eps);
    total += std::min(rho * advantages[i], clipped * advantages[i]);
  }
  return total / static_cast<double>(new_logprobs.size());
}

double value_loss(std::span<const double> pred_values, std::span<const double> target_returns) {
  if (pred_values.size() != target_returns.size()) throw LengthMismatch("value_loss: length mismatch");
  if (pred_values.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred_values.size(); ++i) {
    const double d = pred_values[i] - target_returns[i];
    total += d * d;
  }
  return total / static_cast<double>(pred_values.size());
}

double clipped_value_loss(std::span<const double> pred_values, std::span<const double> old_values,
                          std::span<const double> target_returns, double clip) {
  if (pred_values.size() != target_returns.size() || pred_values.size() != old_values.size())
    throw LengthMismatch("clipped_value_loss: length mismatch");
  if (pred_values.empty()) return 0.0;
  double total = 0.0;
  for (std::size_t i = 0; i < pred_values.size(); ++i) {
    const double v = pred_values[i];
    const double vc = old_values[i] + std::clamp(v - old_values[i], -clip, clip);
    total += std::max((v - target_returns[i]) * (v - target_returns[i]),
                      (vc - target_returns[i]) * (vc - target_returns[i]));
  }
  return total / static_cast<double>(pred_values.size());
}

ObjectiveParts ppo_objective(ParamStore& model, const TokenBatch& batch, std::span<const std::size_t> episodes,
                             const PpoConfig& cfg, double grad_scale) {
  ObjectiveParts parts;
  for (auto idx : episodes) parts.tokens += batch.episodes.at(idx).size();
  if (parts.tokens == 0) return parts;
  const double inv_n = 1.0 / static_cast<double>(parts.tokens);
  const std::size_t V = model.dims().vocab;
  std::vector<double> lsm(V);
  double policy_sum = 0.0, value_sum = 0.0;

  for (auto idx : episodes) {
    const Episode& e = batch.episodes[idx];
    if (e.advantages.size() != e.size() || e.returns.size() != e.size())
      throw std::logic_error("ppo_objective: advantages missing");
    std::vector<TokenId> ctx = e.context;
    ctx.insert(ctx.end(), e.action.begin(), e.action.end() - 1);
    const auto trace = forward(model, ctx);
    Cotangents cot;
    if (grad_scale != 0.0) cot = Cotangents::zeros_like(trace);
    const std::size_t base = e.context.size() - 1;
    for (std::size_t i = 0; i < e.size(); ++i) {
      const std::size_t row_idx = base + i;
      const auto row = trace.logits_row(row_idx);
      masked_log_softmax(row, model.dims().pad_id, lsm);
      const auto tok = static_cast<std::size_t>(e.action[i]);
      const double rho = std::exp(lsm[tok] - e.old_logprobs[i]);
      const double adv = e.advantages[i];
      const double clipped_rho = std::clamp(rho, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
      const double unclipped_obj = rho * adv;
      const double clipped_obj = clipped_rho * adv;
      policy_sum += std::min(unclipped_obj, clipped_obj);
      parts.ratio_sum += rho;
      if (std::abs(rho - 1.0) > cfg.clip_eps) ++parts.clipped;

      const double v = trace.values[row_idx];
      const double target = e.returns[i];
      double vloss = (v - target) * (v - target);
      double dvloss = 2.0 * (v - target);
      if (cfg.clip_value) {
        const double diff = v - e.old_values[i];
        const double vc = e.old_values[i] + std::clamp(diff, -cfg.value_clip, cfg.value_clip);
        const double cl = (vc - target) * (vc - target);
        if (cl > vloss) {
          vloss = cl;
          dvloss = std::abs(diff) < cfg.value_clip ? 2.0 * (vc - target) : 0.0;
        }
      }
      value_sum += vloss;

      if (grad_scale != 0.0) {
        // d min(.)/d logprob: the unclipped branch is active iff it is the minimum.
        const double dlogp = unclipped_obj <= clipped_obj ? unclipped_obj : 0.0;
        const double g = grad_scale * inv_n * dlogp;
        if (g != 0.0) {
          double* dl = cot.d_logits.data() + row_idx * V;
          for (std::size_t w = 0; w < V; ++w) dl[w] -= g * std::exp(lsm[w]);
          dl[tok] += g;
        }
        cot.d_values[row_idx] = -grad_scale * inv_n * cfg.value_coef * dvloss;
      }
    }
    if (grad_scale != 0.0) backward(model, trace, cot);
  }
  parts.policy = policy_sum * inv_n;
  parts.value = value_sum * inv_n;
  parts.objective = parts.policy - cfg.value_coef * parts.value;
  return parts;
}

UpdateStats update(ParamStore& model, Optimizer& optimizer, const TokenBatch& batch, const PpoConfig& cfg,
                   Rng& rng) {
  cfg.validate();
  UpdateStats stats;
  const std::size_t n = batch.episodes.size();
  if (n == 0) return stats;
  model.zero_grad();
  std::vector<std::size_t> order(n);
  double ratio_sum = 0.0, policy_sum = 0.0, value_sum = 0.0, norm_sum = 0.0;
  std::size_t clipped = 0, tokens = 0, minibatches = 0;
  bool first = true;
  for (std::size_t epoch = 0; epoch < cfg.ppo_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[uniform_index(rng, i)]);
    std::size_t pending = 0;
    for (std::size_t start = 0, mb = 0; start < n; start += cfg.minibatch_size, ++mb) {
      const std::size_t end = std::min(n, start + cfg.minibatch_size);
      std::span<const std::size_t> idx(order.data() + start, end - start);
      const auto parts = ppo_objective(model, batch, idx, cfg, 1.0 / static_cast<double>(cfg.grad_accum_steps));
      if (!std::isfinite(parts.objective))
        throw NonFiniteGradient("non-finite objective at epoch " + std::to_string(epoch) + ", minibatch " +
                                std::to_string(mb));
      if (first && parts.tokens > 0) {
        stats.first_minibatch_ratio = parts.ratio_sum / static_cast<double>(parts.tokens);
        first = false;
      }
      ratio_sum += parts.ratio_sum;
      clipped += parts.clipped;
      tokens += parts.tokens;
      policy_sum += parts.policy;
      value_sum += parts.value;
      ++minibatches;
      if (++pending == cfg.grad_accum_steps || end == n) {
        const double gn = grad_norm(model);
        try {
          optimizer.step(model, cfg.lr);
        } catch (const NonFiniteGradient&) {
          model.zero_grad();
          throw NonFiniteGradient("non-finite gradient at epoch " + std::to_string(epoch) + ", minibatch " +
                                  std::to_string(mb));
        }
        norm_sum += gn;
        ++stats.optimizer_steps;
        pending = 0;
      }
    }
  }
  stats.tokens = tokens;
  if (tokens > 0) {
    stats.mean_ratio = ratio_sum / static_cast<double>(tokens);
    stats.clip_fraction = static_cast<double>(clipped) / static_cast<double>(tokens);
  }
  stats.policy_loss = policy_sum / static_cast<double>(minibatches);
  stats.value_loss = value_sum / static_cast<double>(minibatches);
  if (stats.optimizer_steps > 0) stats.grad_norm = norm_sum / static_cast<double>(stats.optimizer_steps);
  return stats;
}

}  // namespace cory
