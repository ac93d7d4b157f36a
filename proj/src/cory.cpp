#include "cory/cory.hpp"

#include <algorithm>

#include "cory/errors.hpp"
#include "cory/numeric.hpp"
#include "cory/rewards.hpp"

namespace cory {

std::string to_string(Role role) { return role == Role::pioneer ? "pioneer" : "observer"; }

std::string to_string(RewardMode mode) { return mode == RewardMode::collective ? "collective" : "individual"; }

RewardMode parse_reward_mode(std::string_view name) {
  if (name == "collective") return RewardMode::collective;
  if (name == "individual") return RewardMode::individual;
  throw ConfigError("unknown reward mode '" + std::string(name) + "' (expected collective|individual)");
}

AgentPair::AgentPair(const ParamStore& pretrained, OptimizerKind optimizer, std::size_t exchange_period)
    : first_{pretrained, Optimizer(optimizer, pretrained.size())},
      second_{pretrained, Optimizer(optimizer, pretrained.size())},
      ref_(pretrained),
      period_(exchange_period) {
  if (period_ == 0) throw ConfigError("role exchange period must be >= 1");
  first_.params.zero_grad();
  second_.params.zero_grad();
  ref_.zero_grad();
}

void AgentPair::role_exchange() {
  swap_ = !swap_;
  ++exchanges_;
}

ObserverPrompt observer_prompt(const TokenSeq& query, const TokenSeq& pioneer_action, TokenId sep,
                               std::size_t capacity) {
  if (query.real_len() + 2 > capacity) throw CapacityExceeded("observer prompt cannot hold the query");
  const auto content = pioneer_action.content();
  const std::size_t room = capacity - query.real_len() - 2;
  const std::size_t keep = std::min(room, content.size());
  std::vector<TokenId> ids(query.real().begin(), query.real().end());
  ids.push_back(sep);
  ids.insert(ids.end(), content.begin(), content.begin() + static_cast<std::ptrdiff_t>(keep));
  ids.push_back(sep);
  return {TokenSeq(ids, capacity, query.pad_id(), query.eos_id()), content.size() - keep};
}

std::vector<TokenId> parse_reference(const TokenSeq& prompt, TokenId sep) {
  const auto ids = prompt.real();
  const auto first = std::find(ids.begin(), ids.end(), sep);
  if (first == ids.end()) return {};
  const auto second = std::find(first + 1, ids.end(), sep);
  return {first + 1, second};
}

DuoRollout duo_step(const AgentPair& pair, const Query& query, const TaskRewardFn& task, const CoryOptions& opts,
                    TokenId sep, std::size_t max_new, std::size_t observer_capacity, Rng& pioneer_rng,
                    Rng& observer_rng) {
  auto pioneer = sample_action(pair.pioneer().params, pair.ref(), query.prompt, max_new, pioneer_rng);
  TokenSeq context = query.prompt;
  std::size_t truncated = 0;
  if (opts.knowledge_transfer) {
    auto op = observer_prompt(query.prompt, pioneer.action, sep, observer_capacity);
    context = std::move(op.prompt);
    truncated = op.truncated;
  }
  auto observer = sample_action(pair.observer().params, pair.ref(), context, max_new, observer_rng);
  DuoRollout d{query, std::move(context), std::move(pioneer), std::move(observer)};
  d.truncated = truncated;
  d.r_pio = task(query, d.pioneer_action.action);
  d.r_obs = task(query, d.observer_action.action);
  d.r_cory = collective_reward(d.r_pio, d.r_obs);
  return d;
}

Episode make_episode(std::span<const TokenId> context, const SampledAction& sample, double terminal_reward,
                     double eta) {
  Episode e;
  e.context.assign(context.begin(), context.end());
  e.action.assign(sample.action.real().begin(), sample.action.real().end());
  e.rewards = shape_rewards(terminal_reward, sample.token_kls, eta);
  e.old_logprobs = sample.token_logprobs;
  e.old_values = sample.values;
  return e;
}

UpdateStats train_agent(Agent& agent, TokenBatch& batch, const PpoConfig& cfg, Rng& rng) {
  compute_advantages(batch, cfg);
  const Agent snapshot = agent;
  try {
    return update(agent.params, agent.optimizer, batch, cfg, rng);
  } catch (const NonFiniteGradient&) {
    agent = snapshot;
    throw;
  }
}

namespace {

AgentStats summarize(int slot, Role role, std::span<const SampledAction> samples, std::span<const double> rewards,
                     double eta) {
  AgentStats s;
  s.slot = slot;
  s.role = role;
  const double n = static_cast<double>(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double kl = samples[i].sentence_kl();
    s.task_reward += rewards[i];
    s.sentence_kl += kl;
    s.combined += combined_metric(rewards[i], samples[i].token_kls, eta);
    s.mean_length += static_cast<double>(samples[i].action.real_len());
  }
  s.task_reward /= n;
  s.sentence_kl /= n;
  s.combined /= n;
  s.mean_length /= n;
  return s;
}

TaskRewardFn reward_fn(const TaskSpec& task) {
  return [&task](const Query& q, const TokenSeq& a) { return task.reward(q, a); };
}

}  // namespace

std::size_t observer_capacity(const TaskSpec& task) { return task.max_prompt_len + task.max_action_len + 2; }

std::vector<Query> sample_query_batch(const TaskSpec& task, std::size_t batch_size, const StreamKey& key) {
  Rng rng = make_rng(key.seed, {key.iteration, kStreamQueries});
  std::vector<Query> out;
  out.reserve(batch_size);
  for (std::size_t i = 0; i < batch_size; ++i) out.push_back(task.sample_query(rng));
  return out;
}

AgentStats ppo_iteration(Agent& agent, const ParamStore& ref, std::span<const Query> queries, const TaskSpec& task,
                         const PpoConfig& cfg, const StreamKey& key, std::vector<SampledAction>* samples_out) {
  if (queries.empty()) throw std::invalid_argument("empty query batch");
  std::vector<SampledAction> samples;
  std::vector<double> rewards;
  TokenBatch batch;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    Rng rng = make_rng(key.seed, {key.iteration, i, kStreamPioneer});
    samples.push_back(sample_action(agent.params, ref, queries[i].prompt, task.max_action_len, rng));
    rewards.push_back(task.reward(queries[i], samples.back().action));
    batch.episodes.push_back(make_episode(queries[i].prompt.real(), samples.back(), rewards.back(), cfg.eta));
  }
  AgentStats stats = summarize(0, Role::pioneer, samples, rewards, cfg.eta);
  Rng update_rng = make_rng(key.seed, {key.iteration, kStreamUpdate + kStreamPioneer});
  stats.update = train_agent(agent, batch, cfg, update_rng);
  if (samples_out) *samples_out = std::move(samples);
  return stats;
}

IterationStats cory_iteration(AgentPair& pair, std::span<const Query> queries, const TaskSpec& task,
                              const PpoConfig& cfg, const CoryOptions& opts, const StreamKey& key) {
  if (queries.empty()) throw std::invalid_argument("empty query batch");
  IterationStats it;
  it.iteration = pair.iteration();
  const auto task_fn = reward_fn(task);
  TokenBatch pio_buffer, obs_buffer;
  std::vector<SampledAction> pio_samples, obs_samples;
  std::vector<double> pio_rewards, obs_rewards;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    Rng pio_rng = make_rng(key.seed, {key.iteration, i, kStreamPioneer});
    Rng obs_rng = make_rng(key.seed, {key.iteration, i, kStreamObserver});
    DuoRollout d =
        duo_step(pair, queries[i], task_fn, opts, task.vocab.sep_id(), task.max_action_len, observer_capacity(task), pio_rng, obs_rng);
    const bool collective = opts.reward_mode == RewardMode::collective;
    const double pio_terminal = collective ? d.r_cory : d.r_pio;
    const double obs_terminal = collective ? d.r_cory : d.r_obs;
    pio_buffer.episodes.push_back(make_episode(d.query.prompt.real(), d.pioneer_action, pio_terminal, cfg.eta));
    obs_buffer.episodes.push_back(make_episode(d.observer_context.real(), d.observer_action, obs_terminal, cfg.eta));
    it.pioneer_shaped.push_back(pio_buffer.episodes.back().rewards);
    it.observer_shaped.push_back(obs_buffer.episodes.back().rewards);
    pio_samples.push_back(d.pioneer_action);
    obs_samples.push_back(d.observer_action);
    pio_rewards.push_back(d.r_pio);
    obs_rewards.push_back(d.r_obs);
    it.truncations += d.truncated;
    it.rollouts.push_back(std::move(d));
  }

  const int pio_slot = pair.slot_of(Role::pioneer);
  AgentStats pio_stats = summarize(pio_slot, Role::pioneer, pio_samples, pio_rewards, cfg.eta);
  AgentStats obs_stats = summarize(1 - pio_slot, Role::observer, obs_samples, obs_rewards, cfg.eta);

  const Agent pio_before = pair.pioneer();
  const Agent obs_before = pair.observer();
  try {
    Rng pio_rng = make_rng(key.seed, {key.iteration, kStreamUpdate + kStreamPioneer});
    pio_stats.update = train_agent(pair.pioneer(), pio_buffer, cfg, pio_rng);
    Rng obs_rng = make_rng(key.seed, {key.iteration, kStreamUpdate + kStreamObserver});
    obs_stats.update = train_agent(pair.observer(), obs_buffer, cfg, obs_rng);
  } catch (const NonFiniteGradient& e) {
    pair.pioneer() = pio_before;
    pair.observer() = obs_before;
    it.diverged = e.what();
  }

  it.agents = {pio_slot == 0 ? pio_stats : obs_stats, pio_slot == 0 ? obs_stats : pio_stats};
  if (!it.diverged) {
    if (opts.role_exchange && pair.exchange_due()) {
      pair.role_exchange();
      it.exchanged = true;
    }
    pair.advance();
  }
  return it;
}

}  // namespace cory
