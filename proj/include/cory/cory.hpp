#pragma once

// Two-agent cooperative fine-tuning: a pioneer answers the raw query, an
// observer answers given the query plus the pioneer's answer, both are
// trained with PPO on the shared collective reward, and the two parameter
// sets periodically exchange roles. The single-agent PPO baseline runs
// through the same rollout and update path as the pioneer.

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "cory/model.hpp"
#include "cory/policy.hpp"
#include "cory/ppo.hpp"
#include "cory/tasks.hpp"

namespace cory {

enum class Role { pioneer, observer };
enum class RewardMode { collective, individual };

std::string to_string(Role role);
std::string to_string(RewardMode mode);
RewardMode parse_reward_mode(std::string_view name);

using TaskRewardFn = std::function<double(const Query&, const TokenSeq&)>;

struct CoryOptions {
  bool knowledge_transfer = true;
  bool role_exchange = true;
  RewardMode reward_mode = RewardMode::collective;
};

struct Agent {
  ParamStore params;
  Optimizer optimizer;
};

class AgentPair {
 public:
  // Duplicates the pretrained model into both agents; a frozen copy is kept
  // as the reference policy.
  AgentPair(const ParamStore& pretrained, OptimizerKind optimizer, std::size_t exchange_period = 5);

  // slot 0 is the agent initialised as pioneer (LLM1), slot 1 the observer (LLM2).
  Agent& agent(int slot) { return slot == 0 ? first_ : second_; }
  const Agent& agent(int slot) const { return slot == 0 ? first_ : second_; }
  int slot_of(Role role) const { return (role == Role::pioneer) == !swap_ ? 0 : 1; }
  Role role_of(int slot) const { return slot_of(Role::pioneer) == slot ? Role::pioneer : Role::observer; }
  Agent& pioneer() { return agent(slot_of(Role::pioneer)); }
  Agent& observer() { return agent(slot_of(Role::observer)); }
  const Agent& pioneer() const { return agent(slot_of(Role::pioneer)); }
  const Agent& observer() const { return agent(slot_of(Role::observer)); }
  const ParamStore& ref() const { return ref_; }

  bool swapped() const { return swap_; }
  std::size_t exchanges() const { return exchanges_; }
  std::size_t iteration() const { return k_; }
  std::size_t exchange_period() const { return period_; }
  bool exchange_due() const { return (k_ + 1) % period_ == 0; }

  // Re-binds the two parameter sets to the opposite roles. No parameter
  // values move.
  void role_exchange();
  void advance() { ++k_; }

 private:
  Agent first_;
  Agent second_;
  ParamStore ref_;
  bool swap_ = false;
  std::size_t exchanges_ = 0;
  std::size_t period_;
  std::size_t k_ = 0;
};

// query <sep> pioneer_action <sep>, with the pioneer's content tokens (eos
// dropped) truncated from the right to fit `capacity`.
struct ObserverPrompt {
  TokenSeq prompt;
  std::size_t truncated = 0;
};
ObserverPrompt observer_prompt(const TokenSeq& query, const TokenSeq& pioneer_action, TokenId sep,
                               std::size_t capacity);

// Recovers the reference segment between the two separators.
std::vector<TokenId> parse_reference(const TokenSeq& observer_prompt, TokenId sep);

// Seeds for one iteration's random streams. Every rollout and every update
// derives its own stream from (seed, iteration, index, role), so results do
// not depend on execution order.
struct StreamKey {
  std::uint64_t seed = 0;
  std::uint64_t iteration = 0;
};

enum : std::uint64_t { kStreamPioneer = 1, kStreamObserver = 2, kStreamUpdate = 16, kStreamQueries = 99 };

struct DuoRollout {
  Query query;
  TokenSeq observer_context;  // s~0 of the observer
  SampledAction pioneer_action;
  SampledAction observer_action;
  double r_pio = 0.0;
  double r_obs = 0.0;
  double r_cory = 0.0;
  std::size_t truncated = 0;
};

DuoRollout duo_step(const AgentPair& pair, const Query& query, const TaskRewardFn& task, const CoryOptions& opts,
                    TokenId sep, std::size_t max_new, std::size_t observer_capacity, Rng& pioneer_rng, Rng& observer_rng);

struct AgentStats {
  int slot = 0;
  Role role = Role::pioneer;
  double task_reward = 0.0;  // mean individual task reward
  double sentence_kl = 0.0;  // mean summed token KL
  double combined = 0.0;     // mean task - eta * KL
  double mean_length = 0.0;
  UpdateStats update;
};

struct IterationStats {
  std::size_t iteration = 0;
  std::vector<AgentStats> agents;  // ordered by slot
  bool exchanged = false;
  std::size_t truncations = 0;
  std::vector<DuoRollout> rollouts;
  std::vector<std::vector<double>> pioneer_shaped, observer_shaped;
  std::optional<std::string> diverged;  // NonFiniteGradient message
};

// Builds the token-level buffer of one agent from its sentence records.
Episode make_episode(std::span<const TokenId> context, const SampledAction& sample, double terminal_reward,
                     double eta);

// Trains one agent on its buffer with a snapshot/restore guard: on
// NonFiniteGradient the parameters and optimizer state return to their
// values before the update and the exception propagates.
UpdateStats train_agent(Agent& agent, TokenBatch& batch, const PpoConfig& cfg, Rng& rng);

// One iteration of the cooperative algorithm over `queries`.
IterationStats cory_iteration(AgentPair& pair, std::span<const Query> queries, const TaskSpec& task,
                              const PpoConfig& cfg, const CoryOptions& opts, const StreamKey& key);

// One iteration of single-agent PPO; uses exactly the pioneer's streams.
AgentStats ppo_iteration(Agent& agent, const ParamStore& ref, std::span<const Query> queries, const TaskSpec& task,
                         const PpoConfig& cfg, const StreamKey& key, std::vector<SampledAction>* samples = nullptr);

// Observer context length: query, two separators and a full pioneer answer.
std::size_t observer_capacity(const TaskSpec& task);

std::vector<Query> sample_query_batch(const TaskSpec& task, std::size_t batch_size, const StreamKey& key);

}  // namespace cory
