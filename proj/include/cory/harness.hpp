#pragma once

// Run configuration, metrics logging, the training driver for both methods,
// sweeps, pass@k evaluation and plot-data aggregation.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cory/cory.hpp"

namespace cory {

enum class Method { ppo, cory };
std::string to_string(Method method);
Method parse_method(std::string_view name);

struct RunConfig {
  Method method = Method::ppo;

  std::string task = "arithmetic";  // arithmetic | sentiment
  int difficulty = 1;
  std::size_t max_action_len = 8;
  std::string vocab_file;    // optional overrides of the built-in task data
  std::string corpus_file;
  std::string lexicon_file;

  CoryOptions cory;
  std::size_t role_exchange_period = 5;

  PpoConfig ppo;
  std::size_t batch_size = 256;
  std::size_t iterations = 100;
  std::uint64_t seed = 0;

  ModelDims model;
  double init_scale = 0.08;

  std::size_t eval_queries = 64;  // evaluation set size when not enumerable
  std::size_t report_window = 10;
  std::string output_dir = "runs/default";

  void validate() const;  // throws ConfigError
};

// "key = value" lines, '#' comments. Keys follow the hyperparameter table
// names (learning_rate, mini_batch_size, init_kl_coef, cliprange, ...).
void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value);
// Applies "key=value".
void apply_override(RunConfig& cfg, const std::string& assignment);
RunConfig parse_config(const std::string& text);
RunConfig load_config(const std::filesystem::path& path);
std::string to_text(const RunConfig& cfg);
std::vector<std::string> config_keys();

// Difficulty-1 arithmetic with two-token answers, batch 64, 100 iterations,
// Adam at 1e-2 on minibatches of 16 with normalised advantages, eta 0.01.
// configs/toy_arithmetic.cfg holds the same settings.
RunConfig toy_preset();

TaskSpec make_task(const RunConfig& cfg);
// The pretrained stand-in: a fresh model seeded from cfg.seed, sized for the task vocabulary.
ParamStore make_initial_model(const RunConfig& cfg, const TaskSpec& task);

struct MetricsRow {
  std::size_t iteration = 0;
  std::string agent;  // "ppo", "llm1" or "llm2"
  std::string role;   // "single", "pioneer" or "observer"
  double task_reward = 0.0;
  double sentence_kl = 0.0;
  double combined = 0.0;
  double mean_length = 0.0;
  double clip_fraction = 0.0;
  double grad_norm = 0.0;
  double policy_loss = 0.0;
  double value_loss = 0.0;
  double mean_ratio = 0.0;
  int exchanged = 0;
  std::size_t truncations = 0;
};

inline constexpr const char* kMetricsSchema = "# cory-metrics v1";
std::string metrics_header();
std::string format_row(const MetricsRow& row);
void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows);
std::vector<MetricsRow> read_metrics(const std::filesystem::path& path);

struct AgentSummary {
  std::string agent;
  double task_reward = 0.0;
  double sentence_kl = 0.0;
  double combined = 0.0;
  double pass_at_1 = 0.0;  // greedy task reward on the evaluation set
  std::string checkpoint;
};

struct RunReport {
  Method method = Method::ppo;
  std::uint64_t seed = 0;
  double eta = 0.0;
  double learning_rate = 0.0;
  std::size_t iterations_completed = 0;
  bool diverged = false;
  std::string divergence;
  std::vector<AgentSummary> agents;  // ppo: one entry, cory: llm1 and llm2
  // Window means over the agents: the method's point on the reward/KL plane.
  double final_task_reward = 0.0;
  double final_sentence_kl = 0.0;
  double final_combined = 0.0;
  std::vector<MetricsRow> rows;
};

// Final window means per agent, recomputed from metrics rows.
std::vector<AgentSummary> summarize_rows(const std::vector<MetricsRow>& rows, std::size_t window);

// Executes a full run, writes metrics.tsv, timing.tsv, checkpoints and
// report.json under cfg.output_dir (when `write` is set). NonFiniteGradient
// ends the run early and is recorded in the report.
RunReport run(const RunConfig& cfg, bool write = true);
void write_report(const std::filesystem::path& path, const RunReport& report);

struct FrontierRow {
  Method method = Method::ppo;
  double eta = 0.0;
  std::uint64_t seed = 0;
  double task_reward = 0.0;
  double neg_kl = 0.0;
  bool diverged = false;
};

struct FrontierPoint {
  Method method = Method::ppo;
  double eta = 0.0;
  double task_reward = 0.0;  // seed mean
  double neg_kl = 0.0;       // seed mean
  std::size_t runs = 0;
};

struct FrontierTable {
  std::vector<FrontierRow> rows;
  std::vector<FrontierPoint> points() const;
  // Mean final KL non-increasing in eta, per method.
  bool kl_monotone(Method method, double tolerance = 0.0) const;
  // Number of etas at which cory's point is no worse than ppo's in both coordinates.
  std::size_t cory_dominance_count() const;
};

inline const std::vector<double> kDefaultEtas = {1e-5, 1e-4, 1e-3, 1e-2};
inline const std::vector<std::uint64_t> kDefaultSeeds = {0, 1, 2};

FrontierTable frontier_sweep(const RunConfig& base, const std::vector<double>& etas,
                             const std::vector<std::uint64_t>& seeds, const std::vector<Method>& methods,
                             bool write = true);
void write_frontier(const std::filesystem::path& path, const FrontierTable& table);

struct RobustnessRow {
  Method method = Method::ppo;
  double learning_rate = 0.0;
  std::uint64_t seed = 0;
  bool diverged = false;
  std::string divergence;
  double task_reward = 0.0;
  double sentence_kl = 0.0;
};

// Runs every method at each learning-rate multiple of base.ppo.lr.
std::vector<RobustnessRow> lr_sweep(const RunConfig& base, const std::vector<double>& factors,
                                    const std::vector<std::uint64_t>& seeds, const std::vector<Method>& methods,
                                    bool write = true);
void write_robustness(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows);

// Produces the j-th of k generations for an instance.
using Generator = std::function<TokenSeq(const ObjectiveInstance&, std::size_t j, Rng&)>;

// Fraction of instances for which at least one of k generations matches the truth.
double pass_at_k(const Generator& gen, const std::vector<ObjectiveInstance>& instances, std::size_t k,
                 const Vocab& vocab, Rng& rng);
// Model policy: greedy decoding when k == 1, temperature-1 sampling otherwise.
double pass_at_k(const ParamStore& model, const std::vector<ObjectiveInstance>& instances, std::size_t k,
                 std::size_t max_new, const Vocab& vocab, Rng& rng);

// Mean greedy task reward over queries (pass@1 for objective tasks).
double greedy_eval(const ParamStore& model, const TaskSpec& task, const std::vector<Query>& queries);

struct PlotRow {
  std::string agent;
  std::size_t iteration = 0;
  std::size_t n = 0;
  std::map<std::string, std::pair<double, double>> series;  // name -> (mean, std)
};

inline const std::vector<std::string> kPlotSeries = {"task_reward", "sentence_kl", "combined"};

// Per (agent, iteration) mean and sample standard deviation across files
// (std is 0 for a single file). Throws SchemaMismatch when headers differ.
std::vector<PlotRow> emit_plot_data(const std::vector<std::filesystem::path>& files);
void write_plot_data(const std::filesystem::path& path, const std::vector<PlotRow>& rows);

// Resolves a relative output path under the CORY_OUTPUT_ROOT environment variable when set.
std::filesystem::path output_path(const std::string& dir);

}  // namespace cory
