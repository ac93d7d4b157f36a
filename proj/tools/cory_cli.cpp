// Command-line front end: training, sweeps, pass@k evaluation, plot data and
// config inspection. Relative output directories live under $CORY_OUTPUT_ROOT.

#include <cstdio>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "cory/errors.hpp"
#include "cory/harness.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

struct ConfigArgs {
  std::string file;
  std::vector<std::string> overrides;
};

void add_config_options(CLI::App* cmd, ConfigArgs& args) {
  cmd->add_option("-c,--config", args.file, "key = value config file");
  cmd->add_option("-s,--set", args.overrides, "override, key=value (repeatable)");
}

cory::RunConfig resolve(const ConfigArgs& args) {
  cory::RunConfig cfg = args.file.empty() ? cory::RunConfig{} : cory::load_config(args.file);
  for (const auto& o : args.overrides) cory::apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

std::vector<cory::Method> parse_methods(const std::vector<std::string>& names) {
  std::vector<cory::Method> out;
  for (const auto& n : names) out.push_back(cory::parse_method(n));
  return out;
}

void print_report(const cory::RunReport& r) {
  std::printf("method %s seed %llu iterations %zu%s\n", cory::to_string(r.method).c_str(),
              static_cast<unsigned long long>(r.seed), r.iterations_completed, r.diverged ? " DIVERGED" : "");
  for (const auto& a : r.agents)
    std::printf("  %-5s task_reward %.4f  sentence_kl %.4f  combined %.4f  greedy %.4f\n", a.agent.c_str(),
                a.task_reward, a.sentence_kl, a.combined, a.pass_at_1);
  if (r.diverged) std::printf("  %s\n", r.divergence.c_str());
}

int run_cli(int argc, char** argv) {
  CLI::App app{"Cooperative two-agent and single-agent PPO fine-tuning of toy token policies"};
  app.require_subcommand(1);

  ConfigArgs train_args;
  auto* train = app.add_subcommand("train", "run one training job");
  add_config_options(train, train_args);

  ConfigArgs eta_args;
  std::vector<double> etas = cory::kDefaultEtas;
  std::vector<std::uint64_t> eta_seeds = cory::kDefaultSeeds;
  std::vector<std::string> eta_methods = {"ppo", "cory"};
  auto* sweep_eta = app.add_subcommand("sweep-eta", "KL-coefficient frontier sweep");
  add_config_options(sweep_eta, eta_args);
  sweep_eta->add_option("--etas", etas, "KL coefficients")->delimiter(',');
  sweep_eta->add_option("--seeds", eta_seeds, "seeds")->delimiter(',');
  sweep_eta->add_option("--methods", eta_methods, "ppo and/or cory")->delimiter(',');

  ConfigArgs lr_args;
  std::vector<double> factors = {1.0, 10.0};
  std::vector<std::uint64_t> lr_seeds = cory::kDefaultSeeds;
  std::vector<std::string> lr_methods = {"ppo", "cory"};
  auto* sweep_lr = app.add_subcommand("sweep-lr", "learning-rate robustness grid");
  add_config_options(sweep_lr, lr_args);
  sweep_lr->add_option("--factors", factors, "multiples of learning_rate")->delimiter(',');
  sweep_lr->add_option("--seeds", lr_seeds, "seeds")->delimiter(',');
  sweep_lr->add_option("--methods", lr_methods, "ppo and/or cory")->delimiter(',');

  ConfigArgs eval_args;
  std::string checkpoint;
  std::size_t k = 1;
  std::size_t instances = 64;
  std::uint64_t eval_seed = 0;
  auto* eval = app.add_subcommand("eval-passk", "pass@k of a checkpoint on the configured objective task");
  add_config_options(eval, eval_args);
  eval->add_option("checkpoint", checkpoint, "checkpoint file")->required();
  eval->add_option("-k", k, "generations per instance")->check(CLI::PositiveNumber);
  eval->add_option("-n,--instances", instances, "instances (ignored for enumerable tasks)");
  eval->add_option("--seed", eval_seed, "sampling seed");

  std::vector<std::string> metric_files;
  std::string plot_out = "plot_data.tsv";
  auto* plot = app.add_subcommand("plot-data", "aggregate metrics files into mean/std tables");
  plot->add_option("files", metric_files, "metrics.tsv files")->required();
  plot->add_option("-o,--out", plot_out, "output table");

  ConfigArgs print_args;
  auto* print = app.add_subcommand("config-print", "print the resolved configuration");
  add_config_options(print, print_args);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  if (*train) {
    const auto report = cory::run(resolve(train_args));
    print_report(report);
    return report.diverged ? kExitDiverged : 0;
  }
  if (*sweep_eta) {
    const auto table = cory::frontier_sweep(resolve(eta_args), etas, eta_seeds, parse_methods(eta_methods));
    std::printf("method  eta       task_reward  -KL\n");
    for (const auto& p : table.points())
      std::printf("%-6s  %-8g  %.4f       %.4f\n", cory::to_string(p.method).c_str(), p.eta, p.task_reward,
                  p.neg_kl);
    for (const auto& m : parse_methods(eta_methods))
      std::printf("%s KL non-increasing in eta: %s\n", cory::to_string(m).c_str(),
                  table.kl_monotone(m) ? "yes" : "no");
    std::printf("cory dominates ppo at %zu eta value(s)\n", table.cory_dominance_count());
    bool any = false;
    for (const auto& r : table.rows) any = any || r.diverged;
    return any ? kExitDiverged : 0;
  }
  if (*sweep_lr) {
    const auto rows = cory::lr_sweep(resolve(lr_args), factors, lr_seeds, parse_methods(lr_methods));
    bool any = false;
    for (const auto& r : rows) {
      std::printf("%-5s lr %-10g seed %llu  %s  task_reward %.4f  sentence_kl %.4f\n",
                  cory::to_string(r.method).c_str(), r.learning_rate, static_cast<unsigned long long>(r.seed),
                  r.diverged ? "DIVERGED" : "ok", r.task_reward, r.sentence_kl);
      any = any || r.diverged;
    }
    return any ? kExitDiverged : 0;
  }
  if (*eval) {
    const auto cfg = resolve(eval_args);
    const auto task = cory::make_task(cfg);
    if (task.kind != cory::RewardKind::objective) throw cory::ConfigError("pass@k needs an objective task");
    const auto model = cory::load_checkpoint(checkpoint);
    if (model.dims().vocab != task.vocab.size())
      throw cory::ConfigError("checkpoint vocabulary does not match the task");
    const auto set = task.eval_queries(instances, eval_seed);
    cory::Rng rng = cory::make_rng(eval_seed, {k});
    const double rate = cory::pass_at_k(model, set, k, task.max_action_len, task.vocab, rng);
    std::printf("pass@%zu %.4f over %zu instances\n", k, rate, set.size());
    return 0;
  }
  if (*plot) {
    std::vector<std::filesystem::path> paths(metric_files.begin(), metric_files.end());
    const auto rows = cory::emit_plot_data(paths);
    const auto out = cory::output_path(plot_out);
    cory::write_plot_data(out, rows);
    std::printf("wrote %zu rows to %s\n", rows.size(), out.string().c_str());
    return 0;
  }
  if (*print) {
    std::cout << cory::to_text(resolve(print_args));
    return 0;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run_cli(argc, argv);
  } catch (const cory::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const cory::NonFiniteGradient& e) {
    std::fprintf(stderr, "diverged: %s\n", e.what());
    return kExitDiverged;
  } catch (const cory::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const cory::ParseError& e) {
    std::fprintf(stderr, "parse error: %s\n", e.what());
    return kExitIo;
  } catch (const cory::EmptyCorpus& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const cory::SchemaMismatch& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitIo;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
}
