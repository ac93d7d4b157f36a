#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "cory/errors.hpp"
#include "cory/harness.hpp"

using namespace cory;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / ("cory_harness_" + name);
  fs::remove_all(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

RunConfig tiny_run(Method m, const fs::path& out) {
  RunConfig c;
  c.method = m;
  c.max_action_len = 3;
  c.batch_size = 4;
  c.iterations = 3;
  c.role_exchange_period = 2;
  c.model.embed = 4;
  c.model.hidden = 6;
  c.model.max_positions = 16;
  c.ppo.lr = 1e-2;
  c.ppo.optimizer = OptimizerKind::adam;
  c.ppo.ppo_epochs = 1;
  c.ppo.minibatch_size = 2;
  c.ppo.eta = 0.01;
  c.seed = 3;
  c.output_dir = out.string();
  return c;
}

MetricsRow row(std::size_t it, const std::string& agent, double r, double kl) {
  MetricsRow m;
  m.iteration = it;
  m.agent = agent;
  m.role = agent == "ppo" ? "single" : "pioneer";
  m.task_reward = r;
  m.sentence_kl = kl;
  m.combined = r - 0.1 * kl;
  return m;
}

}  // namespace

TEST_CASE("config parsing, overrides and errors") {
  const auto cfg = parse_config(
      "# comment\nmethod = cory\nlearning_rate = 0.001  # trailing\nmini_batch_size=8\n\n"
      "knowledge_transfer = false\nreward_mode = individual\ntrunk = attention\n");
  CHECK(cfg.method == Method::cory);
  CHECK(cfg.ppo.lr == 0.001);
  CHECK(cfg.ppo.minibatch_size == 8);
  CHECK_FALSE(cfg.cory.knowledge_transfer);
  CHECK(cfg.cory.reward_mode == RewardMode::individual);
  CHECK(cfg.model.trunk == TrunkKind::attention);

  RunConfig c;
  apply_override(c, "init_kl_coef = 0.25");
  CHECK(c.ppo.eta == 0.25);
  CHECK_THROWS_AS(apply_override(c, "bogus=1"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "learning_rate"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "learning_rate=fast"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "batch_size=-3"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "value_clipping=maybe"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "early_stopping=true"), ConfigError);
  CHECK_NOTHROW(apply_override(c, "early_stopping=false"));
  CHECK_THROWS_AS(parse_config("method = sarsa\n"), ConfigError);
  try {
    parse_config("seed = 1\nnot a setting\n");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("line 2") != std::string::npos);
  }
  RunConfig bad;
  bad.ppo.clip_eps = 2.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = RunConfig{};
  bad.task = "chess";
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/run.cfg"), IoError);
}

TEST_CASE("property: printed configs parse back to the same text") {
  RunConfig c;
  apply_override(c, "learning_rate=0.0123456789");
  apply_override(c, "method=cory");
  apply_override(c, "role_exchange=false");
  apply_override(c, "optimizer=adam");
  apply_override(c, "output_dir=some/where");
  const auto text = to_text(c);
  CHECK(to_text(parse_config(text)) == text);
  CHECK(parse_config(text).ppo.lr == 0.0123456789);
  CHECK(config_keys().size() >= 30);
  for (const auto& k : config_keys()) CHECK(text.find(k + " = ") != std::string::npos);
}

TEST_CASE("metrics round trip and schema checks") {
  const auto dir = scratch("metrics");
  std::vector<MetricsRow> rows = {row(0, "llm1", 0.5, 1.0 / 3.0), row(0, "llm2", 0.25, 2.0), row(1, "llm1", 1.0, 0.1)};
  rows[1].exchanged = 1;
  rows[2].truncations = 4;
  rows[2].grad_norm = 1e-17;
  write_metrics(dir / "m.tsv", rows);
  const auto back = read_metrics(dir / "m.tsv");
  REQUIRE(back.size() == rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) CHECK(format_row(back[i]) == format_row(rows[i]));
  CHECK(back[0].sentence_kl == 1.0 / 3.0);  // shortest round-trip formatting is exact

  std::ofstream(dir / "old.tsv") << "# cory-metrics v0\n" << metrics_header() << "\n";
  CHECK_THROWS_AS(read_metrics(dir / "old.tsv"), SchemaMismatch);
  std::ofstream(dir / "cols.tsv") << kMetricsSchema << "\niteration\tagent\n";
  CHECK_THROWS_AS(read_metrics(dir / "cols.tsv"), SchemaMismatch);
  std::ofstream(dir / "short.tsv") << kMetricsSchema << "\n" << metrics_header() << "\n0\tppo\tsingle\t1\n";
  CHECK_THROWS_AS(read_metrics(dir / "short.tsv"), ParseError);
  CHECK_THROWS_AS(read_metrics(dir / "missing.tsv"), IoError);
  fs::remove_all(dir);
}

TEST_CASE("summaries are window means per agent") {
  std::vector<MetricsRow> rows;
  for (std::size_t k = 0; k < 5; ++k) {
    rows.push_back(row(k, "llm1", static_cast<double>(k), 1.0));
    rows.push_back(row(k, "llm2", 10.0, static_cast<double>(k)));
  }
  const auto s = summarize_rows(rows, 2);
  REQUIRE(s.size() == 2);
  CHECK(s[0].agent == "llm1");
  CHECK(s[0].task_reward == doctest::Approx(3.5));
  CHECK(s[1].sentence_kl == doctest::Approx(3.5));
  CHECK(summarize_rows(rows, 100)[0].task_reward == doctest::Approx(2.0));
}

TEST_CASE("a run writes its artefacts and the report agrees with the metrics") {
  const auto dir = scratch("run");
  for (Method m : {Method::ppo, Method::cory}) {
    auto cfg = tiny_run(m, dir / to_string(m));
    const auto rep = run(cfg);
    CHECK_FALSE(rep.diverged);
    CHECK(rep.iterations_completed == 3);
    const auto out = dir / to_string(m);
    for (const char* f : {"metrics.tsv", "timing.tsv", "report.json", "config.txt"}) CHECK(fs::exists(out / f));
    const auto rows = read_metrics(out / "metrics.tsv");
    CHECK(rows.size() == (m == Method::ppo ? 3u : 6u));
    const auto again = summarize_rows(rows, cfg.report_window);
    const auto j = nlohmann::json::parse(slurp(out / "report.json"));
    REQUIRE(j["agents"].size() == again.size());
    for (std::size_t i = 0; i < again.size(); ++i) {
      CHECK(j["agents"][i]["agent"] == again[i].agent);
      CHECK(j["agents"][i]["task_reward"].get<double>() == doctest::Approx(again[i].task_reward).epsilon(1e-12));
      CHECK(j["agents"][i]["sentence_kl"].get<double>() == doctest::Approx(again[i].sentence_kl).epsilon(1e-12));
      // every checkpoint stands alone and reproduces the reported greedy score
      const auto model = load_checkpoint(out / j["agents"][i]["checkpoint"].get<std::string>());
      const auto task = make_task(cfg);
      const auto eval = task.eval_queries(cfg.eval_queries, 0);
      CHECK(greedy_eval(model, task, eval) == doctest::Approx(j["agents"][i]["pass_at_1"].get<double>()));
    }
    CHECK(parse_config(slurp(out / "config.txt")).method == m);
  }
  CHECK(fs::exists(dir / "cory" / "llm1.ckpt"));
  CHECK(fs::exists(dir / "cory" / "llm2.ckpt"));
  CHECK(fs::exists(dir / "ppo" / "policy.ckpt"));
  fs::remove_all(dir);
}

TEST_CASE("same seed gives byte-identical metrics") {
  const auto a = scratch("det_a"), b = scratch("det_b");
  run(tiny_run(Method::cory, a));
  run(tiny_run(Method::cory, b));
  CHECK(slurp(a / "metrics.tsv") == slurp(b / "metrics.tsv"));
  CHECK(slurp(a / "report.json") == slurp(b / "report.json"));
  auto other = tiny_run(Method::cory, a);
  other.seed = 4;
  run(other);
  CHECK(slurp(a / "metrics.tsv") != slurp(b / "metrics.tsv"));
  fs::remove_all(a);
  fs::remove_all(b);
}

TEST_CASE("zero iterations still evaluates the initial policy") {
  const auto dir = scratch("zero");
  auto cfg = tiny_run(Method::cory, dir);
  cfg.iterations = 0;
  const auto rep = run(cfg);
  CHECK(rep.iterations_completed == 0);
  CHECK(rep.rows.empty());
  REQUIRE(rep.agents.size() == 2);
  CHECK(rep.agents[0].pass_at_1 == rep.agents[1].pass_at_1);
  CHECK(read_metrics(dir / "metrics.tsv").empty());
  fs::remove_all(dir);
}

TEST_CASE("initial model sizing") {
  auto cfg = tiny_run(Method::ppo, "unused");
  const auto task = make_task(cfg);
  cfg.model.max_positions = observer_capacity(task) + task.max_action_len - 1;
  CHECK_THROWS_AS(make_initial_model(cfg, task), ConfigError);
  cfg.model.max_positions += 1;
  const auto m = make_initial_model(cfg, task);
  CHECK(m.dims().vocab == task.vocab.size());
  CHECK(m.dims().pad_id == 0);
}

TEST_CASE("pass@k oracles and closed form") {
  const auto task = make_arithmetic_task(2, 4);
  const auto set = task.eval_queries(1000, 5);
  const auto& v = task.vocab;
  Rng rng = make_rng(1, {});
  const Generator oracle = [&](const ObjectiveInstance& q, std::size_t, Rng&) {
    auto ids = q.truth;
    ids.push_back(v.eos_id());
    return TokenSeq(ids, 4, 0, 1);
  };
  const Generator digit_free = [&](const ObjectiveInstance&, std::size_t, Rng&) {
    return TokenSeq(tokenize("a b <eos>", v), 4, 0, 1);
  };
  CHECK(pass_at_k(oracle, set, 1, v, rng) == 1.0);
  CHECK(pass_at_k(digit_free, set, 5, v, rng) == 0.0);
  const double p = 0.3;
  const Generator coin = [&](const ObjectiveInstance& q, std::size_t j, Rng& r) {
    return uniform01(r) < p ? oracle(q, j, r) : digit_free(q, j, r);
  };
  for (std::size_t k : {1u, 2u, 4u}) {
    const double expect = 1.0 - std::pow(1.0 - p, static_cast<double>(k));
    const double sigma = std::sqrt(expect * (1 - expect) / static_cast<double>(set.size()));
    CHECK(std::abs(pass_at_k(coin, set, k, v, rng) - expect) <= 3.0 * sigma);
  }
  CHECK_THROWS(pass_at_k(oracle, set, 0, v, rng));
}

TEST_CASE("plot data aggregates across files") {
  const auto dir = scratch("plot");
  // three seeds, ten iterations, reward = seed + iteration
  std::vector<fs::path> files;
  for (int s = 0; s < 3; ++s) {
    std::vector<MetricsRow> rows;
    for (std::size_t k = 0; k < 10; ++k) rows.push_back(row(k, "ppo", s + static_cast<double>(k), 2.0));
    files.push_back(dir / ("s" + std::to_string(s) + ".tsv"));
    write_metrics(files.back(), rows);
  }
  const auto agg = emit_plot_data(files);
  REQUIRE(agg.size() == 10);
  for (const auto& r : agg) {
    CHECK(r.n == 3);
    CHECK(r.series.at("task_reward").first == doctest::Approx(1.0 + static_cast<double>(r.iteration)));
    CHECK(r.series.at("task_reward").second == doctest::Approx(1.0));
    CHECK(r.series.at("sentence_kl").second == 0.0);
  }
  const auto single = emit_plot_data({files[0]});
  for (const auto& r : single)
    for (const auto& [_, ms] : r.series) CHECK(ms.second == 0.0);

  write_metrics(dir / "cory.tsv", {row(0, "llm1", 1.0, 1.0), row(0, "llm2", 1.0, 1.0)});
  CHECK_THROWS_AS(emit_plot_data({files[0], dir / "cory.tsv"}), SchemaMismatch);
  write_plot_data(dir / "plot.tsv", agg);
  CHECK(slurp(dir / "plot.tsv").rfind("agent\titeration\tn\ttask_reward_mean", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("frontier helpers") {
  FrontierTable t;
  t.rows = {{Method::ppo, 0.1, 0, 0.5, -2.0, false},  {Method::ppo, 0.1, 1, 0.7, -4.0, false},
            {Method::cory, 0.1, 0, 0.6, -1.0, false}, {Method::ppo, 1.0, 0, 0.2, -1.0, false},
            {Method::cory, 1.0, 0, 0.1, -0.5, false}, {Method::cory, 1.0, 1, 9.9, -9.9, true}};
  const auto pts = t.points();
  REQUIRE(pts.size() == 4);
  CHECK(pts[0].method == Method::ppo);
  CHECK(pts[0].task_reward == doctest::Approx(0.6));
  CHECK(pts[0].neg_kl == doctest::Approx(-3.0));
  CHECK(pts[3].runs == 1);  // diverged runs are excluded
  CHECK(t.kl_monotone(Method::ppo));
  CHECK(t.kl_monotone(Method::cory));
  CHECK(t.cory_dominance_count() == 1);
  FrontierTable one;
  one.rows = {{Method::ppo, 0.1, 0, 0.5, -2.0, false}};
  CHECK(one.kl_monotone(Method::ppo));
  CHECK(one.cory_dominance_count() == 0);
}

TEST_CASE("relative output paths resolve under the output root") {
  ::setenv("CORY_OUTPUT_ROOT", "/tmp/cory_root", 1);
  CHECK(output_path("runs/a") == fs::path("/tmp/cory_root/runs/a"));
  CHECK(output_path("/abs/b") == fs::path("/abs/b"));
  ::unsetenv("CORY_OUTPUT_ROOT");
  CHECK(output_path("runs/a") == fs::path("runs/a"));
}

TEST_CASE("method names") {
  CHECK(parse_method("cory") == Method::cory);
  CHECK(to_string(Method::ppo) == "ppo");
  CHECK_THROWS_AS(parse_method("dpo"), ConfigError);
}

TEST_CASE("the shipped toy config matches the built-in preset") {
  CHECK(to_text(load_config(CORY_SOURCE_DIR "/configs/toy_arithmetic.cfg")) == to_text(toy_preset()));
  CHECK_NOTHROW(load_config(CORY_SOURCE_DIR "/configs/sentiment.cfg").validate());
}
