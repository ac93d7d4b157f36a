#include "cory/harness.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

#include "cory/errors.hpp"
#include "cory/numeric.hpp"

namespace cory {

namespace {

constexpr std::uint64_t kInitStream = 0x1417;
constexpr std::uint64_t kEvalStream = 0xe7a1;

std::string fmt(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size() || !std::isfinite(out))
    throw ConfigError("'" + key + "' expects a number, got '" + v + "'");
  return out;
}

std::uint64_t to_count(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size())
    throw ConfigError("'" + key + "' expects a non-negative integer, got '" + v + "'");
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "off" || v == "no") return false;
  throw ConfigError("'" + key + "' expects true or false, got '" + v + "'");
}

std::string bool_text(bool b) { return b ? "true" : "false"; }

struct Field {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define COUNT_FIELD(key, member)                                                                  \
  Field {                                                                                         \
    key, [](RunConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_count(key, v)); }, \
        [](const RunConfig& c) { return std::to_string(c.member); }                               \
  }
#define REAL_FIELD(key, member)                                                     \
  Field {                                                                           \
    key, [](RunConfig& c, const std::string& v) { c.member = to_double(key, v); }, \
        [](const RunConfig& c) { return fmt(c.member); }                            \
  }
#define BOOL_FIELD(key, member)                                                   \
  Field {                                                                         \
    key, [](RunConfig& c, const std::string& v) { c.member = to_bool(key, v); }, \
        [](const RunConfig& c) { return bool_text(c.member); }                    \
  }
#define TEXT_FIELD(key, member)                                       \
  Field {                                                             \
    key, [](RunConfig& c, const std::string& v) { c.member = v; },  \
        [](const RunConfig& c) { return c.member; }                   \
  }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      {"method", [](RunConfig& c, const std::string& v) { c.method = parse_method(v); },
       [](const RunConfig& c) { return to_string(c.method); }},
      TEXT_FIELD("task", task),
      {"difficulty", [](RunConfig& c, const std::string& v) { c.difficulty = static_cast<int>(to_count("difficulty", v)); },
       [](const RunConfig& c) { return std::to_string(c.difficulty); }},
      COUNT_FIELD("max_action_len", max_action_len),
      TEXT_FIELD("vocab_file", vocab_file),
      TEXT_FIELD("corpus_file", corpus_file),
      TEXT_FIELD("lexicon_file", lexicon_file),
      BOOL_FIELD("knowledge_transfer", cory.knowledge_transfer),
      BOOL_FIELD("role_exchange", cory.role_exchange),
      {"reward_mode", [](RunConfig& c, const std::string& v) { c.cory.reward_mode = parse_reward_mode(v); },
       [](const RunConfig& c) { return to_string(c.cory.reward_mode); }},
      COUNT_FIELD("role_exchange_period", role_exchange_period),
      REAL_FIELD("learning_rate", ppo.lr),
      COUNT_FIELD("ppo_epochs", ppo.ppo_epochs),
      COUNT_FIELD("batch_size", batch_size),
      COUNT_FIELD("mini_batch_size", ppo.minibatch_size),
      COUNT_FIELD("gradient_accumulation_steps", ppo.grad_accum_steps),
      COUNT_FIELD("iterations", iterations),
      REAL_FIELD("init_kl_coef", ppo.eta),
      {"early_stopping",
       [](RunConfig&, const std::string& v) {
         if (to_bool("early_stopping", v)) throw ConfigError("early_stopping = true is not supported");
       },
       [](const RunConfig&) { return std::string("false"); }},
      REAL_FIELD("gamma", ppo.gamma),
      REAL_FIELD("lam", ppo.lambda),
      REAL_FIELD("cliprange", ppo.clip_eps),
      BOOL_FIELD("value_clipping", ppo.clip_value),
      REAL_FIELD("cliprange_value", ppo.value_clip),
      REAL_FIELD("vf_coef", ppo.value_coef),
      BOOL_FIELD("normalize_advantages", ppo.normalize_advantages),
      {"optimizer", [](RunConfig& c, const std::string& v) { c.ppo.optimizer = parse_optimizer(v); },
       [](const RunConfig& c) { return to_string(c.ppo.optimizer); }},
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = to_count("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"trunk", [](RunConfig& c, const std::string& v) { c.model.trunk = parse_trunk(v); },
       [](const RunConfig& c) { return to_string(c.model.trunk); }},
      COUNT_FIELD("embed_dim", model.embed),
      COUNT_FIELD("hidden_dim", model.hidden),
      COUNT_FIELD("layers", model.layers),
      COUNT_FIELD("max_positions", model.max_positions),
      REAL_FIELD("init_scale", init_scale),
      COUNT_FIELD("eval_queries", eval_queries),
      COUNT_FIELD("report_window", report_window),
      TEXT_FIELD("output_dir", output_dir),
  };
  return table;
}

#undef COUNT_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD
#undef TEXT_FIELD

MetricsRow to_row(std::size_t iteration, const std::string& agent, const std::string& role, const AgentStats& s,
                  bool exchanged, std::size_t truncations) {
  MetricsRow r;
  r.iteration = iteration;
  r.agent = agent;
  r.role = role;
  r.task_reward = s.task_reward;
  r.sentence_kl = s.sentence_kl;
  r.combined = s.combined;
  r.mean_length = s.mean_length;
  r.clip_fraction = s.update.clip_fraction;
  r.grad_norm = s.update.grad_norm;
  r.policy_loss = s.update.policy_loss;
  r.value_loss = s.update.value_loss;
  r.mean_ratio = s.update.mean_ratio;
  r.exchanged = exchanged ? 1 : 0;
  r.truncations = truncations;
  return r;
}

const std::vector<std::string>& metric_columns() {
  static const std::vector<std::string> cols = {
      "iteration",     "agent",     "role",        "task_reward", "sentence_kl", "combined",  "mean_length",
      "clip_fraction", "grad_norm", "policy_loss", "value_loss",  "mean_ratio",  "exchanged", "truncations"};
  return cols;
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto tab = line.find('\t', start);
    out.push_back(line.substr(start, tab == std::string::npos ? std::string::npos : tab - start));
    if (tab == std::string::npos) break;
    start = tab + 1;
  }
  return out;
}

void ensure_dir(const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) ensure_dir(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  return out;
}

std::string method_dir(Method m, std::uint64_t seed) { return to_string(m) + "/seed_" + std::to_string(seed); }

}  // namespace

std::string to_string(Method method) { return method == Method::ppo ? "ppo" : "cory"; }

Method parse_method(std::string_view name) {
  if (name == "ppo") return Method::ppo;
  if (name == "cory") return Method::cory;
  throw ConfigError("unknown method '" + std::string(name) + "' (expected ppo|cory)");
}

void RunConfig::validate() const {
  if (task != "arithmetic" && task != "sentiment")
    throw ConfigError("unknown task '" + task + "' (expected arithmetic|sentiment)");
  if (difficulty < 1 || difficulty > 3) throw ConfigError("difficulty must be 1, 2 or 3");
  if (max_action_len < 1) throw ConfigError("max_action_len must be >= 1");
  if (role_exchange_period < 1) throw ConfigError("role_exchange_period must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (model.embed < 1 || model.hidden < 1 || model.layers < 1) throw ConfigError("model sizes must be >= 1");
  if (!(init_scale >= 0.0)) throw ConfigError("init_scale must be >= 0");
  if (eval_queries < 1 || report_window < 1) throw ConfigError("eval_queries and report_window must be >= 1");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  ppo.validate();
}

void apply_setting(RunConfig& cfg, const std::string& key, const std::string& value) {
  for (const auto& f : fields())
    if (key == f.name) {
      f.set(cfg, value);
      return;
    }
  throw ConfigError("unknown config key '" + key + "'");
}

void apply_override(RunConfig& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not key=value");
  apply_setting(cfg, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

RunConfig parse_config(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    try {
      apply_setting(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string to_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) out += std::string(f.name) + " = " + f.get(cfg) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& f : fields()) out.emplace_back(f.name);
  return out;
}

RunConfig toy_preset() {
  RunConfig c;
  c.task = "arithmetic";
  c.difficulty = 1;
  c.max_action_len = 2;
  c.batch_size = 64;
  c.iterations = 100;
  c.ppo.optimizer = OptimizerKind::adam;
  c.ppo.lr = 1e-2;
  c.ppo.minibatch_size = 16;
  c.ppo.normalize_advantages = true;
  c.ppo.eta = 0.01;
  c.output_dir = "runs/toy";
  return c;
}

TaskSpec make_task(const RunConfig& cfg) {
  TaskSpec task = cfg.task == "arithmetic" ? make_arithmetic_task(cfg.difficulty, cfg.max_action_len)
                                           : make_sentiment_task(cfg.max_action_len);
  if (!cfg.vocab_file.empty()) {
    task.vocab = Vocab::load(cfg.vocab_file);
    if (task.kind == RewardKind::subjective) task.lexicon.clear();
  }
  if (!cfg.lexicon_file.empty()) task.lexicon = load_lexicon(cfg.lexicon_file, task.vocab);
  if (!cfg.corpus_file.empty())
    task.corpus = load_corpus(cfg.corpus_file, task.vocab, task.max_prompt_len, task.kind == RewardKind::objective);
  return task;
}

ParamStore make_initial_model(const RunConfig& cfg, const TaskSpec& task) {
  ModelDims d = cfg.model;
  d.vocab = task.vocab.size();
  d.pad_id = task.vocab.pad_id();
  const std::size_t needed = observer_capacity(task) + task.max_action_len;
  if (d.max_positions < needed)
    throw ConfigError("max_positions must be >= " + std::to_string(needed) + " for this task");
  ParamStore model(d);
  Rng rng = make_rng(cfg.seed, {kInitStream});
  model.init(rng, cfg.init_scale);
  return model;
}

std::string metrics_header() {
  std::string h;
  for (const auto& c : metric_columns()) h += (h.empty() ? "" : "\t") + c;
  return h;
}

std::string format_row(const MetricsRow& r) {
  std::string s = std::to_string(r.iteration) + "\t" + r.agent + "\t" + r.role;
  for (double v : {r.task_reward, r.sentence_kl, r.combined, r.mean_length, r.clip_fraction, r.grad_norm,
                   r.policy_loss, r.value_loss, r.mean_ratio})
    s += "\t" + fmt(v);
  s += "\t" + std::to_string(r.exchanged) + "\t" + std::to_string(r.truncations);
  return s;
}

void write_metrics(const std::filesystem::path& path, const std::vector<MetricsRow>& rows) {
  auto out = open_out(path);
  out << kMetricsSchema << "\n" << metrics_header() << "\n";
  for (const auto& r : rows) out << format_row(r) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<MetricsRow> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open metrics " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsSchema)
    throw SchemaMismatch(path.string() + ": missing or unknown schema line");
  if (!std::getline(in, line) || line != metrics_header())
    throw SchemaMismatch(path.string() + ": column header does not match " + kMetricsSchema);
  std::vector<MetricsRow> rows;
  std::size_t line_no = 2;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_tabs(line);
    if (f.size() != metric_columns().size()) throw ParseError("expected " + std::to_string(metric_columns().size()) + " fields", line_no);
    try {
      MetricsRow r;
      r.iteration = to_count("iteration", f[0]);
      r.agent = f[1];
      r.role = f[2];
      double* reals[] = {&r.task_reward, &r.sentence_kl, &r.combined, &r.mean_length, &r.clip_fraction,
                         &r.grad_norm,   &r.policy_loss, &r.value_loss, &r.mean_ratio};
      for (std::size_t i = 0; i < 9; ++i) *reals[i] = to_double(metric_columns()[3 + i], f[3 + i]);
      r.exchanged = static_cast<int>(to_count("exchanged", f[12]));
      r.truncations = to_count("truncations", f[13]);
      rows.push_back(std::move(r));
    } catch (const ConfigError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return rows;
}

std::vector<AgentSummary> summarize_rows(const std::vector<MetricsRow>& rows, std::size_t window) {
  std::vector<std::string> agents;
  for (const auto& r : rows)
    if (std::find(agents.begin(), agents.end(), r.agent) == agents.end()) agents.push_back(r.agent);
  std::vector<AgentSummary> out;
  for (const auto& name : agents) {
    std::vector<const MetricsRow*> mine;
    for (const auto& r : rows)
      if (r.agent == name) mine.push_back(&r);
    const std::size_t take = std::min(window, mine.size());
    AgentSummary s;
    s.agent = name;
    for (std::size_t i = mine.size() - take; i < mine.size(); ++i) {
      s.task_reward += mine[i]->task_reward;
      s.sentence_kl += mine[i]->sentence_kl;
      s.combined += mine[i]->combined;
    }
    s.task_reward /= static_cast<double>(take);
    s.sentence_kl /= static_cast<double>(take);
    s.combined /= static_cast<double>(take);
    out.push_back(s);
  }
  return out;
}

double greedy_eval(const ParamStore& model, const TaskSpec& task, const std::vector<Query>& queries) {
  if (queries.empty()) return 0.0;
  double total = 0.0;
  for (const auto& q : queries) total += task.reward(q, greedy_action(model, q.prompt, task.max_action_len));
  return total / static_cast<double>(queries.size());
}

RunReport run(const RunConfig& cfg, bool write) {
  cfg.validate();
  const TaskSpec task = make_task(cfg);
  const ParamStore init = make_initial_model(cfg, task);
  const auto eval_set = task.eval_queries(cfg.eval_queries, derive_seed(cfg.seed, {kEvalStream}));
  const auto out_dir = output_path(cfg.output_dir);
  if (write) ensure_dir(out_dir);

  RunReport report;
  report.method = cfg.method;
  report.seed = cfg.seed;
  report.eta = cfg.ppo.eta;
  report.learning_rate = cfg.ppo.lr;
  std::vector<std::pair<std::size_t, double>> timing;
  using Clock = std::chrono::steady_clock;

  std::vector<std::pair<std::string, const ParamStore*>> finals;
  std::optional<Agent> single;
  std::optional<AgentPair> pair;
  if (cfg.method == Method::ppo) {
    single.emplace(Agent{init, Optimizer(cfg.ppo.optimizer, init.size())});
    finals.emplace_back("ppo", &single->params);
  } else {
    pair.emplace(init, cfg.ppo.optimizer, cfg.role_exchange_period);
    finals.emplace_back("llm1", &pair->agent(0).params);
    finals.emplace_back("llm2", &pair->agent(1).params);
  }

  for (std::size_t k = 0; k < cfg.iterations; ++k) {
    const auto t0 = Clock::now();
    const StreamKey key{cfg.seed, k};
    const auto queries = sample_query_batch(task, cfg.batch_size, key);
    if (single) {
      try {
        const auto s = ppo_iteration(*single, init, queries, task, cfg.ppo, key);
        report.rows.push_back(to_row(k, "ppo", "single", s, false, 0));
      } catch (const NonFiniteGradient& e) {
        report.diverged = true;
        report.divergence = "iteration " + std::to_string(k) + ": " + e.what();
      }
    } else {
      const auto it = cory_iteration(*pair, queries, task, cfg.ppo, cfg.cory, key);
      if (it.diverged) {
        report.diverged = true;
        report.divergence = "iteration " + std::to_string(k) + ": " + *it.diverged;
      } else {
        for (int slot = 0; slot < 2; ++slot) {
          const auto& s = it.agents[static_cast<std::size_t>(slot)];
          report.rows.push_back(to_row(k, slot == 0 ? "llm1" : "llm2", to_string(s.role), s, it.exchanged,
                                       it.truncations));
        }
      }
    }
    if (report.diverged) break;
    report.iterations_completed = k + 1;
    timing.emplace_back(k, std::chrono::duration<double>(Clock::now() - t0).count());
  }

  report.agents = summarize_rows(report.rows, cfg.report_window);
  if (report.agents.empty())
    for (const auto& f : finals) report.agents.push_back(AgentSummary{f.first, 0.0, 0.0, 0.0, 0.0, {}});
  for (auto& a : report.agents) {
    for (const auto& f : finals) {
      if (f.first != a.agent) continue;
      a.pass_at_1 = greedy_eval(*f.second, task, eval_set);
      a.checkpoint = (f.first == "ppo" ? std::string("policy") : f.first) + ".ckpt";
      if (write) save_checkpoint(*f.second, out_dir / a.checkpoint);
    }
    report.final_task_reward += a.task_reward / static_cast<double>(report.agents.size());
    report.final_sentence_kl += a.sentence_kl / static_cast<double>(report.agents.size());
    report.final_combined += a.combined / static_cast<double>(report.agents.size());
  }

  if (write) {
    write_metrics(out_dir / "metrics.tsv", report.rows);
    auto t = open_out(out_dir / "timing.tsv");
    t << "iteration\tseconds\n";
    for (const auto& [k, sec] : timing) t << k << "\t" << fmt(sec) << "\n";
    write_report(out_dir / "report.json", report);
    auto c = open_out(out_dir / "config.txt");
    c << to_text(cfg);
  }
  return report;
}

void write_report(const std::filesystem::path& path, const RunReport& r) {
  nlohmann::ordered_json j;
  j["method"] = to_string(r.method);
  j["seed"] = r.seed;
  j["init_kl_coef"] = r.eta;
  j["learning_rate"] = r.learning_rate;
  j["iterations_completed"] = r.iterations_completed;
  j["diverged"] = r.diverged;
  j["divergence"] = r.divergence;
  j["final"] = {{"task_reward", r.final_task_reward},
                {"sentence_kl", r.final_sentence_kl},
                {"combined", r.final_combined}};
  j["agents"] = nlohmann::ordered_json::array();
  for (const auto& a : r.agents)
    j["agents"].push_back({{"agent", a.agent},
                           {"task_reward", a.task_reward},
                           {"sentence_kl", a.sentence_kl},
                           {"combined", a.combined},
                           {"pass_at_1", a.pass_at_1},
                           {"checkpoint", a.checkpoint}});
  auto out = open_out(path);
  out << j.dump(2) << "\n";
  if (!out) throw IoError("failed writing " + path.string());
}

std::vector<FrontierPoint> FrontierTable::points() const {
  std::vector<FrontierPoint> out;
  for (const auto& r : rows) {
    if (r.diverged) continue;
    auto it = std::find_if(out.begin(), out.end(),
                           [&](const FrontierPoint& p) { return p.method == r.method && p.eta == r.eta; });
    if (it == out.end()) {
      out.push_back(FrontierPoint{r.method, r.eta, 0.0, 0.0, 0});
      it = out.end() - 1;
    }
    it->task_reward += r.task_reward;
    it->neg_kl += r.neg_kl;
    ++it->runs;
  }
  for (auto& p : out) {
    p.task_reward /= static_cast<double>(p.runs);
    p.neg_kl /= static_cast<double>(p.runs);
  }
  std::sort(out.begin(), out.end(), [](const FrontierPoint& a, const FrontierPoint& b) {
    return a.method != b.method ? a.method < b.method : a.eta < b.eta;
  });
  return out;
}

bool FrontierTable::kl_monotone(Method method, double tolerance) const {
  double prev_kl = 0.0;
  bool first = true;
  for (const auto& p : points()) {
    if (p.method != method) continue;
    const double kl = -p.neg_kl;
    if (!first && kl > prev_kl + tolerance) return false;
    prev_kl = kl;
    first = false;
  }
  return true;
}

std::size_t FrontierTable::cory_dominance_count() const {
  const auto pts = points();
  std::size_t count = 0;
  for (const auto& c : pts) {
    if (c.method != Method::cory) continue;
    for (const auto& p : pts)
      if (p.method == Method::ppo && p.eta == c.eta && c.task_reward >= p.task_reward && c.neg_kl >= p.neg_kl)
        ++count;
  }
  return count;
}

FrontierTable frontier_sweep(const RunConfig& base, const std::vector<double>& etas,
                             const std::vector<std::uint64_t>& seeds, const std::vector<Method>& methods, bool write) {
  if (etas.empty()) throw ConfigError("frontier sweep needs at least one eta");
  FrontierTable table;
  for (double eta : etas)
    for (Method m : methods)
      for (auto seed : seeds) {
        RunConfig cfg = base;
        cfg.method = m;
        cfg.seed = seed;
        cfg.ppo.eta = eta;
        cfg.output_dir = base.output_dir + "/eta_" + fmt(eta) + "/" + method_dir(m, seed);
        const auto rep = run(cfg, write);
        table.rows.push_back(
            FrontierRow{m, eta, seed, rep.final_task_reward, -rep.final_sentence_kl, rep.diverged});
      }
  if (write) write_frontier(output_path(base.output_dir) / "frontier.tsv", table);
  return table;
}

void write_frontier(const std::filesystem::path& path, const FrontierTable& table) {
  auto out = open_out(path);
  out << "method\teta\tseed\ttask_reward\tneg_kl\tdiverged\n";
  for (const auto& r : table.rows)
    out << to_string(r.method) << "\t" << fmt(r.eta) << "\t" << r.seed << "\t" << fmt(r.task_reward) << "\t"
        << fmt(r.neg_kl) << "\t" << (r.diverged ? 1 : 0) << "\n";
  auto summary = path;
  summary.replace_filename(path.stem().string() + "_points" + path.extension().string());
  auto s = open_out(summary);
  s << "method\teta\tmean_task_reward\tmean_neg_kl\truns\n";
  for (const auto& p : table.points())
    s << to_string(p.method) << "\t" << fmt(p.eta) << "\t" << fmt(p.task_reward) << "\t" << fmt(p.neg_kl) << "\t"
      << p.runs << "\n";
}

std::vector<RobustnessRow> lr_sweep(const RunConfig& base, const std::vector<double>& factors,
                                    const std::vector<std::uint64_t>& seeds, const std::vector<Method>& methods,
                                    bool write) {
  if (factors.empty()) throw ConfigError("learning-rate sweep needs at least one factor");
  std::vector<RobustnessRow> rows;
  for (double f : factors)
    for (Method m : methods)
      for (auto seed : seeds) {
        RunConfig cfg = base;
        cfg.method = m;
        cfg.seed = seed;
        cfg.ppo.lr = base.ppo.lr * f;
        cfg.output_dir = base.output_dir + "/lr_" + fmt(cfg.ppo.lr) + "/" + method_dir(m, seed);
        const auto rep = run(cfg, write);
        rows.push_back(RobustnessRow{m, cfg.ppo.lr, seed, rep.diverged, rep.divergence, rep.final_task_reward,
                                     rep.final_sentence_kl});
      }
  if (write) write_robustness(output_path(base.output_dir) / "robustness.tsv", rows);
  return rows;
}

void write_robustness(const std::filesystem::path& path, const std::vector<RobustnessRow>& rows) {
  auto out = open_out(path);
  out << "method\tlearning_rate\tseed\tdiverged\ttask_reward\tsentence_kl\tdivergence\n";
  for (const auto& r : rows)
    out << to_string(r.method) << "\t" << fmt(r.learning_rate) << "\t" << r.seed << "\t" << (r.diverged ? 1 : 0)
        << "\t" << fmt(r.task_reward) << "\t" << fmt(r.sentence_kl) << "\t" << r.divergence << "\n";
}

double pass_at_k(const Generator& gen, const std::vector<ObjectiveInstance>& instances, std::size_t k,
                 const Vocab& vocab, Rng& rng) {
  if (k < 1) throw std::invalid_argument("pass@k needs k >= 1");
  if (instances.empty()) return 0.0;
  std::size_t passed = 0;
  for (const auto& inst : instances) {
    if (inst.truth.empty()) throw std::invalid_argument("pass@k instance without ground truth");
    for (std::size_t j = 0; j < k; ++j)
      if (extract_and_match(gen(inst, j, rng), inst.truth, vocab) == 1.0) {
        ++passed;
        break;
      }
  }
  return static_cast<double>(passed) / static_cast<double>(instances.size());
}

double pass_at_k(const ParamStore& model, const std::vector<ObjectiveInstance>& instances, std::size_t k,
                 std::size_t max_new, const Vocab& vocab, Rng& rng) {
  const Generator gen = [&](const ObjectiveInstance& inst, std::size_t, Rng& r) {
    return k == 1 ? greedy_action(model, inst.prompt, max_new) : sampled_tokens(model, inst.prompt, max_new, r);
  };
  return pass_at_k(gen, instances, k, vocab, rng);
}

std::vector<PlotRow> emit_plot_data(const std::vector<std::filesystem::path>& files) {
  if (files.empty()) throw std::invalid_argument("plot data needs at least one metrics file");
  std::vector<std::vector<MetricsRow>> runs;
  std::set<std::string> agents;
  for (std::size_t i = 0; i < files.size(); ++i) {
    runs.push_back(read_metrics(files[i]));
    std::set<std::string> mine;
    for (const auto& r : runs.back()) mine.insert(r.agent);
    if (i == 0)
      agents = mine;
    else if (mine != agents)
      throw SchemaMismatch(files[i].string() + ": agent set differs from " + files[0].string());
  }
  std::map<std::pair<std::string, std::size_t>, std::vector<const MetricsRow*>> groups;
  for (const auto& rows : runs)
    for (const auto& r : rows) groups[{r.agent, r.iteration}].push_back(&r);
  std::vector<PlotRow> out;
  for (const auto& [key, members] : groups) {
    PlotRow p;
    p.agent = key.first;
    p.iteration = key.second;
    p.n = members.size();
    for (const auto& name : kPlotSeries) {
      std::vector<double> xs;
      for (const auto* r : members)
        xs.push_back(name == "task_reward" ? r->task_reward : name == "sentence_kl" ? r->sentence_kl : r->combined);
      const double m = mean(xs);
      double ss = 0.0;
      for (double x : xs) ss += (x - m) * (x - m);
      const double sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
      p.series[name] = {m, sd};
    }
    out.push_back(std::move(p));
  }
  return out;
}

void write_plot_data(const std::filesystem::path& path, const std::vector<PlotRow>& rows) {
  auto out = open_out(path);
  out << "agent\titeration\tn";
  for (const auto& name : kPlotSeries) out << "\t" << name << "_mean\t" << name << "_std";
  out << "\n";
  for (const auto& r : rows) {
    out << r.agent << "\t" << r.iteration << "\t" << r.n;
    for (const auto& name : kPlotSeries) {
      const auto& [m, sd] = r.series.at(name);
      out << "\t" << fmt(m) << "\t" << fmt(sd);
    }
    out << "\n";
  }
}

std::filesystem::path output_path(const std::string& dir) {
  std::filesystem::path p(dir);
  if (p.is_absolute()) return p;
  const char* root = std::getenv("CORY_OUTPUT_ROOT");
  if (root && *root) return std::filesystem::path(root) / p;
  return p;
}

}  // namespace cory
