#pragma once

// Benchmark harness: scenario corpus loading, the multi-run experiment
// driver, and the quantitative statistics the engine reports — run metrics,
// retrieval evolution, similarity-bucket fix accuracy, and cost/time
// accounting.
//
// The dynamic memory persists across the runs of one experiment (retrieval
// evolution is only observable with cross-run persistence) and is snapshotted
// after every run. All emitted statistics are deterministic under the mock
// provider; wall-clock timings are kept out of the comparable reports.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <limits>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "reflex/pipeline.hpp"

namespace reflex::bench {

// -- Corpus ------------------------------------------------------------------

struct Scenario {
  std::string scenario_id;  // e.g. "089/0-py"
  std::string cwe_id;       // e.g. "CWE-089"
  Language language = Language::Python;
  std::string split;        // "test" or "val"
  std::string description;
  std::string prompt;       // incomplete code under test
  std::string file_context;
  std::string function_context;
  std::optional<TestSpec> test_spec;
};

class CorpusError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CorpusError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline std::string read_file_or_empty(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) return {};
  return read_file(path);
}

}  // namespace detail

// Layout: one directory per scenario holding scenario.json, prompt.txt and
// optional file_context.txt / function_context.txt. The metadata may carry a
// test_spec ({command, expected_patterns, timeout_s}).
inline std::vector<Scenario> load_corpus(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) {
    throw CorpusError("corpus directory does not exist: " + dir.string());
  }
  std::vector<std::filesystem::path> subdirs;
  for (const auto& entry : std::filesystem::directory_iterator(dir)) {
    if (entry.is_directory()) subdirs.push_back(entry.path());
  }
  std::sort(subdirs.begin(), subdirs.end());
  if (subdirs.empty()) {
    std::fprintf(stderr, "warning: corpus %s contains no scenarios\n", dir.string().c_str());
  }

  std::vector<Scenario> scenarios;
  std::set<std::string> seen_ids;
  for (const auto& sub : subdirs) {
    auto meta_path = sub / "scenario.json";
    if (!std::filesystem::exists(meta_path)) {
      throw CorpusError(sub.string() + ": missing scenario.json");
    }
    nlohmann::json meta;
    try {
      meta = nlohmann::json::parse(detail::read_file(meta_path));
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(meta_path.string() + ": " + e.what());
    }

    Scenario s;
    try {
      s.scenario_id = meta.at("scenario_id").get<std::string>();
      s.cwe_id = meta.at("cwe_id").get<std::string>();
      s.language = language_from_string(meta.at("language").get<std::string>());
      s.split = meta.value("split", std::string{"test"});
      s.description = meta.value("description", std::string{});
      if (meta.contains("test_spec") && !meta["test_spec"].is_null()) {
        TestSpec spec;
        spec.command = meta["test_spec"].at("command").get<std::string>();
        spec.expected_patterns =
            meta["test_spec"].value("expected_patterns", std::vector<std::string>{});
        spec.timeout_s = meta["test_spec"].value("timeout_s", 10.0);
        s.test_spec = std::move(spec);
      }
    } catch (const nlohmann::json::exception& e) {
      throw CorpusError(meta_path.string() + ": " + e.what());
    }

    if (!seen_ids.insert(s.scenario_id).second) {
      throw CorpusError(meta_path.string() + ": duplicate scenario_id " + s.scenario_id);
    }
    bool known_cwe = false;
    for (const std::string& cwe : known_cwe_classes()) {
      if (s.cwe_id == cwe) known_cwe = true;
    }
    if (!known_cwe) {
      throw CorpusError(meta_path.string() + ": cwe_id " + s.cwe_id +
                        " is not one of the covered classes");
    }
    // Language must agree with the id suffix (-py / -c / -cpp).
    bool suffix_ok = true;
    if (s.scenario_id.ends_with("-py")) {
      suffix_ok = s.language == Language::Python;
    } else if (s.scenario_id.ends_with("-cpp")) {
      suffix_ok = s.language == Language::Cpp;
    } else if (s.scenario_id.ends_with("-c")) {
      suffix_ok = s.language == Language::C;
    }
    if (!suffix_ok) {
      throw CorpusError(meta_path.string() + ": language " + to_string(s.language) +
                        " conflicts with scenario_id suffix");
    }
    if (s.split != "test" && s.split != "val") {
      throw CorpusError(meta_path.string() + ": split must be 'test' or 'val'");
    }

    s.prompt = detail::read_file(sub / "prompt.txt");
    s.file_context = detail::read_file_or_empty(sub / "file_context.txt");
    s.function_context = detail::read_file_or_empty(sub / "function_context.txt");
    scenarios.push_back(std::move(s));
  }
  return scenarios;
}

// -- Per-task results and run metrics ----------------------------------------

struct TaskResult {
  std::string task_id;
  std::string scenario_id;
  std::string sample_id;
  int run_index = 1;
  TaskStatus status = TaskStatus::UNRESOLVED;
  bool aborted = false;
  bool compiled = false;
  std::optional<bool> tests_passed;
  bool secure = false;
  int rounds_used = 0;
  std::string deposited_entry_id;
};

struct RunMetrics {
  std::size_t n_tasks = 0;     // |T|
  std::size_t eff_total = 0;   // |C| compiled
  std::size_t pass_count = 0;  // |P| tests passed
  std::size_t sec_count = 0;   // |S| secure
  std::size_t unres_count = 0;
  std::optional<double> sec_rate;   // |S|/|C| x 100, absent when |C| == 0
  std::optional<double> pass_rate;  // |P|/|C| x 100, absent when |C| == 0
};

inline RunMetrics compute_metrics(const std::vector<TaskResult>& tasks) {
  RunMetrics m;
  m.n_tasks = tasks.size();
  for (const TaskResult& t : tasks) {
    if (t.compiled) ++m.eff_total;
    if (t.tests_passed.value_or(false)) ++m.pass_count;
    if (t.secure) ++m.sec_count;
  }
  m.unres_count = m.n_tasks - m.eff_total;
  if (m.eff_total > 0) {
    m.sec_rate = 100.0 * static_cast<double>(m.sec_count) / static_cast<double>(m.eff_total);
    m.pass_rate = 100.0 * static_cast<double>(m.pass_count) / static_cast<double>(m.eff_total);
  }
  return m;
}

// -- Retrieval statistics ------------------------------------------------------

// One retrieval query joined with the fate of the task that issued it.
struct RetrievalLogEntry {
  std::string task_id;
  bool fallback_used = false;
  std::vector<std::pair<std::string, double>> items;  // (entry_id, similarity)
  bool task_fixed = false;  // FIXED vs UNRESOLVED for bucket accuracy
};

struct RetrievalStats {
  std::size_t n_queries = 0;
  std::size_t n_docs = 0;
  double ard = 0.0;                  // mean retrieved-document count
  std::optional<double> asim;        // mean similarity over all items
  std::optional<double> msim_max;
  std::optional<double> msim_min;
  double rsr = 0.0;                  // % of queries with fallback_used == false
  double fur = 0.0;                  // 100 - rsr, exactly
};

inline std::optional<RetrievalStats> compute_retrieval_stats(
    const std::vector<RetrievalLogEntry>& log) {
  if (log.empty()) return std::nullopt;
  RetrievalStats s;
  s.n_queries = log.size();
  double sim_sum = 0.0;
  std::size_t no_fallback = 0;
  for (const RetrievalLogEntry& q : log) {
    if (!q.fallback_used) ++no_fallback;
    for (const auto& [id, sim] : q.items) {
      ++s.n_docs;
      sim_sum += sim;
      s.msim_max = s.msim_max.has_value() ? std::max(*s.msim_max, sim) : sim;
      s.msim_min = s.msim_min.has_value() ? std::min(*s.msim_min, sim) : sim;
    }
  }
  s.ard = static_cast<double>(s.n_docs) / static_cast<double>(s.n_queries);
  if (s.n_docs > 0) s.asim = sim_sum / static_cast<double>(s.n_docs);
  s.rsr = 100.0 * static_cast<double>(no_fallback) / static_cast<double>(s.n_queries);
  s.fur = 100.0 - s.rsr;
  return s;
}

// -- Similarity buckets ----------------------------------------------------------

// Boundary convention: lower bound inclusive, upper bound exclusive, except
// the top bucket which includes 1.00.
struct Bucket {
  std::string label;
  double lower = 0.0;  // -inf encoded as negative infinity for the last bucket
  double upper = 0.0;
  std::size_t docs = 0;
  std::size_t fixed_docs = 0;
  std::optional<double> ratio_pct;    // share of all retrieved docs
  std::optional<double> fix_acc_pct;  // fixed docs / docs, absent when empty
};

struct BucketAccuracy {
  std::array<Bucket, 4> buckets;
  std::size_t total_docs = 0;
};

inline BucketAccuracy compute_bucket_accuracy(const std::vector<RetrievalLogEntry>& log) {
  BucketAccuracy result;
  const char* labels[4] = {"0.95-1.00", "0.85-0.95", "0.70-0.85", "<0.70"};
  double lowers[4] = {0.95, 0.85, 0.70, -std::numeric_limits<double>::infinity()};
  double uppers[4] = {1.00, 0.95, 0.85, 0.70};
  for (int i = 0; i < 4; ++i) {
    result.buckets[i].label = labels[i];
    result.buckets[i].lower = lowers[i];
    result.buckets[i].upper = uppers[i];
  }
  for (const RetrievalLogEntry& q : log) {
    for (const auto& [id, sim] : q.items) {
      ++result.total_docs;
      std::size_t slot = 3;
      if (sim >= 0.95) slot = 0;       // includes 1.00 (and float overshoot)
      else if (sim >= 0.85) slot = 1;
      else if (sim >= 0.70) slot = 2;
      ++result.buckets[slot].docs;
      if (q.task_fixed) ++result.buckets[slot].fixed_docs;
    }
  }
  for (Bucket& b : result.buckets) {
    if (result.total_docs > 0) {
      b.ratio_pct = 100.0 * static_cast<double>(b.docs) / static_cast<double>(result.total_docs);
    }
    if (b.docs > 0) {
      b.fix_acc_pct = 100.0 * static_cast<double>(b.fixed_docs) / static_cast<double>(b.docs);
    }
  }
  return result;
}

// -- Cost / time accounting -------------------------------------------------------

struct StageTimeShare {
  std::string stage;
  double seconds = 0.0;
  double share_pct = 0.0;
};

struct AccountingReport {
  std::int64_t total_tokens = 0;
  std::int64_t total_calls = 0;
  double total_cost = 0.0;
  std::optional<double> cost_per_scene;    // absent when n_scenes == 0
  std::optional<double> cost_per_success;  // absent when n_success == 0
  std::map<std::string, std::int64_t> stage_tokens;
  std::vector<StageTimeShare> stage_time_shares;  // shares sum to 100 +- rounding
  double total_time_s = 0.0;
};

inline AccountingReport compute_accounting(
    const UsageLedger& ledger, double price_per_1k, std::size_t n_scenes, std::size_t n_success,
    const std::vector<std::pair<std::string, double>>& stage_times = {}) {
  AccountingReport r;
  for (StageTag stage : {StageTag::SELF_CHECK, StageTag::REFLECTION, StageTag::VERIFY_ASSIST}) {
    UsageTotals t = ledger.stage_total(stage);
    if (t.calls == 0) continue;
    r.stage_tokens[to_string(stage)] = t.total_tokens();
  }
  UsageTotals grand = ledger.grand_total();
  r.total_tokens = grand.total_tokens();
  r.total_calls = grand.calls;
  r.total_cost = token_cost(r.total_tokens, price_per_1k);
  if (n_scenes > 0) r.cost_per_scene = r.total_cost / static_cast<double>(n_scenes);
  if (n_success > 0) r.cost_per_success = r.total_cost / static_cast<double>(n_success);

  for (const auto& [stage, seconds] : stage_times) r.total_time_s += seconds;
  for (const auto& [stage, seconds] : stage_times) {
    double share = r.total_time_s > 0.0 ? 100.0 * seconds / r.total_time_s : 0.0;
    r.stage_time_shares.push_back(StageTimeShare{stage, seconds, share});
  }
  return r;
}

// -- Experiment driver ---------------------------------------------------------

struct ExperimentConfig {
  int runs = 1;
  int samples_per_scenario = 1;
  RunConfig run_config;
  std::filesystem::path out_dir;
  int jobs = 1;
};

struct RunArtifacts {
  int run_index = 1;
  RunMetrics metrics;
  std::optional<RetrievalStats> retrieval;
  std::size_t dynamic_memory_size = 0;
  std::filesystem::path snapshot_path;
};

struct ExperimentResult {
  std::vector<RunArtifacts> runs;
  std::vector<TaskResult> tasks;
  std::vector<RetrievalLogEntry> retrieval_log;
  BucketAccuracy buckets;
  AccountingReport accounting;
};

struct ExperimentDeps {
  MemoryStore& memory;
  Provider& provider;
  Verifier& verifier;
  UsageLedger& ledger;
  AuditLog& audit;
  LogicalClock& clock;
  PromptTemplates templates = PromptTemplates::defaults();
};

namespace detail {

inline TaskResult task_result_from(const TaskOutcome& outcome, const Scenario& scenario,
                                   const std::string& sample_id, int run_index) {
  TaskResult t;
  t.task_id = outcome.task_id;
  t.scenario_id = scenario.scenario_id;
  t.sample_id = sample_id;
  t.run_index = run_index;
  t.status = outcome.status;
  t.aborted = outcome.aborted;
  t.rounds_used = outcome.rounds_used;
  t.deposited_entry_id = outcome.deposited_entry_id;
  if (outcome.verification.has_value()) {
    t.compiled = outcome.verification->compiled;
    t.tests_passed = outcome.verification->tests_passed;
    t.secure = outcome.verification->secure();
  }
  return t;
}

inline void append_retrievals(std::vector<RetrievalLogEntry>& log, const AuditRecord& record,
                              const TaskOutcome& outcome) {
  for (const auto& round : record.doc["rounds"]) {
    RetrievalLogEntry entry;
    entry.task_id = outcome.task_id;
    entry.fallback_used = round["evidence"]["fallback_used"].get<bool>();
    for (const auto& item : round["evidence"]["items"]) {
      entry.items.emplace_back(item["entry_id"].get<std::string>(),
                               item["similarity"].get<double>());
    }
    entry.task_fixed = outcome.status == TaskStatus::FIXED;
    log.push_back(std::move(entry));
  }
}

}  // namespace detail

inline ExperimentResult run_experiment(const std::vector<Scenario>& corpus,
                                       ExperimentDeps& deps, const ExperimentConfig& config) {
  if (config.runs < 1) throw std::invalid_argument("run_experiment: runs must be >= 1");
  if (config.samples_per_scenario < 1) {
    throw std::invalid_argument("run_experiment: samples_per_scenario must be >= 1");
  }
  config.run_config.validate();
  if (!config.out_dir.empty()) std::filesystem::create_directories(config.out_dir);

  ExperimentResult result;
  for (int run = 1; run <= config.runs; ++run) {
    PipelineDeps pipeline_deps{deps.memory, deps.provider, deps.verifier, deps.ledger,
                               deps.audit,  deps.clock,    deps.templates,
                               "run-" + std::to_string(run)};

    struct TaskSpec {
      const Scenario* scenario;
      std::string sample_id;
    };
    std::vector<TaskSpec> specs;
    for (const Scenario& scenario : corpus) {
      for (int n = 1; n <= config.samples_per_scenario; ++n) {
        specs.push_back(TaskSpec{&scenario, scenario.scenario_id + "#r" +
                                                std::to_string(run) + ".n" + std::to_string(n)});
      }
    }

    std::vector<TaskResult> run_tasks(specs.size());
    std::vector<std::vector<RetrievalLogEntry>> run_logs(specs.size());

    auto execute = [&](std::size_t i) {
      const TaskSpec& spec = specs[i];
      CodeSample sample;
      sample.sample_id = spec.sample_id;
      sample.language = spec.scenario->language;
      sample.code = spec.scenario->prompt;
      sample.file_context = spec.scenario->file_context;
      sample.function_context = spec.scenario->function_context;
      sample.cwe_hint = spec.scenario->cwe_id;
      try {
        auto [outcome, record] =
            run_task(sample, config.run_config, pipeline_deps, spec.scenario->test_spec);
        run_tasks[i] = detail::task_result_from(outcome, *spec.scenario, spec.sample_id, run);
        detail::append_retrievals(run_logs[i], record, outcome);
      } catch (const std::exception& e) {
        // Per-task failure: record and continue with the rest of the run.
        TaskResult t;
        t.scenario_id = spec.scenario->scenario_id;
        t.sample_id = spec.sample_id;
        t.run_index = run;
        t.aborted = true;
        run_tasks[i] = std::move(t);
      }
    };

    if (config.jobs <= 1) {
      for (std::size_t i = 0; i < specs.size(); ++i) execute(i);
    } else {
      // Bounded pool; results land in order-indexed slots so the collected
      // vectors stay deterministic even though completion order is not.
      std::atomic<std::size_t> next{0};
      std::vector<std::thread> workers;
      int pool = std::min<int>(config.jobs, static_cast<int>(specs.size()));
      for (int w = 0; w < pool; ++w) {
        workers.emplace_back([&] {
          for (std::size_t i = next.fetch_add(1); i < specs.size(); i = next.fetch_add(1)) {
            execute(i);
          }
        });
      }
      for (std::thread& t : workers) t.join();
    }

    RunArtifacts artifacts;
    artifacts.run_index = run;
    artifacts.metrics = compute_metrics(run_tasks);
    std::vector<RetrievalLogEntry> run_log;
    for (auto& log : run_logs) {
      for (auto& entry : log) run_log.push_back(std::move(entry));
    }
    artifacts.retrieval = compute_retrieval_stats(run_log);
    artifacts.dynamic_memory_size = deps.memory.dynamic_size();
    if (!config.out_dir.empty()) {
      artifacts.snapshot_path =
          config.out_dir / ("memory_run" + std::to_string(run) + ".ndjson");
      deps.memory.snapshot(artifacts.snapshot_path);
    }

    for (auto& t : run_tasks) result.tasks.push_back(std::move(t));
    for (auto& entry : run_log) result.retrieval_log.push_back(std::move(entry));
    result.runs.push_back(std::move(artifacts));
  }

  result.buckets = compute_bucket_accuracy(result.retrieval_log);
  std::size_t n_scenes = corpus.size() * static_cast<std::size_t>(config.runs) *
                         static_cast<std::size_t>(config.samples_per_scenario);
  std::size_t n_success = 0;
  for (const TaskResult& t : result.tasks) {
    if (t.status == TaskStatus::FIXED || t.status == TaskStatus::SAFE_PASSTHROUGH) ++n_success;
  }
  result.accounting =
      compute_accounting(deps.ledger, config.run_config.price_per_1k, n_scenes, n_success);
  return result;
}

// -- Report rendering -----------------------------------------------------------

// "96.6 (up 2.9)" with the arrow matching the sign of (value - base).
inline std::string format_delta(double base, double value) {
  char buf[64];
  double delta = value - base;
  const char* arrow = delta > 0 ? "↑" : (delta < 0 ? "↓" : "→");
  std::snprintf(buf, sizeof(buf), "%.1f (%s%.1f)", value, arrow, std::abs(delta));
  return buf;
}

namespace detail {

inline std::string fmt(double v, int decimals = 1) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", decimals, v);
  return buf;
}

inline std::string fmt_opt(const std::optional<double>& v, int decimals = 1) {
  return v.has_value() ? fmt(*v, decimals) : std::string("-");
}

}  // namespace detail

inline nlohmann::json metrics_json(const RunMetrics& m) {
  nlohmann::json j{{"n_tasks", m.n_tasks},
                   {"eff_total", m.eff_total},
                   {"pass_count", m.pass_count},
                   {"sec_count", m.sec_count},
                   {"unres_count", m.unres_count}};
  j["sec_rate"] = m.sec_rate.has_value() ? nlohmann::json(*m.sec_rate) : nlohmann::json();
  j["pass_rate"] = m.pass_rate.has_value() ? nlohmann::json(*m.pass_rate) : nlohmann::json();
  return j;
}

inline nlohmann::json retrieval_json(const RetrievalStats& s) {
  nlohmann::json j{{"n_queries", s.n_queries}, {"n_docs", s.n_docs},  {"ard", s.ard},
                   {"rsr", s.rsr},             {"fur", s.fur}};
  j["asim"] = s.asim.has_value() ? nlohmann::json(*s.asim) : nlohmann::json();
  j["msim_max"] = s.msim_max.has_value() ? nlohmann::json(*s.msim_max) : nlohmann::json();
  j["msim_min"] = s.msim_min.has_value() ? nlohmann::json(*s.msim_min) : nlohmann::json();
  return j;
}

inline nlohmann::json buckets_json(const BucketAccuracy& b) {
  nlohmann::json rows = nlohmann::json::array();
  for (const Bucket& bucket : b.buckets) {
    nlohmann::json row{{"range", bucket.label}, {"docs", bucket.docs}};
    row["ratio_pct"] =
        bucket.ratio_pct.has_value() ? nlohmann::json(*bucket.ratio_pct) : nlohmann::json();
    row["fix_acc_pct"] =
        bucket.fix_acc_pct.has_value() ? nlohmann::json(*bucket.fix_acc_pct) : nlohmann::json();
    rows.push_back(std::move(row));
  }
  return nlohmann::json{{"total_docs", b.total_docs}, {"buckets", rows}};
}

inline nlohmann::json accounting_json(const AccountingReport& a) {
  nlohmann::json j{{"total_tokens", a.total_tokens},
                   {"total_calls", a.total_calls},
                   {"total_cost", a.total_cost},
                   {"stage_tokens", a.stage_tokens}};
  j["cost_per_scene"] =
      a.cost_per_scene.has_value() ? nlohmann::json(*a.cost_per_scene) : nlohmann::json();
  j["cost_per_success"] =
      a.cost_per_success.has_value() ? nlohmann::json(*a.cost_per_success) : nlohmann::json();
  return j;
}

// Writes report.ndjson (machine-readable, deterministic) and report.txt
// (rendered tables). Returns the paths written.
inline std::vector<std::filesystem::path> emit_report(const ExperimentResult& result,
                                                      const std::filesystem::path& out_dir) {
  std::filesystem::create_directories(out_dir);
  auto ndjson_path = out_dir / "report.ndjson";
  auto text_path = out_dir / "report.txt";

  {
    std::ofstream out(ndjson_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + ndjson_path.string());
    for (const RunArtifacts& run : result.runs) {
      nlohmann::json j{{"type", "run_metrics"}, {"run", run.run_index}};
      j["metrics"] = metrics_json(run.metrics);
      j["dynamic_memory_size"] = run.dynamic_memory_size;
      out << j.dump() << "\n";
      if (run.retrieval.has_value()) {
        nlohmann::json r{{"type", "retrieval_stats"}, {"run", run.run_index}};
        r["stats"] = retrieval_json(*run.retrieval);
        out << r.dump() << "\n";
      }
    }
    nlohmann::json b{{"type", "bucket_accuracy"}};
    b["data"] = buckets_json(result.buckets);
    out << b.dump() << "\n";
    nlohmann::json a{{"type", "accounting"}};
    a["data"] = accounting_json(result.accounting);
    out << a.dump() << "\n";
  }

  {
    std::ofstream out(text_path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + text_path.string());
    out << "== Run metrics ==\n";
    out << "run  tasks  eff  pass  sec  unres  pass_rate  sec_rate  sec_vs_r1  mem\n";
    const std::optional<double> base_sec =
        result.runs.empty() ? std::nullopt : result.runs.front().metrics.sec_rate;
    for (const RunArtifacts& run : result.runs) {
      const RunMetrics& m = run.metrics;
      std::string delta = "-";
      if (run.run_index > 1 && base_sec.has_value() && m.sec_rate.has_value()) {
        delta = format_delta(*base_sec, *m.sec_rate);
      }
      out << run.run_index << "    " << m.n_tasks << "      " << m.eff_total << "    "
          << m.pass_count << "     " << m.sec_count << "    " << m.unres_count << "      "
          << detail::fmt_opt(m.pass_rate, 2) << "      " << detail::fmt_opt(m.sec_rate, 2)
          << "     " << delta << "      " << run.dynamic_memory_size << "\n";
    }
    out << "\n== Retrieval evolution ==\n";
    out << "run  ARD   ASim   MSim   mSim   RSR    FUR\n";
    for (const RunArtifacts& run : result.runs) {
      if (!run.retrieval.has_value()) {
        out << run.run_index << "    (no retrievals)\n";
        continue;
      }
      const RetrievalStats& s = *run.retrieval;
      out << run.run_index << "    " << detail::fmt(s.ard, 1) << "   "
          << detail::fmt_opt(s.asim, 3) << "  " << detail::fmt_opt(s.msim_max, 3) << "  "
          << detail::fmt_opt(s.msim_min, 3) << "  " << detail::fmt(s.rsr, 0) << "%   "
          << detail::fmt(s.fur, 0) << "%  (rsr+fur=" << detail::fmt(s.rsr + s.fur, 0) << ")\n";
    }
    out << "\n== Similarity buckets ==\n";
    out << "range       docs  ratio    fix_acc\n";
    for (const Bucket& b : result.buckets.buckets) {
      out << b.label << std::string(12 - std::min<std::size_t>(11, b.label.size()), ' ')
          << b.docs << "     " << detail::fmt_opt(b.ratio_pct, 1) << "%    "
          << detail::fmt_opt(b.fix_acc_pct, 1) << "%\n";
    }
    out << "\n== Cost ==\n";
    out << "total_tokens     " << result.accounting.total_tokens << "\n";
    out << "total_calls      " << result.accounting.total_calls << "\n";
    out << "total_cost       " << detail::fmt(result.accounting.total_cost, 6) << "\n";
    out << "cost_per_scene   " << detail::fmt_opt(result.accounting.cost_per_scene, 8) << "\n";
    out << "cost_per_success " << detail::fmt_opt(result.accounting.cost_per_success, 8)
        << "\n";
    for (const auto& [stage, tokens] : result.accounting.stage_tokens) {
      out << "tokens[" << stage << "] " << tokens << "\n";
    }
  }
  return {ndjson_path, text_path};
}

}  // namespace reflex::bench
