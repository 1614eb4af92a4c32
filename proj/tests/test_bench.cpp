#include <doctest.h>

#include <fstream>
#include <memory>
#include <random>
#include <set>

#include "reflex/bench.hpp"
#include "test_util.hpp"

using namespace reflex;
using namespace reflex::bench;
using reflex_test::TempDir;

namespace {

const std::filesystem::path kRepoDir = REFLEX_REPO_DIR;

std::vector<RetrievalLogEntry> log_with(std::initializer_list<std::pair<int, bool>> queries) {
  // (item_count, fallback) pairs; similarities default to 0.9.
  std::vector<RetrievalLogEntry> log;
  int n = 0;
  for (const auto& [items, fallback] : queries) {
    RetrievalLogEntry e;
    e.task_id = "t" + std::to_string(++n);
    e.fallback_used = fallback;
    for (int i = 0; i < items; ++i) e.items.emplace_back("doc", 0.9);
    log.push_back(std::move(e));
  }
  return log;
}

struct ExperimentHarness {
  TempDir tmp;
  std::shared_ptr<HashedTokenEmbedder> embedder;
  MemoryStore memory;
  Verifier verifier;
  UsageLedger ledger;
  AuditLog audit;
  LogicalClock clock;

  explicit ExperimentHarness(const std::string& tag, std::filesystem::path audit_path = {})
      : tmp(tag),
        embedder(std::make_shared<HashedTokenEmbedder>(256)),
        memory(embedder),
        verifier(VerifierConfig::defaults(tmp.path() / "gate")),
        audit(audit_path.empty() ? AuditLog() : AuditLog(std::move(audit_path))) {}

  ExperimentDeps deps(Provider& provider) {
    return ExperimentDeps{memory, provider, verifier,
                          ledger, audit,    clock,
                          PromptTemplates::defaults()};
  }
};

}  // namespace

TEST_CASE("shipped corpus loads 21 scenarios over 8 weakness classes") {
  auto scenarios = load_corpus(kRepoDir / "corpus");
  CHECK(scenarios.size() == 21);
  std::set<std::string> cwes, ids;
  for (const auto& s : scenarios) {
    cwes.insert(s.cwe_id);
    ids.insert(s.scenario_id);
    CHECK_FALSE(s.prompt.empty());
  }
  CHECK(cwes.size() == 8);
  CHECK(ids.size() == 21);
}

TEST_CASE("empty corpus directory loads zero scenarios") {
  TempDir tmp("corpus_empty");
  auto scenarios = load_corpus(tmp.path());
  CHECK(scenarios.empty());
}

TEST_CASE("duplicate scenario ids are rejected") {
  TempDir tmp("corpus_dup");
  for (const char* dir : {"a_0-py", "b_0-py"}) {
    auto d = tmp.path() / dir;
    std::filesystem::create_directories(d);
    std::ofstream(d / "scenario.json")
        << R"({"scenario_id":"dup/0-py","cwe_id":"CWE-089","language":"python","split":"test"})";
    std::ofstream(d / "prompt.txt") << "x = 1\n";
  }
  CHECK_THROWS_AS(load_corpus(tmp.path()), CorpusError);
}

TEST_CASE("language must match the scenario id suffix") {
  TempDir tmp("corpus_lang");
  auto d = tmp.path() / "a_0-py";
  std::filesystem::create_directories(d);
  std::ofstream(d / "scenario.json")
      << R"({"scenario_id":"a/0-py","cwe_id":"CWE-089","language":"c","split":"test"})";
  std::ofstream(d / "prompt.txt") << "int x;\n";
  CHECK_THROWS_AS(load_corpus(tmp.path()), CorpusError);
}

TEST_CASE("metrics reproduce the hand-computed example") {
  // |T|=25, |C|=22, |P|=21, |S|=20.
  std::vector<TaskResult> tasks;
  for (int i = 0; i < 25; ++i) {
    TaskResult t;
    t.compiled = i < 22;
    t.tests_passed = t.compiled ? std::optional<bool>(i < 21) : std::nullopt;
    t.secure = i < 20;
    tasks.push_back(t);
  }
  auto m = compute_metrics(tasks);
  CHECK(m.n_tasks == 25);
  CHECK(m.eff_total == 22);
  CHECK(m.pass_count == 21);
  CHECK(m.sec_count == 20);
  CHECK(m.unres_count == 3);
  REQUIRE(m.pass_rate.has_value());
  REQUIRE(m.sec_rate.has_value());
  CHECK(std::abs(*m.pass_rate - 95.45) < 0.005);
  CHECK(std::abs(*m.sec_rate - 90.91) < 0.005);
}

TEST_CASE("all-compiling all-secure run yields 100 percent and zero unresolved") {
  std::vector<TaskResult> tasks(25);
  for (auto& t : tasks) {
    t.compiled = true;
    t.secure = true;
    t.tests_passed = true;
  }
  auto m = compute_metrics(tasks);
  CHECK(*m.sec_rate == doctest::Approx(100.0));
  CHECK(m.unres_count == 0);
}

TEST_CASE("rates are absent when nothing compiles") {
  std::vector<TaskResult> tasks(5);
  auto m = compute_metrics(tasks);
  CHECK(m.eff_total == 0);
  CHECK_FALSE(m.sec_rate.has_value());
  CHECK_FALSE(m.pass_rate.has_value());
  CHECK(m.unres_count == 5);
}

TEST_CASE("metric identities hold on randomized outcome fixtures") {
  std::mt19937_64 rng(77);
  for (int iter = 0; iter < 200; ++iter) {
    std::vector<TaskResult> tasks(rng() % 60);
    for (auto& t : tasks) {
      t.compiled = rng() % 4 != 0;
      t.secure = t.compiled && rng() % 3 != 0;
      if (t.compiled && rng() % 2 == 0) t.tests_passed = rng() % 5 != 0;
    }
    auto m = compute_metrics(tasks);
    CHECK(m.sec_count <= m.eff_total);
    CHECK(m.eff_total <= m.n_tasks);
    CHECK(m.pass_count <= m.eff_total);
    CHECK(m.unres_count == m.n_tasks - m.eff_total);
    if (m.eff_total > 0) {
      CHECK(std::abs(*m.sec_rate - 100.0 * m.sec_count / m.eff_total) < 1e-9);
      CHECK(std::abs(*m.pass_rate - 100.0 * m.pass_count / m.eff_total) < 1e-9);
    } else {
      CHECK_FALSE(m.sec_rate.has_value());
    }
  }
}

TEST_CASE("delta rendering matches the report layout") {
  CHECK(format_delta(93.7, 96.6) == "96.6 (↑2.9)");
  CHECK(format_delta(95.2, 94.9) == "94.9 (↓0.3)");
  CHECK(format_delta(50.0, 50.0) == "50.0 (→0.0)");
}

TEST_CASE("retrieval stats: four full queries at mean 0.970") {
  std::vector<RetrievalLogEntry> log;
  // 12 similarities arranged to average 0.970 exactly.
  double sims[4][3] = {{1.000, 0.980, 0.960},
                       {0.990, 0.970, 0.950},
                       {0.985, 0.970, 0.955},
                       {0.980, 0.970, 0.930}};
  for (auto& row : sims) {
    RetrievalLogEntry e;
    e.fallback_used = false;
    for (double s : row) e.items.emplace_back("d", s);
    log.push_back(std::move(e));
  }
  auto stats = compute_retrieval_stats(log);
  REQUIRE(stats.has_value());
  CHECK(stats->ard == doctest::Approx(3.0));
  CHECK(*stats->asim == doctest::Approx(0.970).epsilon(1e-9));
  CHECK(stats->rsr == doctest::Approx(100.0));
  CHECK(stats->fur == doctest::Approx(0.0));
  CHECK(stats->rsr + stats->fur == 100.0);
}

TEST_CASE("retrieval stats: 20 queries with 3 fallbacks") {
  auto log = log_with({{3, false}, {3, false}, {3, false}, {3, false}, {3, false},
                       {3, false}, {3, false}, {3, false}, {3, false}, {3, false},
                       {3, false}, {3, false}, {3, false}, {3, false}, {3, false},
                       {3, false}, {3, false}, {2, true},  {2, true},  {1, true}});
  auto stats = compute_retrieval_stats(log);
  REQUIRE(stats.has_value());
  CHECK(stats->rsr == doctest::Approx(85.0));
  CHECK(stats->fur == doctest::Approx(15.0));
  CHECK(stats->rsr + stats->fur == 100.0);
}

TEST_CASE("retrieval stats: singleton collapses all similarity fields") {
  std::vector<RetrievalLogEntry> log(1);
  log[0].items.emplace_back("d", 0.9);
  auto stats = compute_retrieval_stats(log);
  REQUIRE(stats.has_value());
  CHECK(stats->ard == doctest::Approx(1.0));
  CHECK(*stats->asim == doctest::Approx(0.9));
  CHECK(*stats->msim_max == doctest::Approx(0.9));
  CHECK(*stats->msim_min == doctest::Approx(0.9));
}

TEST_CASE("retrieval stats: empty log yields absent stats") {
  CHECK_FALSE(compute_retrieval_stats({}).has_value());
}

TEST_CASE("retrieval stats equal a brute-force recomputation") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> sim(0.0, 1.0);
  std::vector<RetrievalLogEntry> log;
  for (int q = 0; q < 100; ++q) {
    RetrievalLogEntry e;
    e.fallback_used = rng() % 3 == 0;
    std::size_t n = rng() % 4;
    for (std::size_t i = 0; i < n; ++i) e.items.emplace_back("d", sim(rng));
    log.push_back(std::move(e));
  }
  auto stats = compute_retrieval_stats(log);
  REQUIRE(stats.has_value());

  std::size_t docs = 0, ok = 0;
  double sum = 0, mx = -2, mn = 2;
  for (const auto& e : log) {
    if (!e.fallback_used) ++ok;
    for (const auto& [id, s] : e.items) {
      ++docs;
      sum += s;
      mx = std::max(mx, s);
      mn = std::min(mn, s);
    }
  }
  CHECK(stats->ard == doctest::Approx(double(docs) / log.size()).epsilon(1e-12));
  if (docs > 0) {
    CHECK(*stats->asim == doctest::Approx(sum / docs).epsilon(1e-12));
    CHECK(*stats->msim_max == doctest::Approx(mx));
    CHECK(*stats->msim_min == doctest::Approx(mn));
    CHECK(*stats->msim_min <= *stats->asim);
    CHECK(*stats->asim <= *stats->msim_max);
  }
  CHECK(stats->rsr == doctest::Approx(100.0 * ok / log.size()).epsilon(1e-12));
  CHECK(stats->rsr + stats->fur == 100.0);
}

TEST_CASE("bucket ratios reproduce the published distribution") {
  // Counts {187, 73, 32, 8} across the four ranges.
  std::vector<RetrievalLogEntry> log;
  auto add_docs = [&](int count, double s, bool fixed) {
    RetrievalLogEntry e;
    e.task_fixed = fixed;
    for (int i = 0; i < count; ++i) e.items.emplace_back("d", s);
    log.push_back(std::move(e));
  };
  add_docs(187, 0.97, true);
  add_docs(73, 0.90, true);
  add_docs(32, 0.80, true);
  add_docs(8, 0.50, true);

  auto b = compute_bucket_accuracy(log);
  CHECK(b.total_docs == 300);
  REQUIRE(b.buckets[0].ratio_pct.has_value());
  CHECK(std::abs(*b.buckets[0].ratio_pct - 62.3) <= 0.05);
  CHECK(std::abs(*b.buckets[1].ratio_pct - 24.3) <= 0.05);
  CHECK(std::abs(*b.buckets[2].ratio_pct - 10.7) <= 0.05);
  CHECK(std::abs(*b.buckets[3].ratio_pct - 2.7) <= 0.05);

  double ratio_sum = 0;
  for (const auto& bucket : b.buckets) ratio_sum += bucket.ratio_pct.value_or(0.0);
  CHECK(std::abs(ratio_sum - 100.0) <= 0.1);

  std::size_t count_sum = 0;
  for (const auto& bucket : b.buckets) count_sum += bucket.docs;
  CHECK(count_sum == b.total_docs);
}

TEST_CASE("bucket fix accuracy is the fixed-doc share per range") {
  std::vector<RetrievalLogEntry> log;
  for (int i = 0; i < 4; ++i) {
    RetrievalLogEntry e;
    e.task_fixed = i < 3;  // 3 of 4 docs belong to FIXED tasks
    e.items.emplace_back("d", 0.5);
    log.push_back(std::move(e));
  }
  auto b = compute_bucket_accuracy(log);
  REQUIRE(b.buckets[3].fix_acc_pct.has_value());
  CHECK(*b.buckets[3].fix_acc_pct == doctest::Approx(75.0));
  // Empty buckets report absent accuracy, not zero.
  CHECK_FALSE(b.buckets[0].fix_acc_pct.has_value());
}

TEST_CASE("every retrieved doc lands in exactly one bucket") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> sim(-0.1, 1.0);
  std::vector<RetrievalLogEntry> log(50);
  std::size_t total = 0;
  for (auto& e : log) {
    std::size_t n = rng() % 5;
    total += n;
    for (std::size_t i = 0; i < n; ++i) e.items.emplace_back("d", sim(rng));
  }
  auto b = compute_bucket_accuracy(log);
  std::size_t in_buckets = 0;
  for (const auto& bucket : b.buckets) in_buckets += bucket.docs;
  CHECK(in_buckets == total);
  CHECK(b.total_docs == total);
}

TEST_CASE("cost accounting reproduces the published totals") {
  UsageLedger ledger;
  // 44,762 total tokens split across stages.
  ledger.add(StageTag::SELF_CHECK, "a", ChatUsage{10000, 3000, 0});
  ledger.add(StageTag::REFLECTION, "a", ChatUsage{20000, 8000, 0});
  ledger.add(StageTag::VERIFY_ASSIST, "a", ChatUsage{3000, 762, 0});
  auto report = compute_accounting(ledger, 1.5e-3, 125, 118,
                                   {{"retrieval", 0.8},
                                    {"inference", 24.3},
                                    {"verification", 3.2},
                                    {"post", 0.5}});
  CHECK(report.total_tokens == 44762);
  CHECK(std::abs(report.total_cost - 6.71e-2) <= 1e-4);
  REQUIRE(report.cost_per_scene.has_value());
  CHECK(std::abs(*report.cost_per_scene - 5.37e-4) <= 1e-6);

  REQUIRE(report.stage_time_shares.size() == 4);
  CHECK(report.total_time_s == doctest::Approx(28.8));
  double expected[] = {2.8, 84.4, 11.1, 1.7};
  double share_sum = 0;
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(std::abs(report.stage_time_shares[i].share_pct - expected[i]) <= 0.1);
    share_sum += report.stage_time_shares[i].share_pct;
  }
  CHECK(std::abs(share_sum - 100.0) <= 0.1);
}

TEST_CASE("zero ledger yields zero cost") {
  UsageLedger ledger;
  auto report = compute_accounting(ledger, 1.5e-3, 0, 0);
  CHECK(report.total_cost == 0.0);
  CHECK_FALSE(report.cost_per_scene.has_value());
  CHECK_FALSE(report.cost_per_success.has_value());
}

TEST_CASE("grand total equals the sum of per-stage totals exactly") {
  std::mt19937_64 rng(9);
  UsageLedger ledger;
  for (int i = 0; i < 100; ++i) {
    StageTag stage = static_cast<StageTag>(rng() % 3);
    ledger.add(stage, "t", ChatUsage{static_cast<std::int64_t>(rng() % 1000),
                                     static_cast<std::int64_t>(rng() % 300), 0});
  }
  std::int64_t by_stage = 0;
  for (StageTag s : {StageTag::SELF_CHECK, StageTag::REFLECTION, StageTag::VERIFY_ASSIST}) {
    by_stage += ledger.stage_total(s).total_tokens();
  }
  CHECK(by_stage == ledger.grand_total().total_tokens());
}

TEST_CASE("reference experiment: counts, statuses and memory evolution") {
  auto corpus = load_corpus(kRepoDir / "fixtures" / "reference" / "corpus");
  REQUIRE(corpus.size() == 3);

  ExperimentHarness h("exp_ref");
  h.memory.load_static_seed(kRepoDir / "fixtures" / "reference" / "static_seed.ndjson");
  auto provider = MockProvider::from_file(kRepoDir / "fixtures" / "reference" / "script.ndjson");
  auto deps = h.deps(provider);

  ExperimentConfig config;
  config.runs = 2;
  config.samples_per_scenario = 1;
  config.run_config.max_rounds = 2;
  config.out_dir = h.tmp.path() / "out";

  auto result = run_experiment(corpus, deps, config);

  // R=2, N=1 on 3 scenarios: 6 task outcomes and 2 snapshots.
  CHECK(result.tasks.size() == 6);
  REQUIRE(result.runs.size() == 2);
  CHECK(std::filesystem::exists(result.runs[0].snapshot_path));
  CHECK(std::filesystem::exists(result.runs[1].snapshot_path));

  // Scenario contracts per run: alpha SAFE, beta one-round FIXED, gamma
  // exhaustion UNRESOLVED.
  for (const TaskResult& t : result.tasks) {
    if (t.scenario_id == "alpha/0-py") {
      CHECK(t.status == TaskStatus::SAFE_PASSTHROUGH);
      CHECK(t.rounds_used == 0);
    } else if (t.scenario_id == "beta/0-py") {
      CHECK(t.status == TaskStatus::FIXED);
      CHECK(t.rounds_used == 1);
    } else {
      CHECK(t.status == TaskStatus::UNRESOLVED);
      CHECK(t.rounds_used == 2);
    }
  }

  // Memory: run 1 deposits alpha's safe case + beta's fix; run 2 deduplicates.
  CHECK(result.runs[0].dynamic_memory_size == 2);
  CHECK(result.runs[1].dynamic_memory_size == 2);
  CHECK(result.runs[1].dynamic_memory_size >= result.runs[0].dynamic_memory_size);

  // The mock script is fully consumed: 6 tasks, deterministic call plan.
  CHECK(provider.remaining() == 0);
}

TEST_CASE("experiment rejects zero samples per scenario") {
  ExperimentHarness h("exp_n0");
  MockProvider provider({});
  auto deps = h.deps(provider);
  ExperimentConfig config;
  config.runs = 1;
  config.samples_per_scenario = 0;
  CHECK_THROWS_AS(run_experiment({}, deps, config), std::invalid_argument);
}

TEST_CASE("reports are byte-identical across two executions") {
  auto corpus = load_corpus(kRepoDir / "fixtures" / "reference" / "corpus");
  auto run_once = [&](const std::string& tag) {
    ExperimentHarness h(tag, std::filesystem::temp_directory_path() /
                                 ("reflex_" + tag + "_audit.ndjson"));
    h.memory.load_static_seed(kRepoDir / "fixtures" / "reference" / "static_seed.ndjson");
    auto provider =
        MockProvider::from_file(kRepoDir / "fixtures" / "reference" / "script.ndjson");
    auto deps = h.deps(provider);
    ExperimentConfig config;
    config.runs = 2;
    config.samples_per_scenario = 1;
    config.run_config.max_rounds = 2;
    config.out_dir = h.tmp.path() / "out";
    auto result = run_experiment(corpus, deps, config);
    auto paths = emit_report(result, config.out_dir);
    std::string report = bench::detail::read_file(paths[0]) + bench::detail::read_file(paths[1]);
    std::string audit = bench::detail::read_file(h.audit.path());
    std::filesystem::remove(h.audit.path());
    return std::make_pair(report, audit);
  };

  auto [report1, audit1] = run_once("det_a");
  auto [report2, audit2] = run_once("det_b");
  CHECK(report1 == report2);
  CHECK(audit1 == audit2);
  CHECK_FALSE(audit1.empty());
}

TEST_CASE("one-round budget still completes the reference suite") {
  // Single-round configuration: the repairable scenario is fixed in its one
  // round, exhaustion just arrives earlier, and the safe passthrough is
  // unaffected.
  auto corpus = load_corpus(kRepoDir / "fixtures" / "reference" / "corpus");
  ExperimentHarness h("exp_one_round");
  h.memory.load_static_seed(kRepoDir / "fixtures" / "reference" / "static_seed.ndjson");
  auto provider = MockProvider::from_file(kRepoDir / "fixtures" / "reference" / "script.ndjson");
  auto deps = h.deps(provider);

  ExperimentConfig config;
  config.runs = 2;
  config.samples_per_scenario = 1;
  config.run_config.max_rounds = 1;
  config.out_dir = h.tmp.path() / "out";

  auto result = run_experiment(corpus, deps, config);
  REQUIRE(result.tasks.size() == 6);
  for (const TaskResult& t : result.tasks) {
    CHECK(t.rounds_used <= 1);
    if (t.scenario_id == "alpha/0-py") {
      CHECK(t.status == TaskStatus::SAFE_PASSTHROUGH);
    } else if (t.scenario_id == "beta/0-py") {
      CHECK(t.status == TaskStatus::FIXED);
      CHECK(t.rounds_used == 1);
    } else {
      CHECK(t.status == TaskStatus::UNRESOLVED);
      CHECK(t.rounds_used == 1);
    }
  }
}
