// reflex — command-line surface for the reflection-gated repair engine.
//
// Subcommands:
//   check           one self-check verdict        exit 0 SAFE / 1 UNSAFE
//   fix             full repair loop on one file  exit 0 FIXED|SAFE / 2 UNRESOLVED
//   bench           multi-run experiment          exit 0 on success
//   audit-verify    hash-chain verification       exit 0 iff the chain verifies
//   replay          re-run a recorded audit log   exit 0 iff outcomes match
//   memory-inspect  tier sizes and recent entries
//
// Exit codes: 64 usage error, 78 configuration error, 70 runtime failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "reflex/bench.hpp"
#include "reflex/pipeline.hpp"
#include "reflex/provider_http.hpp"

namespace fs = std::filesystem;
using namespace reflex;

namespace {

constexpr int kExitUsage = 64;
constexpr int kExitConfig = 78;
constexpr int kExitRuntime = 70;

struct Settings {
  RunConfig run;
  std::string provider_kind = "mock";
  fs::path script;
  fs::path static_seed;
  fs::path memory_in;   // dynamic-tier snapshot to restore before running
  fs::path memory_out;  // snapshot to write after running
  fs::path audit_log;
  fs::path rules;
  fs::path self_check_template;
  fs::path reflection_template;
  std::string scan_command;
  bool allow_scan_downgrade = false;
  std::size_t embedder_dim = 256;
  int jobs = 1;
  std::uint64_t seed = 0;  // reserved: all mock-backed paths are already deterministic
  HttpProviderConfig http;
};

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void apply_config_file(Settings& s, const fs::path& path) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (j.contains("run")) s.run = j["run"].get<RunConfig>();
  s.provider_kind = j.value("provider", s.provider_kind);
  if (j.contains("script")) s.script = j["script"].get<std::string>();
  if (j.contains("static_seed")) s.static_seed = j["static_seed"].get<std::string>();
  if (j.contains("audit_log")) s.audit_log = j["audit_log"].get<std::string>();
  if (j.contains("rules")) s.rules = j["rules"].get<std::string>();
  if (j.contains("scan_command")) s.scan_command = j["scan_command"].get<std::string>();
  s.allow_scan_downgrade = j.value("allow_scan_downgrade", s.allow_scan_downgrade);
  s.embedder_dim = j.value("embedder_dim", s.embedder_dim);
  if (j.contains("templates")) {
    if (j["templates"].contains("self_check")) {
      s.self_check_template = j["templates"]["self_check"].get<std::string>();
    }
    if (j["templates"].contains("reflection")) {
      s.reflection_template = j["templates"]["reflection"].get<std::string>();
    }
  }
  if (j.contains("http")) {
    const auto& h = j["http"];
    s.http.base_url = h.value("base_url", s.http.base_url);
    s.http.path = h.value("path", s.http.path);
    s.http.auth_token_env = h.value("auth_token_env", s.http.auth_token_env);
    s.http.text_path = h.value("text_path", s.http.text_path);
    s.http.input_tokens_path = h.value("input_tokens_path", s.http.input_tokens_path);
    s.http.output_tokens_path = h.value("output_tokens_path", s.http.output_tokens_path);
    s.http.timeout_s = h.value("timeout_s", s.http.timeout_s);
    s.http.retries = h.value("retries", s.http.retries);
  }
}

std::unique_ptr<Provider> make_provider(const Settings& s) {
  if (s.provider_kind == "mock") {
    if (s.script.empty()) {
      throw ConfigError("mock provider requires --script (or config 'script')");
    }
    return std::make_unique<MockProvider>(load_script_file(s.script));
  }
  if (s.provider_kind == "http") {
    return std::make_unique<HttpProvider>(s.http);
  }
  throw ConfigError("unknown provider kind: " + s.provider_kind);
}

PromptTemplates make_templates(const Settings& s) {
  if (s.self_check_template.empty() && s.reflection_template.empty()) {
    return PromptTemplates::defaults();
  }
  return PromptTemplates::from_files(s.self_check_template, s.reflection_template);
}

VerifierConfig make_verifier_config(const Settings& s, const fs::path& workdir) {
  auto cfg = VerifierConfig::defaults(workdir);
  if (!s.rules.empty()) cfg.rules = load_rules(s.rules);
  cfg.scan_command = s.scan_command;
  cfg.allow_scan_downgrade = s.allow_scan_downgrade;
  return cfg;
}

struct Engine {
  std::shared_ptr<HashedTokenEmbedder> embedder;
  MemoryStore memory;
  std::unique_ptr<Provider> provider;
  Verifier verifier;
  UsageLedger ledger;
  AuditLog audit;
  LogicalClock clock;
  PromptTemplates templates;

  Engine(const Settings& s, const fs::path& workdir, const fs::path& audit_path)
      : embedder(std::make_shared<HashedTokenEmbedder>(s.embedder_dim)),
        memory(embedder),
        provider(make_provider(s)),
        verifier(make_verifier_config(s, workdir)),
        audit(audit_path.empty() ? AuditLog() : AuditLog(audit_path)),
        templates(make_templates(s)) {
    if (!s.static_seed.empty()) memory.load_static_seed(s.static_seed);
    if (!s.memory_in.empty()) memory.restore(s.memory_in);
  }

  PipelineDeps deps(const std::string& run_id) {
    return PipelineDeps{memory, *provider, verifier, ledger, audit, clock, templates, run_id};
  }
};

CodeSample sample_from_files(const fs::path& input, const std::string& language,
                             const fs::path& context_file, const std::string& cwe_hint) {
  CodeSample s;
  s.sample_id = input.filename().string();
  s.language = language_from_string(language);
  s.code = read_file(input);
  if (!context_file.empty()) s.file_context = read_file(context_file);
  s.cwe_hint = cwe_hint;
  return s;
}

// Scratch directory for gate subprocess runs; removed on destruction.
struct Workdir {
  fs::path path;
  explicit Workdir(const fs::path& base) {
    path = base / ("reflex_work_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~Workdir() {
    std::error_code ec;
    fs::remove_all(path, ec);
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"reflex: reflection-gated secure code repair"};
  app.require_subcommand(1);

  Settings settings;
  fs::path config_path;
  app.add_option("--config", config_path, "JSON config file");
  app.add_option("--provider", settings.provider_kind, "Provider backend: mock or http");
  app.add_option("--script", settings.script, "Mock provider script (ndjson)");
  app.add_option("--static-seed", settings.static_seed, "Static memory seed file");
  app.add_option("--memory-in", settings.memory_in, "Dynamic memory snapshot to restore");
  app.add_option("--memory-out", settings.memory_out, "Write dynamic memory snapshot here");
  app.add_option("--audit-log", settings.audit_log, "Audit log path");
  app.add_option("--rules", settings.rules, "Static-scan rule file (ndjson)");
  app.add_option("--k", settings.run.k, "Retrieval top-k");
  app.add_option("--k-min", settings.run.k_min, "Minimum dynamic recall");
  app.add_option("--theta", settings.run.theta_sim, "Similarity lower bound");
  app.add_option("--max-rounds", settings.run.max_rounds, "Reflection round budget");
  app.add_option("--model", settings.run.model_name, "Model name forwarded to the provider");
  app.add_option("--price-per-1k", settings.run.price_per_1k, "Price per 1000 tokens");
  app.add_option("--jobs", settings.jobs, "Parallel tasks within a run");
  app.add_option("--seed", settings.seed, "Seed for randomized backends (reserved)");

  std::string language = "python";
  fs::path input, context_file, out_file;
  std::string cwe_hint;

  auto* cmd_check = app.add_subcommand("check", "Run the self-check verdict on one file");
  cmd_check->add_option("--input", input, "Code file to check")->required();
  cmd_check->add_option("--language", language, "c, cpp or python");
  cmd_check->add_option("--context", context_file, "Optional context file");

  auto* cmd_fix = app.add_subcommand("fix", "Run the full repair loop on one file");
  cmd_fix->add_option("--input", input, "Code file to repair")->required();
  cmd_fix->add_option("--language", language, "c, cpp or python");
  cmd_fix->add_option("--context", context_file, "Optional context file");
  cmd_fix->add_option("--cwe-hint", cwe_hint, "Optional weakness hint, e.g. CWE-089");
  cmd_fix->add_option("--out", out_file, "Where to write the final code (default stdout)");

  fs::path corpus_dir, out_dir = "bench_out";
  int runs = 1, samples = 1;
  auto* cmd_bench = app.add_subcommand("bench", "Run a multi-run experiment over a corpus");
  cmd_bench->add_option("--corpus", corpus_dir, "Scenario corpus directory")->required();
  cmd_bench->add_option("--runs", runs, "Independent runs (memory persists across them)");
  cmd_bench->add_option("--samples", samples, "Samples per scenario per run");
  cmd_bench->add_option("--out-dir", out_dir, "Report and snapshot directory");

  fs::path verify_log;
  auto* cmd_verify = app.add_subcommand("audit-verify", "Verify an audit log hash chain");
  cmd_verify->add_option("--audit-log", verify_log, "Audit log to verify")->required();

  fs::path replay_log;
  auto* cmd_replay = app.add_subcommand("replay", "Replay a recorded run against a mock script");
  cmd_replay->add_option("--audit-log", replay_log, "Recorded audit log")->required();

  int top_n = 5;
  auto* cmd_inspect = app.add_subcommand("memory-inspect", "Print memory tiers and entries");
  cmd_inspect->add_option("--top", top_n, "How many recent entries to print");

  // Global flags may appear after the subcommand name.
  for (CLI::App* sub : app.get_subcommands({})) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitUsage;
  }

  try {
    if (!config_path.empty()) {
      // Command-line flags win over the config file.
      Settings file_settings;
      apply_config_file(file_settings, config_path);
      if (!app.count("--provider")) settings.provider_kind = file_settings.provider_kind;
      if (!app.count("--script")) settings.script = file_settings.script;
      if (!app.count("--static-seed")) settings.static_seed = file_settings.static_seed;
      if (!app.count("--audit-log")) settings.audit_log = file_settings.audit_log;
      if (!app.count("--rules")) settings.rules = file_settings.rules;
      if (!app.count("--k")) settings.run.k = file_settings.run.k;
      if (!app.count("--k-min")) settings.run.k_min = file_settings.run.k_min;
      if (!app.count("--theta")) settings.run.theta_sim = file_settings.run.theta_sim;
      if (!app.count("--max-rounds")) settings.run.max_rounds = file_settings.run.max_rounds;
      if (!app.count("--model")) settings.run.model_name = file_settings.run.model_name;
      if (!app.count("--price-per-1k")) {
        settings.run.price_per_1k = file_settings.run.price_per_1k;
      }
      settings.run.context_budget = file_settings.run.context_budget;
      settings.run.test_timeout_s = file_settings.run.test_timeout_s;
      settings.run.theta_model = file_settings.run.theta_model;
      settings.http = file_settings.http;
      settings.scan_command = file_settings.scan_command;
      settings.allow_scan_downgrade = file_settings.allow_scan_downgrade;
      settings.embedder_dim = file_settings.embedder_dim;
      settings.self_check_template = file_settings.self_check_template;
      settings.reflection_template = file_settings.reflection_template;
    }
    settings.run.validate();

    if (cmd_check->parsed()) {
      Workdir work(fs::temp_directory_path());
      Engine engine(settings, work.path, "");
      CodeSample sample = sample_from_files(input, language, context_file, cwe_hint);
      Verdict verdict = self_check(sample, *engine.provider, engine.templates,
                                   settings.run.model_name, &engine.ledger, sample.sample_id);
      std::cout << to_string(verdict.label)
                << (verdict.parse_clean ? "" : " (unparseable reply, fail-safe)") << "\n";
      return verdict.label == Verdict::Label::SAFE ? 0 : 1;
    }

    if (cmd_fix->parsed()) {
      fs::path audit_path = settings.audit_log.empty() ? "audit.ndjson" : settings.audit_log;
      Workdir work(fs::temp_directory_path());
      Engine engine(settings, work.path, audit_path);
      CodeSample sample = sample_from_files(input, language, context_file, cwe_hint);
      auto deps = engine.deps("cli");
      auto [outcome, record] = run_task(sample, settings.run, deps);
      if (!settings.memory_out.empty()) engine.memory.snapshot(settings.memory_out);
      if (!out_file.empty()) {
        std::ofstream out(out_file, std::ios::trunc | std::ios::binary);
        out << outcome.final_code;
      } else {
        std::cout << outcome.final_code;
      }
      std::cerr << "status=" << to_string(outcome.status)
                << " rounds=" << outcome.rounds_used << " audit=" << audit_path.string()
                << "\n";
      if (outcome.aborted) return kExitRuntime;
      return outcome.status == TaskStatus::UNRESOLVED ? 2 : 0;
    }

    if (cmd_bench->parsed()) {
      fs::create_directories(out_dir);
      fs::path audit_path =
          settings.audit_log.empty() ? out_dir / "audit.ndjson" : settings.audit_log;
      Workdir work(out_dir);
      Engine engine(settings, work.path, audit_path);
      auto corpus = bench::load_corpus(corpus_dir);

      bench::ExperimentDeps deps{engine.memory, *engine.provider, engine.verifier,
                                 engine.ledger, engine.audit,     engine.clock,
                                 engine.templates};
      bench::ExperimentConfig config;
      config.runs = runs;
      config.samples_per_scenario = samples;
      config.run_config = settings.run;
      config.out_dir = out_dir;
      config.jobs = settings.jobs;

      auto result = bench::run_experiment(corpus, deps, config);
      auto paths = bench::emit_report(result, out_dir);
      for (const auto& p : paths) std::cout << p.string() << "\n";
      std::cout << "audit: " << audit_path.string() << "\n";
      return 0;
    }

    if (cmd_verify->parsed()) {
      auto lines = AuditLog::load_lines(verify_log);
      auto verification = verify_audit_lines(lines);
      if (verification.ok) {
        std::cout << "chain ok: " << lines.size() << " records\n";
        return 0;
      }
      std::cout << "chain BROKEN at index " << verification.first_broken_index << ": "
                << verification.reason << "\n";
      return 1;
    }

    if (cmd_replay->parsed()) {
      if (settings.provider_kind != "mock") {
        throw ConfigError("replay requires the mock provider and the original --script");
      }
      auto records = AuditLog::load(replay_log);
      Workdir work(fs::temp_directory_path());
      Engine engine(settings, work.path, "");
      auto deps = engine.deps("replay");
      auto result = replay(records, deps);
      if (result.ok) {
        std::cout << "replay ok: " << result.records_compared << " records match\n";
        return 0;
      }
      std::cout << "replay DIVERGED at record " << result.first_divergence << " field '"
                << result.field << "': " << result.detail << "\n";
      return 1;
    }

    if (cmd_inspect->parsed()) {
      Settings s = settings;
      s.provider_kind = "mock";
      s.script = "";  // inspection never calls the provider
      auto embedder = std::make_shared<HashedTokenEmbedder>(s.embedder_dim);
      MemoryStore memory(embedder);
      if (!s.static_seed.empty()) memory.load_static_seed(s.static_seed);
      if (!s.memory_in.empty()) memory.restore(s.memory_in);
      std::cout << "dynamic entries: " << memory.dynamic_size() << "\n";
      std::cout << "static entries:  " << memory.static_size() << "\n";
      auto entries = memory.entries();
      int shown = 0;
      for (auto it = entries.rbegin(); it != entries.rend() && shown < top_n; ++it, ++shown) {
        std::cout << it->entry_id << "  " << to_string(it->tier) << "  "
                  << (it->cwe_tag.empty() ? "-" : it->cwe_tag) << "  verified="
                  << (it->verified ? "yes" : "no") << "  hash=" << it->content_hash.substr(0, 12)
                  << "\n";
      }
      return 0;
    }
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SeedFormatError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const SnapshotError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const RuleError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const bench::CorpusError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitUsage;
}
