#pragma once

// Verification gate: compile check, optional functional test execution, and
// a static security scan. The scan runs through an external-tool adapter when
// one is configured, otherwise through a built-in rule set; every report says
// which tool produced its findings.
//
// "Secure" means: compiled, and the scan produced zero findings.

#include <atomic>
#include <condition_variable>
#include <filesystem>
#include <mutex>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reflex/sample.hpp"
#include "reflex/subprocess.hpp"

namespace reflex {

struct Finding {
  std::string cwe_id;
  std::string message;
  int line = 0;

  bool operator==(const Finding&) const = default;
};

enum class ScanTool { EXTERNAL_ADAPTER, RULE_FALLBACK, NONE };

inline std::string to_string(ScanTool t) {
  switch (t) {
    case ScanTool::EXTERNAL_ADAPTER: return "EXTERNAL_ADAPTER";
    case ScanTool::RULE_FALLBACK: return "RULE_FALLBACK";
    case ScanTool::NONE: return "NONE";
  }
  return "NONE";
}

struct StageTimes {
  std::optional<double> compile_s;
  std::optional<double> test_s;
  std::optional<double> scan_s;
};

struct VerificationReport {
  bool compiled = false;
  std::string compile_diagnostics;
  std::optional<bool> tests_passed;  // absent when the scenario has no test spec
  std::string test_output;
  std::string test_failure_cause;  // "TIMEOUT", "EXIT_CODE", "PATTERN_MISMATCH"
  std::vector<Finding> findings;
  ScanTool tool = ScanTool::NONE;
  StageTimes stage_times;

  bool secure() const { return compiled && findings.empty(); }
};

// The 8 weakness classes the shipped corpus covers.
inline const std::vector<std::string>& known_cwe_classes() {
  static const std::vector<std::string> kClasses = {"CWE-089", "CWE-125", "CWE-079", "CWE-476",
                                                    "CWE-416", "CWE-022", "CWE-787", "CWE-190"};
  return kClasses;
}

struct RuleSpec {
  std::string rule_id;
  std::string cwe_id;
  std::string language;  // "c", "cpp", "python" or "*"
  std::string pattern;   // ECMAScript regex, applied line by line
  std::string message;
};

class RuleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class AdapterError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline void validate_rule(const RuleSpec& rule) {
  bool known = false;
  for (const std::string& cwe : known_cwe_classes()) {
    if (rule.cwe_id == cwe) {
      known = true;
      break;
    }
  }
  if (!known) throw RuleError("rule " + rule.rule_id + ": unknown cwe_id " + rule.cwe_id);
  try {
    std::regex re(rule.pattern);
  } catch (const std::regex_error& e) {
    throw RuleError("rule " + rule.rule_id + ": pattern does not compile: " + e.what());
  }
}

// Built-in fallback rules. Deliberately narrow, line-local lexical signals;
// classes without a reliable lexical signal are left to the external adapter.
inline std::vector<RuleSpec> default_rules() {
  return {
      {"R-089-CONCAT", "CWE-089", "python", R"(execute\s*\([^,)]*(\+|\bf["']))",
       "SQL statement assembled by concatenation or f-string passed to execute()"},
      {"R-089-FORMAT", "CWE-089", "python", R"(execute\s*\([^,)]*\.format\s*\()",
       "SQL statement assembled with str.format() passed to execute()"},
      {"R-022-CONCAT", "CWE-022", "python", R"(open\s*\([^,)]*\+)",
       "file path assembled by string concatenation"},
      {"R-022-JOIN", "CWE-022", "python", R"(os\.path\.join\s*\([^)]*(request\.|input\())",
       "path join over untrusted input without normalization"},
      {"R-079-AUTOESCAPE", "CWE-079", "python", R"(autoescape\s*=\s*False)",
       "template environment created with autoescape disabled"},
      {"R-079-CONCAT", "CWE-079", "python", R"(["']\s*\+\s*request\.(args|form))",
       "HTML response assembled from raw request input"},
      {"R-787-UNBOUNDED", "CWE-787", "c", R"(\b(strcpy|strcat|sprintf|gets)\s*\()",
       "unbounded write into a fixed-size buffer"},
      {"R-190-BIGINC", "CWE-190", "c", R"(\+=\s*\d{8,})",
       "large constant increment may overflow a 32-bit integer"},
  };
}

// Rule file: line-delimited JSON records with RuleSpec field names.
inline std::vector<RuleSpec> load_rules(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw RuleError("cannot open rules file: " + path.string());
  std::vector<RuleSpec> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw RuleError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    RuleSpec rule;
    rule.rule_id = j.value("rule_id", "rule-" + std::to_string(line_no));
    rule.cwe_id = j.at("cwe_id").get<std::string>();
    rule.language = j.value("language", "*");
    rule.pattern = j.at("pattern").get<std::string>();
    rule.message = j.value("message", std::string{});
    validate_rule(rule);
    rules.push_back(std::move(rule));
  }
  return rules;
}

struct TestSpec {
  std::string command;  // {file} placeholder expands to the candidate path
  std::vector<std::string> expected_patterns;
  double timeout_s = 10.0;
};

struct VerifierConfig {
  std::map<std::string, std::string> compile_commands;  // language -> template
  std::string scan_command;  // external adapter template; empty = not configured
  bool allow_scan_downgrade = false;
  std::vector<RuleSpec> rules = default_rules();
  std::filesystem::path workdir;
  double compile_timeout_s = 20.0;
  double scan_timeout_s = 30.0;
  int max_parallel_adapters = 0;  // 0 = unbounded

  static VerifierConfig defaults(std::filesystem::path workdir) {
    VerifierConfig cfg;
    cfg.workdir = std::move(workdir);
    cfg.compile_commands = {
        {"python", "python3 -m py_compile {file}"},
        {"c", "cc -fsyntax-only -x c {file}"},
        {"cpp", "c++ -fsyntax-only -x c++ {file}"},
    };
    return cfg;
  }
};

namespace detail {

inline std::string substitute(std::string templ, std::string_view key, const std::string& value) {
  std::size_t pos;
  while ((pos = templ.find(key)) != std::string::npos) {
    templ.replace(pos, key.size(), value);
  }
  return templ;
}

// Process-wide cap on concurrently running adapter subprocesses.
class AdapterGate {
 public:
  explicit AdapterGate(int limit) : limit_(limit) {}

  struct Token {
    AdapterGate* gate;
    ~Token() {
      if (gate) gate->release();
    }
  };

  Token acquire() {
    if (limit_ <= 0) return Token{nullptr};
    std::unique_lock lock(mutex_);
    cv_.wait(lock, [&] { return active_ < limit_; });
    ++active_;
    return Token{this};
  }

 private:
  void release() {
    {
      std::lock_guard lock(mutex_);
      --active_;
    }
    cv_.notify_one();
  }

  int limit_;
  int active_ = 0;
  std::mutex mutex_;
  std::condition_variable cv_;
};

}  // namespace detail

class Verifier {
 public:
  explicit Verifier(VerifierConfig config)
      : config_(std::move(config)), adapter_gate_(config_.max_parallel_adapters) {
    if (config_.workdir.empty()) {
      throw std::invalid_argument("Verifier: workdir must be set");
    }
    for (const RuleSpec& rule : config_.rules) validate_rule(rule);
    std::filesystem::create_directories(config_.workdir);
  }

  const VerifierConfig& config() const { return config_; }

  std::pair<bool, std::string> compile_check(const std::string& code, Language language) const {
    auto it = config_.compile_commands.find(to_string(language));
    if (it == config_.compile_commands.end()) {
      throw AdapterError("no compile adapter configured for language " + to_string(language));
    }
    auto dir = fresh_dir("compile");
    auto file = write_candidate(dir, code, language);
    auto token = adapter_gate_.acquire();
    ExecResult res =
        run_command(detail::substitute(it->second, "{file}", file.string()), dir,
                    config_.compile_timeout_s);
    if (res.exit_code == 126 || res.exit_code == 127) {
      throw AdapterError("compile adapter failed to launch (exit " +
                         std::to_string(res.exit_code) + "): " + it->second);
    }
    if (res.timed_out) return {false, "compile adapter timed out"};
    return {res.exit_code == 0, res.output};
  }

  struct TestOutcome {
    bool passed = false;
    std::string output;
    std::string failure_cause;
  };

  TestOutcome run_tests(const std::string& code, Language language, const TestSpec& spec) const {
    auto dir = fresh_dir("test");
    auto file = write_candidate(dir, code, language);
    auto token = adapter_gate_.acquire();
    ExecResult res =
        run_command(detail::substitute(spec.command, "{file}", file.string()), dir,
                    spec.timeout_s);
    TestOutcome out;
    out.output = res.output;
    if (res.timed_out) {
      out.failure_cause = "TIMEOUT";
      return out;
    }
    if (res.exit_code != 0) {
      out.failure_cause = "EXIT_CODE";
      return out;
    }
    for (const std::string& pattern : spec.expected_patterns) {
      if (res.output.find(pattern) == std::string::npos) {
        out.failure_cause = "PATTERN_MISMATCH";
        return out;
      }
    }
    out.passed = true;
    return out;
  }

  std::pair<std::vector<Finding>, ScanTool> static_scan(const std::string& code,
                                                        Language language) const {
    if (!config_.scan_command.empty()) {
      try {
        return {adapter_scan(code, language), ScanTool::EXTERNAL_ADAPTER};
      } catch (const AdapterError&) {
        if (!config_.allow_scan_downgrade) throw;
        // Explicitly permitted downgrade to the rule fallback.
      }
    }
    if (config_.rules.empty()) return {{}, ScanTool::NONE};
    return {rule_scan(code, language), ScanTool::RULE_FALLBACK};
  }

  // compile -> tests -> scan, short-circuiting on compile failure.
  VerificationReport gate(const std::string& code, Language language,
                          const std::optional<TestSpec>& test_spec) const {
    VerificationReport report;

    auto t0 = std::chrono::steady_clock::now();
    auto [compiled, diagnostics] = compile_check(code, language);
    report.compiled = compiled;
    report.compile_diagnostics = diagnostics;
    report.stage_times.compile_s = elapsed_since(t0);
    if (!report.compiled) return report;

    if (test_spec.has_value()) {
      auto t1 = std::chrono::steady_clock::now();
      TestOutcome outcome = run_tests(code, language, *test_spec);
      report.tests_passed = outcome.passed;
      report.test_output = outcome.output;
      report.test_failure_cause = outcome.failure_cause;
      report.stage_times.test_s = elapsed_since(t1);
    }

    auto t2 = std::chrono::steady_clock::now();
    auto [findings, tool] = static_scan(code, language);
    report.findings = std::move(findings);
    report.tool = tool;
    report.stage_times.scan_s = elapsed_since(t2);
    return report;
  }

 private:
  static double elapsed_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  }

  std::filesystem::path fresh_dir(const char* stage) const {
    auto dir = config_.workdir / (std::string(stage) + "_" + std::to_string(next_dir_++));
    std::filesystem::create_directories(dir);
    return dir;
  }

  static std::filesystem::path write_candidate(const std::filesystem::path& dir,
                                               const std::string& code, Language language) {
    auto file = dir / ("candidate" + file_extension(language));
    std::ofstream out(file, std::ios::trunc | std::ios::binary);
    out << code;
    out.close();
    return file;
  }

  std::vector<Finding> adapter_scan(const std::string& code, Language language) const {
    auto dir = fresh_dir("scan");
    auto file = write_candidate(dir, code, language);
    auto findings_file = dir / "findings.ndjson";
    std::string cmd = detail::substitute(config_.scan_command, "{file}", file.string());
    cmd = detail::substitute(cmd, "{out}", findings_file.string());
    auto token = adapter_gate_.acquire();
    ExecResult res = run_command(cmd, dir, config_.scan_timeout_s);
    if (res.timed_out) throw AdapterError("scan adapter timed out");
    // Exit 0 = clean run, 1 = ran and reported findings; anything else is a
    // crash and is never silently downgraded here.
    if (res.exit_code != 0 && res.exit_code != 1) {
      throw AdapterError("scan adapter crashed (exit " + std::to_string(res.exit_code) +
                         "): " + res.output);
    }
    std::vector<Finding> findings;
    std::ifstream in(findings_file);
    if (in) {
      std::string line;
      std::size_t line_no = 0;
      while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
          nlohmann::json j = nlohmann::json::parse(line);
          findings.push_back(Finding{j.at("cwe_id").get<std::string>(),
                                     j.value("message", std::string{}),
                                     j.value("line", 0)});
        } catch (const nlohmann::json::exception& e) {
          throw AdapterError("findings file line " + std::to_string(line_no) + ": " + e.what());
        }
      }
    }
    return findings;
  }

  std::vector<Finding> rule_scan(const std::string& code, Language language) const {
    std::vector<Finding> findings;
    std::string lang = to_string(language);
    std::vector<std::pair<const RuleSpec*, std::regex>> active;
    for (const RuleSpec& rule : config_.rules) {
      if (rule.language != "*" && rule.language != lang) continue;
      active.emplace_back(&rule, std::regex(rule.pattern));
    }
    std::istringstream lines(code);
    std::string line;
    int line_no = 0;
    while (std::getline(lines, line)) {
      ++line_no;
      for (const auto& [rule, re] : active) {
        if (std::regex_search(line, re)) {
          findings.push_back(Finding{rule->cwe_id, rule->message, line_no});
        }
      }
    }
    return findings;
  }

  VerifierConfig config_;
  mutable std::atomic<std::uint64_t> next_dir_{0};
  mutable detail::AdapterGate adapter_gate_;
};

}  // namespace reflex
