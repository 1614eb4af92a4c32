#pragma once

// The closed control loop over one code sample:
//
//   self-check -> (SAFE) confirm with the gate, deposit, pass through
//              -> (UNSAFE) retrieve evidence, reflect, extract, gate,
//                 repeat up to max_rounds; first secure candidate wins
//                 and is deposited back into the dynamic memory.
//
// Every task appends one hash-chained audit record carrying the full
// transcript: verdict, per-round evidence ids and similarities, prompts and
// responses verbatim, gate summaries, token usage, and the outcome. The
// record embeds the sample and the decision-relevant config, so a recorded
// run can be replayed against the same mock script and compared field by
// field. Timestamps are logical (a per-run counter), never wall clock, which
// keeps audit logs byte-identical across executions.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reflex/memory.hpp"
#include "reflex/prompt.hpp"
#include "reflex/provider.hpp"
#include "reflex/sample.hpp"
#include "reflex/self_check.hpp"
#include "reflex/sha256.hpp"
#include "reflex/verifier.hpp"

namespace reflex {

struct RunConfig {
  std::size_t k = 3;
  std::size_t k_min = 1;
  double theta_sim = 0.70;
  int max_rounds = 3;
  std::string model_name = "mock-model";
  double price_per_1k = 1.5e-3;
  std::size_t context_budget = 16000;
  double test_timeout_s = 10.0;
  std::map<std::string, std::string> theta_model;  // opaque prompting parameters

  void validate() const {
    if (max_rounds < 1) throw std::invalid_argument("config: max_rounds must be >= 1");
    if (theta_sim < 0.0 || theta_sim > 1.0) {
      throw std::invalid_argument("config: theta_sim must lie in [0, 1]");
    }
    if (k < 1 || k_min < 1 || k_min > k) {
      throw std::invalid_argument("config: need 1 <= k_min <= k");
    }
  }
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"k", c.k},
                     {"k_min", c.k_min},
                     {"theta_sim", c.theta_sim},
                     {"max_rounds", c.max_rounds},
                     {"model_name", c.model_name},
                     {"price_per_1k", c.price_per_1k},
                     {"context_budget", c.context_budget},
                     {"test_timeout_s", c.test_timeout_s},
                     {"theta_model", c.theta_model}};
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  c.k = j.value("k", std::size_t{3});
  c.k_min = j.value("k_min", std::size_t{1});
  c.theta_sim = j.value("theta_sim", 0.70);
  c.max_rounds = j.value("max_rounds", 3);
  c.model_name = j.value("model_name", std::string{"mock-model"});
  c.price_per_1k = j.value("price_per_1k", 1.5e-3);
  c.context_budget = j.value("context_budget", std::size_t{16000});
  c.test_timeout_s = j.value("test_timeout_s", 10.0);
  c.theta_model = j.value("theta_model", std::map<std::string, std::string>{});
}

inline void to_json(nlohmann::json& j, const CodeSample& s) {
  j = nlohmann::json{{"sample_id", s.sample_id},
                     {"language", to_string(s.language)},
                     {"code", s.code},
                     {"file_context", s.file_context},
                     {"function_context", s.function_context},
                     {"cwe_hint", s.cwe_hint}};
}

inline void from_json(const nlohmann::json& j, CodeSample& s) {
  s.sample_id = j.at("sample_id").get<std::string>();
  s.language = language_from_string(j.at("language").get<std::string>());
  s.code = j.at("code").get<std::string>();
  s.file_context = j.value("file_context", std::string{});
  s.function_context = j.value("function_context", std::string{});
  s.cwe_hint = j.value("cwe_hint", std::string{});
}

enum class TaskStatus { SAFE_PASSTHROUGH, FIXED, UNRESOLVED };

inline std::string to_string(TaskStatus s) {
  switch (s) {
    case TaskStatus::SAFE_PASSTHROUGH: return "SAFE_PASSTHROUGH";
    case TaskStatus::FIXED: return "FIXED";
    case TaskStatus::UNRESOLVED: return "UNRESOLVED";
  }
  return "UNRESOLVED";
}

struct TaskOutcome {
  TaskStatus status = TaskStatus::UNRESOLVED;
  std::string final_code;
  int rounds_used = 0;
  std::optional<VerificationReport> verification;
  std::optional<EvidenceSet> evidence;  // evidence used by the deciding round
  bool aborted = false;
  std::string abort_reason;
  std::string task_id;             // equals the audit record id
  std::string deposited_entry_id;  // empty when nothing was deposited
};

// -- Audit chain -----------------------------------------------------------

struct AuditRecord {
  nlohmann::json doc;

  std::string record_id() const { return doc.value("record_id", std::string{}); }
  std::string prev_hash() const { return doc.value("prev_hash", std::string{}); }
  std::string this_hash() const { return doc.value("this_hash", std::string{}); }
};

// Canonical digest: every field except this_hash, serialized with sorted
// keys and no whitespace.
inline std::string audit_record_hash(const nlohmann::json& record) {
  nlohmann::json copy = record;
  copy.erase("this_hash");
  return sha256_hex(copy.dump());
}

class AuditLog {
 public:
  explicit AuditLog(std::filesystem::path path) : path_(std::move(path)) {
    if (!path_.empty()) {
      if (path_.has_parent_path()) std::filesystem::create_directories(path_.parent_path());
      out_.open(path_, std::ios::trunc);
      if (!out_) throw std::runtime_error("cannot open audit log: " + path_.string());
    }
  }

  // In-memory only (tests, replay).
  AuditLog() = default;

  AuditRecord append(nlohmann::json fields) {
    std::lock_guard lock(mutex_);
    std::uint64_t seq = records_.size() + 1;
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%06llu", static_cast<unsigned long long>(seq));
    fields["record_id"] = "rec-" + std::string(buf);
    fields["seq"] = seq;
    fields["prev_hash"] = records_.empty() ? std::string(kZeroDigest)
                                           : records_.back().this_hash();
    fields["this_hash"] = audit_record_hash(fields);
    AuditRecord record{std::move(fields)};
    if (out_.is_open()) {
      out_ << record.doc.dump() << "\n";
      out_.flush();
    }
    records_.push_back(record);
    return records_.back();
  }

  std::vector<AuditRecord> records() const {
    std::lock_guard lock(mutex_);
    return records_;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
  }

  const std::filesystem::path& path() const { return path_; }

  static std::vector<std::string> load_lines(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open audit log: " + path.string());
    std::vector<std::string> lines;
    std::string line;
    while (std::getline(in, line)) {
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      lines.push_back(line);
    }
    return lines;
  }

  static std::vector<nlohmann::json> load(const std::filesystem::path& path) {
    std::vector<nlohmann::json> records;
    for (const std::string& line : load_lines(path)) {
      try {
        records.push_back(nlohmann::json::parse(line));
      } catch (const nlohmann::json::exception&) {
        // An unparseable line is still a record slot; chain verification
        // reports it as broken at this index.
        records.push_back(nlohmann::json());
      }
    }
    return records;
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  mutable std::mutex mutex_;
  std::vector<AuditRecord> records_;
};

struct ChainVerification {
  bool ok = true;
  std::size_t first_broken_index = 0;  // meaningful only when !ok
  std::string reason;
};

inline ChainVerification verify_audit_chain(const std::vector<nlohmann::json>& records) {
  std::string expected_prev{kZeroDigest};
  for (std::size_t i = 0; i < records.size(); ++i) {
    const nlohmann::json& rec = records[i];
    if (!rec.is_object() || !rec.contains("this_hash") || !rec.contains("prev_hash")) {
      return {false, i, "record is not a well-formed audit object"};
    }
    if (rec["prev_hash"].get<std::string>() != expected_prev) {
      return {false, i, "prev_hash does not match predecessor"};
    }
    if (audit_record_hash(rec) != rec["this_hash"].get<std::string>()) {
      return {false, i, "this_hash does not recompute"};
    }
    expected_prev = rec["this_hash"].get<std::string>();
  }
  return {};
}

// File-level verification over raw log lines. On top of the chain checks this
// enforces canonical form (the line must equal the dump of its own parse), so
// any single-byte edit is caught even when it parses back to the same value —
// e.g. flipping the last digit of a shortest-round-trip double.
inline ChainVerification verify_audit_lines(const std::vector<std::string>& lines) {
  std::string expected_prev{kZeroDigest};
  for (std::size_t i = 0; i < lines.size(); ++i) {
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(lines[i]);
    } catch (const nlohmann::json::exception&) {
      return {false, i, "record is not parseable JSON"};
    }
    if (!rec.is_object() || !rec.contains("this_hash") || !rec.contains("prev_hash")) {
      return {false, i, "record is not a well-formed audit object"};
    }
    if (rec.dump() != lines[i]) {
      return {false, i, "record is not in canonical serialized form"};
    }
    if (rec["prev_hash"].get<std::string>() != expected_prev) {
      return {false, i, "prev_hash does not match predecessor"};
    }
    if (audit_record_hash(rec) != rec["this_hash"].get<std::string>()) {
      return {false, i, "this_hash does not recompute"};
    }
    expected_prev = rec["this_hash"].get<std::string>();
  }
  return {};
}

// -- Pipeline ----------------------------------------------------------------

// Logical clock for created_at fields; deterministic across executions.
class LogicalClock {
 public:
  std::int64_t tick() { return next_++; }

 private:
  std::atomic<std::int64_t> next_{1};
};

struct PipelineDeps {
  MemoryStore& memory;
  Provider& provider;
  Verifier& verifier;
  UsageLedger& ledger;
  AuditLog& audit;
  LogicalClock& clock;
  PromptTemplates templates = PromptTemplates::defaults();
  std::string run_id;  // stamped into deposited entries as source_run
};

namespace detail {

inline nlohmann::json usage_summary_json(const UsageLedger& ledger, const std::string& task_id) {
  nlohmann::json usage = nlohmann::json::object();
  std::int64_t total_in = 0, total_out = 0, total_calls = 0;
  for (StageTag stage :
       {StageTag::SELF_CHECK, StageTag::REFLECTION, StageTag::VERIFY_ASSIST}) {
    std::int64_t in = 0, out = 0, calls = 0;
    for (const UsageRecord& r : ledger.task_slice(task_id)) {
      if (r.stage != stage) continue;
      in += r.usage.input_tokens;
      out += r.usage.output_tokens;
      ++calls;
    }
    if (calls == 0) continue;
    usage[to_string(stage)] = {{"input_tokens", in}, {"output_tokens", out}, {"calls", calls}};
    total_in += in;
    total_out += out;
    total_calls += calls;
  }
  usage["total"] = {{"input_tokens", total_in},
                    {"output_tokens", total_out},
                    {"calls", total_calls}};
  return usage;
}

inline nlohmann::json gate_summary_json(const VerificationReport& report) {
  nlohmann::json findings = nlohmann::json::array();
  for (const Finding& f : report.findings) {
    findings.push_back({{"cwe_id", f.cwe_id}, {"message", f.message}, {"line", f.line}});
  }
  nlohmann::json j{{"compiled", report.compiled},
                   {"findings", findings},
                   {"tool", to_string(report.tool)},
                   {"secure", report.secure()}};
  if (report.tests_passed.has_value()) {
    j["tests_passed"] = *report.tests_passed;
    if (!*report.tests_passed) j["test_failure_cause"] = report.test_failure_cause;
  }
  return j;
}

inline nlohmann::json evidence_json(const EvidenceSet& ev) {
  nlohmann::json items = nlohmann::json::array();
  for (const EvidenceItem& item : ev.items) {
    items.push_back({{"entry_id", item.entry.entry_id}, {"similarity", item.similarity}});
  }
  return nlohmann::json{{"items", items},
                        {"fallback_used", ev.fallback_used},
                        {"dynamic_hit_count", ev.dynamic_hit_count},
                        {"max_dynamic_sim", ev.max_dynamic_sim}};
}

inline nlohmann::json outcome_json(const TaskOutcome& outcome) {
  return nlohmann::json{
      {"status", outcome.aborted ? "ABORTED" : to_string(outcome.status)},
      {"rounds_used", outcome.rounds_used},
      {"final_code", outcome.final_code},
      {"deposited_entry_id", outcome.deposited_entry_id},
      {"abort_reason", outcome.abort_reason}};
}

inline nlohmann::json test_spec_json(const std::optional<TestSpec>& spec) {
  if (!spec.has_value()) return nullptr;
  return nlohmann::json{{"command", spec->command},
                        {"expected_patterns", spec->expected_patterns},
                        {"timeout_s", spec->timeout_s}};
}

inline std::optional<TestSpec> test_spec_from_json(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  TestSpec spec;
  spec.command = j.at("command").get<std::string>();
  spec.expected_patterns = j.value("expected_patterns", std::vector<std::string>{});
  spec.timeout_s = j.value("timeout_s", 10.0);
  return spec;
}

}  // namespace detail

// Runs one task through the full loop and appends its audit record.
inline std::pair<TaskOutcome, AuditRecord> run_task(
    const CodeSample& sample, const RunConfig& config, PipelineDeps& deps,
    const std::optional<TestSpec>& test_spec = std::nullopt) {
  config.validate();
  if (sample.code.empty()) throw std::invalid_argument("run_task: sample code is empty");

  PromptTemplates templates = deps.templates;
  templates.context_budget = config.context_budget;

  // The ledger slice for this task is keyed by a unique task id derived from
  // the audit sequence about to be claimed.
  std::string task_id = sample.sample_id + "@" + std::to_string(deps.clock.tick());

  TaskOutcome outcome;
  outcome.task_id = task_id;
  outcome.final_code = sample.code;

  nlohmann::json rounds = nlohmann::json::array();
  nlohmann::json verdict_json;
  nlohmann::json passthrough_gate = nullptr;

  try {
    Verdict verdict =
        self_check(sample, deps.provider, templates, config.model_name, &deps.ledger, task_id);
    verdict_json = {{"label", to_string(verdict.label)},
                    {"raw_response", verdict.raw_response},
                    {"parse_clean", verdict.parse_clean}};

    if (verdict.label == Verdict::Label::SAFE) {
      // Confirming gate keeps the deposition-soundness invariant: only code
      // that actually verifies lands in the dynamic tier.
      outcome.status = TaskStatus::SAFE_PASSTHROUGH;
      outcome.rounds_used = 0;
      VerificationReport report = deps.verifier.gate(sample.code, sample.language, test_spec);
      passthrough_gate = detail::gate_summary_json(report);
      outcome.verification = report;
      if (report.secure()) {
        MemoryEntry entry;
        entry.tier = Tier::DYNAMIC;
        entry.problem_code = sample.code;
        entry.context = sample.joined_context();
        entry.diagnosis = "";  // retained safe case
        entry.fix_code = sample.code;
        entry.cwe_tag = sample.cwe_hint;
        entry.verified = true;
        entry.created_at = deps.clock.tick();
        entry.source_run = deps.run_id;
        auto deposited = deps.memory.deposit(std::move(entry));
        if (deposited.result == DepositResult::INSERTED) {
          outcome.deposited_entry_id = deposited.entry_id;
        }
      }
    } else {
      std::vector<ReflectionRound> history;
      for (int round_index = 1; round_index <= config.max_rounds; ++round_index) {
        EvidenceSet evidence = deps.memory.retrieve(
            {sample.code, sample.joined_context(), config.k, config.k_min, config.theta_sim});

        ReflectionRound round;
        round.round_index = round_index;
        round.prompt_text = render_reflection(sample, evidence, history, templates);

        ChatRequest request;
        request.messages.push_back(ChatMessage{"user", round.prompt_text});
        request.model_name = config.model_name;
        request.stage_tag = StageTag::REFLECTION;
        Completion completion = deps.provider.complete(request);
        deps.ledger.add(StageTag::REFLECTION, task_id, completion.usage);
        round.response_text = completion.text;

        Extraction extraction = extract_candidate(round.response_text);
        round.extracted_code = extraction.code;
        round.extraction_clean = extraction.clean;

        nlohmann::json round_json{{"round_index", round.round_index},
                                  {"evidence", detail::evidence_json(evidence)},
                                  {"prompt_text", round.prompt_text},
                                  {"response_text", round.response_text},
                                  {"extraction_clean", round.extraction_clean}};

        outcome.rounds_used = round_index;
        outcome.evidence = evidence;

        if (round.extracted_code.has_value()) {
          round_json["extracted_code"] = *round.extracted_code;
          VerificationReport report =
              deps.verifier.gate(*round.extracted_code, sample.language, test_spec);
          round_json["gate"] = detail::gate_summary_json(report);
          outcome.verification = report;

          if (report.secure()) {
            outcome.status = TaskStatus::FIXED;
            outcome.final_code = *round.extracted_code;
            MemoryEntry entry;
            entry.tier = Tier::DYNAMIC;
            entry.problem_code = sample.code;
            entry.context = sample.joined_context();
            entry.diagnosis = round.response_text;
            entry.fix_code = *round.extracted_code;
            entry.cwe_tag = sample.cwe_hint;
            entry.verified = true;
            entry.created_at = deps.clock.tick();
            entry.source_run = deps.run_id;
            auto deposited = deps.memory.deposit(std::move(entry));
            if (deposited.result == DepositResult::INSERTED) {
              outcome.deposited_entry_id = deposited.entry_id;
            }
            rounds.push_back(std::move(round_json));
            break;
          }
        }
        rounds.push_back(std::move(round_json));
        history.push_back(std::move(round));
      }
      if (outcome.status != TaskStatus::FIXED) {
        outcome.status = TaskStatus::UNRESOLVED;
        outcome.final_code = sample.code;  // the gate never endorses an unverified candidate
      }
    }
  } catch (const ProviderError& e) {
    outcome.aborted = true;
    outcome.abort_reason = std::string("provider: ") + e.what();
    outcome.status = TaskStatus::UNRESOLVED;
  } catch (const AdapterError& e) {
    outcome.aborted = true;
    outcome.abort_reason = std::string("verifier: ") + e.what();
    outcome.status = TaskStatus::UNRESOLVED;
  }

  nlohmann::json record{{"sample", sample},
                        {"config", config},
                        {"test_spec", detail::test_spec_json(test_spec)},
                        {"verdict", verdict_json},
                        {"rounds", rounds},
                        {"passthrough_gate", passthrough_gate},
                        {"outcome", detail::outcome_json(outcome)},
                        {"usage", detail::usage_summary_json(deps.ledger, task_id)},
                        {"task_id", task_id},
                        {"created_at", deps.clock.tick()},
                        {"run_id", deps.run_id}};
  AuditRecord audit = deps.audit.append(std::move(record));
  return {outcome, audit};
}

// -- Replay ------------------------------------------------------------------

struct ReplayResult {
  bool ok = true;
  std::size_t records_compared = 0;
  std::size_t first_divergence = 0;  // meaningful only when !ok
  std::string field;
  std::string detail;
};

// Re-executes every recorded task, in order, against fresh deps whose initial
// state matches the original run (same seed memory, a mock provider holding
// the original script) and compares outcomes field for field.
inline ReplayResult replay(const std::vector<nlohmann::json>& records, PipelineDeps& deps) {
  ReplayResult result;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const nlohmann::json& rec = records[i];
    CodeSample sample;
    RunConfig config;
    std::optional<TestSpec> test_spec;
    try {
      sample = rec.at("sample").get<CodeSample>();
      config = rec.at("config").get<RunConfig>();
      test_spec = detail::test_spec_from_json(rec.value("test_spec", nlohmann::json()));
    } catch (const std::exception& e) {
      return {false, i, i, "record", std::string("unreadable audit record: ") + e.what()};
    }

    TaskOutcome outcome;
    try {
      outcome = run_task(sample, config, deps, test_spec).first;
    } catch (const std::exception& e) {
      return {false, i, i, "execution", e.what()};
    }

    nlohmann::json recorded_outcome = rec.value("outcome", nlohmann::json());
    nlohmann::json replayed_outcome = detail::outcome_json(outcome);
    if (recorded_outcome != replayed_outcome) {
      for (auto it = replayed_outcome.begin(); it != replayed_outcome.end(); ++it) {
        if (!recorded_outcome.contains(it.key()) ||
            recorded_outcome[it.key()] != it.value()) {
          return {false, i, i, it.key(),
                  "recorded " +
                      (recorded_outcome.contains(it.key())
                           ? recorded_outcome[it.key()].dump()
                           : std::string("<missing>")) +
                      " != replayed " + it.value().dump()};
        }
      }
      return {false, i, i, "outcome", "outcome objects differ"};
    }
    ++result.records_compared;
  }
  return result;
}

}  // namespace reflex
