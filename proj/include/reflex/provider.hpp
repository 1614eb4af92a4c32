#pragma once

// LLM backend abstraction. Ships two implementations:
//
//   MockProvider — fully deterministic, replays a script of replies keyed by
//   (stage, optional substring matcher). All control-flow tests and the
//   acceptance runs use this; no network is ever touched.
//
//   HttpProvider — a minimal chat-completions-style client so any compatible
//   endpoint can back the engine. Field paths into the response JSON are
//   configurable.
//
// Every call is tagged with the pipeline stage that issued it, which is what
// drives per-stage token and cost accounting.

#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <map>
#include <mutex>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace reflex {

enum class StageTag { SELF_CHECK, REFLECTION, VERIFY_ASSIST };

inline std::string to_string(StageTag s) {
  switch (s) {
    case StageTag::SELF_CHECK: return "SELF_CHECK";
    case StageTag::REFLECTION: return "REFLECTION";
    case StageTag::VERIFY_ASSIST: return "VERIFY_ASSIST";
  }
  return "UNKNOWN";
}

inline StageTag stage_from_string(const std::string& s) {
  if (s == "SELF_CHECK") return StageTag::SELF_CHECK;
  if (s == "REFLECTION") return StageTag::REFLECTION;
  if (s == "VERIFY_ASSIST") return StageTag::VERIFY_ASSIST;
  throw std::invalid_argument("unknown stage tag: " + s);
}

struct ChatMessage {
  std::string role;
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  std::string model_name;
  StageTag stage_tag = StageTag::SELF_CHECK;
};

struct ChatUsage {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  double wall_time_s = 0.0;

  std::int64_t total_tokens() const { return input_tokens + output_tokens; }
};

struct Completion {
  std::string text;
  ChatUsage usage;
};

class ProviderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class TransportError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

class ScriptExhaustedError : public ProviderError {
 public:
  using ProviderError::ProviderError;
};

// Deterministic tokenizer stand-in used wherever the backend reports no
// usage: ceil(len/4).
inline std::int64_t token_estimate(std::string_view text) {
  return static_cast<std::int64_t>((text.size() + 3) / 4);
}

class Provider {
 public:
  virtual ~Provider() = default;
  virtual Completion complete(const ChatRequest& request) = 0;
  virtual std::string name() const = 0;

 protected:
  static void check_request(const ChatRequest& request) {
    if (request.messages.empty()) {
      throw std::invalid_argument("complete: messages must be nonempty");
    }
  }
};

// -- Mock ---------------------------------------------------------------

struct ScriptEntry {
  StageTag stage = StageTag::SELF_CHECK;
  std::string match;  // empty = match any request at this stage
  std::string reply;
};

// Script file: line-delimited JSON records {stage, match?, reply}.
inline std::vector<ScriptEntry> load_script_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open mock script: " + path.string());
  std::vector<ScriptEntry> script;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) +
                               ": invalid script record: " + e.what());
    }
    ScriptEntry entry;
    entry.stage = stage_from_string(j.at("stage").get<std::string>());
    entry.match = j.value("match", std::string{});
    entry.reply = j.at("reply").get<std::string>();
    script.push_back(std::move(entry));
  }
  return script;
}

class MockProvider final : public Provider {
 public:
  explicit MockProvider(std::vector<ScriptEntry> script) : script_(std::move(script)) {
    consumed_.assign(script_.size(), false);
  }

  static MockProvider from_file(const std::filesystem::path& path) {
    return MockProvider(load_script_file(path));
  }

  Completion complete(const ChatRequest& request) override {
    check_request(request);
    std::string request_text;
    for (const ChatMessage& m : request.messages) request_text += m.content;

    std::lock_guard lock(mutex_);
    ++calls_;
    for (std::size_t i = 0; i < script_.size(); ++i) {
      if (consumed_[i]) continue;
      if (script_[i].stage != request.stage_tag) continue;
      if (!script_[i].match.empty() &&
          request_text.find(script_[i].match) == std::string::npos) {
        continue;
      }
      consumed_[i] = true;
      Completion c;
      c.text = script_[i].reply;
      c.usage.input_tokens = token_estimate(request_text);
      c.usage.output_tokens = token_estimate(c.text);
      c.usage.wall_time_s = 0.0;  // logical time: keeps replays byte-identical
      return c;
    }
    throw ScriptExhaustedError("mock script exhausted: no unconsumed reply for stage " +
                               to_string(request.stage_tag));
  }

  std::string name() const override { return "mock"; }

  std::size_t calls() const {
    std::lock_guard lock(mutex_);
    return calls_;
  }

  std::size_t remaining() const {
    std::lock_guard lock(mutex_);
    std::size_t n = 0;
    for (bool c : consumed_) {
      if (!c) ++n;
    }
    return n;
  }

 private:
  std::vector<ScriptEntry> script_;
  std::vector<bool> consumed_;
  std::size_t calls_ = 0;
  mutable std::mutex mutex_;
};

// -- Usage ledger ---------------------------------------------------------

struct UsageRecord {
  StageTag stage = StageTag::SELF_CHECK;
  std::string task_id;
  ChatUsage usage;
};

struct UsageTotals {
  std::int64_t input_tokens = 0;
  std::int64_t output_tokens = 0;
  std::int64_t calls = 0;
  double wall_time_s = 0.0;

  std::int64_t total_tokens() const { return input_tokens + output_tokens; }
};

inline double token_cost(std::int64_t total_tokens, double price_per_1k) {
  return static_cast<double>(total_tokens) * price_per_1k / 1000.0;
}

class UsageLedger {
 public:
  void add(StageTag stage, const std::string& task_id, const ChatUsage& usage) {
    std::lock_guard lock(mutex_);
    records_.push_back(UsageRecord{stage, task_id, usage});
  }

  std::vector<UsageRecord> records() const {
    std::lock_guard lock(mutex_);
    return records_;
  }

  UsageTotals stage_total(StageTag stage) const {
    std::lock_guard lock(mutex_);
    UsageTotals t;
    for (const UsageRecord& r : records_) {
      if (r.stage != stage) continue;
      accumulate(t, r);
    }
    return t;
  }

  UsageTotals grand_total() const {
    std::lock_guard lock(mutex_);
    UsageTotals t;
    for (const UsageRecord& r : records_) accumulate(t, r);
    return t;
  }

  std::vector<UsageRecord> task_slice(const std::string& task_id) const {
    std::lock_guard lock(mutex_);
    std::vector<UsageRecord> out;
    for (const UsageRecord& r : records_) {
      if (r.task_id == task_id) out.push_back(r);
    }
    return out;
  }

  std::size_t size() const {
    std::lock_guard lock(mutex_);
    return records_.size();
  }

 private:
  static void accumulate(UsageTotals& t, const UsageRecord& r) {
    t.input_tokens += r.usage.input_tokens;
    t.output_tokens += r.usage.output_tokens;
    t.wall_time_s += r.usage.wall_time_s;
    ++t.calls;
  }

  mutable std::mutex mutex_;
  std::vector<UsageRecord> records_;
};

// -- HTTP ------------------------------------------------------------------

struct HttpProviderConfig {
  std::string base_url = "http://127.0.0.1:8080";
  std::string path = "/v1/chat/completions";
  std::string auth_token_env = "REFLEX_API_KEY";  // name of the env var, not the secret
  std::string text_path = "choices.0.message.content";
  std::string input_tokens_path = "usage.prompt_tokens";
  std::string output_tokens_path = "usage.completion_tokens";
  int timeout_s = 30;
  int retries = 1;  // additional attempts after the first
};

// Walks a dotted path ("choices.0.message.content") through a JSON document.
inline const nlohmann::json* json_at_path(const nlohmann::json& root, std::string_view path) {
  const nlohmann::json* node = &root;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    std::size_t dot = path.find('.', pos);
    std::string_view key =
        path.substr(pos, dot == std::string_view::npos ? std::string_view::npos : dot - pos);
    if (key.empty()) return nullptr;
    if (node->is_array()) {
      std::size_t idx = 0;
      for (char c : key) {
        if (c < '0' || c > '9') return nullptr;
        idx = idx * 10 + static_cast<std::size_t>(c - '0');
      }
      if (idx >= node->size()) return nullptr;
      node = &(*node)[idx];
    } else if (node->is_object()) {
      auto it = node->find(std::string(key));
      if (it == node->end()) return nullptr;
      node = &*it;
    } else {
      return nullptr;
    }
    if (dot == std::string_view::npos) break;
    pos = dot + 1;
  }
  return node;
}

class HttpProvider final : public Provider {
 public:
  explicit HttpProvider(HttpProviderConfig config);

  Completion complete(const ChatRequest& request) override;

  std::string name() const override { return "http"; }

 private:
  HttpProviderConfig config_;
};

}  // namespace reflex

// The httplib-backed implementation lives in a separate header so binaries
// that only ever use the mock do not pay the compile cost.
