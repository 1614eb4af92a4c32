#pragma once

// Deterministic prompt rendering for the self-check and the multi-round
// repair dialogue. Rendering is a pure function of its inputs: same sample,
// evidence, and history always produce byte-identical prompts, which is what
// lets an audit record replay the exact conversation later.
//
// Evidence snippets are framed by [EVIDENCE ...] markers and their code lines
// carry a "| " prefix, so they can never be mistaken for the candidate fix
// (which the model is instructed to return as a bare fenced block).

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "reflex/memory.hpp"
#include "reflex/sample.hpp"

namespace reflex {

struct PromptTemplates {
  std::string self_check;
  std::string reflection;
  std::string no_evidence_clause;
  std::size_t context_budget = 16000;  // whole-prompt character cap

  static PromptTemplates defaults() {
    PromptTemplates t;
    t.self_check =
        "You are a security reviewer. Inspect the code below for "
        "vulnerabilities (injection, traversal, overflow, unsafe memory use).\n"
        "Answer with exactly one word: SAFE or UNSAFE. Output nothing else.\n"
        "\n"
        "Code:\n"
        "{code}\n"
        "\n"
        "Context:\n"
        "{context}\n";
    t.reflection =
        "The following code was judged unsafe. Work through the problem step "
        "by step: identify the vulnerability, explain the root cause, then "
        "produce a corrected version.\n"
        "\n"
        "Problem code:\n"
        "{code}\n"
        "\n"
        "Context:\n"
        "{context}\n"
        "\n"
        "Prior repair evidence, most relevant first:\n"
        "{evidence}\n"
        "{history}"
        "Return the full corrected code in a single fenced code block "
        "(``` ... ```). The last fenced block in your reply is taken as "
        "the fix.\n";
    t.no_evidence_clause = "No prior cases were available for this problem.";
    return t;
  }

  // Template files are plain text with {code}, {context}, {evidence} and
  // {history} placeholders. Either path may be empty to keep the default.
  static PromptTemplates from_files(const std::filesystem::path& self_check_path,
                                    const std::filesystem::path& reflection_path) {
    PromptTemplates t = defaults();
    auto slurp = [](const std::filesystem::path& p) {
      std::ifstream in(p);
      if (!in) throw std::runtime_error("cannot read template: " + p.string());
      std::ostringstream ss;
      ss << in.rdbuf();
      return ss.str();
    };
    if (!self_check_path.empty()) t.self_check = slurp(self_check_path);
    if (!reflection_path.empty()) t.reflection = slurp(reflection_path);
    return t;
  }
};

// One prompt/response cycle of the repair dialogue.
struct ReflectionRound {
  int round_index = 1;
  std::string prompt_text;
  std::string response_text;
  std::optional<std::string> extracted_code;
  bool extraction_clean = false;
};

enum class TerminalStatus { FIXED, EXHAUSTED };

struct ReflectionTranscript {
  std::vector<ReflectionRound> rounds;
  TerminalStatus terminal_status = TerminalStatus::EXHAUSTED;
};

inline constexpr std::string_view kTruncationMarker = "...[context truncated]";

namespace detail {

inline void replace_all(std::string& text, std::string_view needle, std::string_view value) {
  std::size_t pos = 0;
  while ((pos = text.find(needle, pos)) != std::string::npos) {
    text.replace(pos, needle.size(), value);
    pos += value.size();
  }
}

// Fit `context` so the fully rendered prompt stays within `budget` characters.
// The context is cut tail-first and the marker appended.
inline std::string fit_context(const std::string& context, std::size_t rendered_without_context,
                               std::size_t budget) {
  if (rendered_without_context + context.size() <= budget) return context;
  std::size_t room = budget > rendered_without_context + kTruncationMarker.size()
                         ? budget - rendered_without_context - kTruncationMarker.size()
                         : 0;
  return context.substr(0, room) + std::string(kTruncationMarker);
}

inline std::string render_with_budget(std::string templ, const CodeSample& sample,
                                      const std::string& evidence, const std::string& history,
                                      std::size_t budget) {
  replace_all(templ, "{code}", sample.code);
  replace_all(templ, "{evidence}", evidence);
  replace_all(templ, "{history}", history);
  std::string without_context = templ;
  replace_all(without_context, "{context}", "");
  std::string context =
      fit_context(sample.joined_context(), without_context.size(), budget);
  replace_all(templ, "{context}", context);
  return templ;
}

}  // namespace detail

inline std::string render_self_check(const CodeSample& sample, const PromptTemplates& templates) {
  return detail::render_with_budget(templates.self_check, sample, "", "",
                                    templates.context_budget);
}

// Three-decimal similarity, matching what the audit trail records.
inline std::string format_similarity(double sim) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", sim);
  return buf;
}

inline std::string render_evidence_block(const EvidenceSet& evidence,
                                         const PromptTemplates& templates) {
  if (evidence.items.empty()) return templates.no_evidence_clause + "\n";
  std::ostringstream out;
  int rank = 0;
  for (const EvidenceItem& item : evidence.items) {
    ++rank;
    out << "[EVIDENCE " << item.entry.entry_id << " rank=" << rank
        << " sim=" << format_similarity(item.similarity) << "]\n";
    if (!item.entry.cwe_tag.empty()) out << "Weakness: " << item.entry.cwe_tag << "\n";
    if (!item.entry.diagnosis.empty()) out << "Diagnosis: " << item.entry.diagnosis << "\n";
    const std::string& snippet =
        item.entry.fix_code.empty() ? item.entry.problem_code : item.entry.fix_code;
    out << (item.entry.fix_code.empty() ? "Guideline:\n" : "Verified fix:\n");
    std::istringstream lines(snippet);
    std::string line;
    while (std::getline(lines, line)) out << "| " << line << "\n";
    out << "[/EVIDENCE]\n";
  }
  return out.str();
}

inline std::string render_history_block(const std::vector<ReflectionRound>& history) {
  if (history.empty()) return "";
  std::ostringstream out;
  for (const ReflectionRound& round : history) {
    out << "[ROUND " << round.round_index << " RESPONSE]\n"
        << round.response_text << "\n"
        << "[/ROUND " << round.round_index << " RESPONSE]\n";
  }
  out << "The attempts above did not pass verification. Revise the fix.\n";
  return out.str();
}

inline std::string render_reflection(const CodeSample& sample, const EvidenceSet& evidence,
                                     const std::vector<ReflectionRound>& history,
                                     const PromptTemplates& templates) {
  return detail::render_with_budget(templates.reflection, sample,
                                    render_evidence_block(evidence, templates),
                                    render_history_block(history), templates.context_budget);
}

struct Extraction {
  std::optional<std::string> code;
  bool clean = false;
};

// Returns the last complete fenced code block of the reply. Chain-of-thought
// replies often carry intermediate snippets; the final block is the answer.
inline Extraction extract_candidate(std::string_view response) {
  std::vector<std::string> blocks;
  std::optional<std::string> open_block;
  std::size_t pos = 0;
  while (pos <= response.size()) {
    std::size_t eol = response.find('\n', pos);
    std::string_view line = response.substr(pos, eol == std::string_view::npos ? std::string_view::npos
                                                                               : eol - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.substr(0, 3) == "```") {
      if (open_block.has_value()) {
        if (!open_block->empty() && open_block->back() == '\n') open_block->pop_back();
        blocks.push_back(std::move(*open_block));
        open_block.reset();
      } else {
        open_block = std::string{};
      }
    } else if (open_block.has_value()) {
      open_block->append(line);
      open_block->push_back('\n');
    }
    if (eol == std::string_view::npos) break;
    pos = eol + 1;
  }
  for (auto it = blocks.rbegin(); it != blocks.rend(); ++it) {
    if (!it->empty()) return Extraction{std::move(*it), true};
  }
  return Extraction{std::nullopt, false};
}

// Recover the entry ids of all evidence items injected into a rendered
// prompt, in rank order. Used to reconstruct retrieval decisions from audit
// transcripts.
inline std::vector<std::string> evidence_ids_in_prompt(std::string_view prompt) {
  std::vector<std::string> ids;
  std::size_t pos = 0;
  static constexpr std::string_view kOpen = "[EVIDENCE ";
  while ((pos = prompt.find(kOpen, pos)) != std::string_view::npos) {
    std::size_t start = pos + kOpen.size();
    std::size_t end = prompt.find(' ', start);
    if (end == std::string_view::npos) break;
    ids.emplace_back(prompt.substr(start, end - start));
    pos = end;
  }
  return ids;
}

}  // namespace reflex
