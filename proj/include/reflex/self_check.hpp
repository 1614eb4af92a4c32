#pragma once

// Front-end safety classifier: one provider call, a binary SAFE/UNSAFE
// verdict, and a fail-safe parse. Anything that does not normalize to exactly
// "safe" or "unsafe" routes to UNSAFE — an ambiguous answer costs reflection
// tokens, a misrouted unsafe sample costs security.

#include <cctype>
#include <string>
#include <string_view>

#include "reflex/prompt.hpp"
#include "reflex/provider.hpp"
#include "reflex/sample.hpp"

namespace reflex {

struct Verdict {
  enum class Label { SAFE, UNSAFE };
  Label label = Label::UNSAFE;
  std::string raw_response;
  bool parse_clean = false;  // false ⇒ label is UNSAFE
};

inline std::string to_string(Verdict::Label label) {
  return label == Verdict::Label::SAFE ? "SAFE" : "UNSAFE";
}

// Normalize: lowercase, drop punctuation, collapse whitespace, trim. Accepts
// only an exact keyword; a reply containing both keywords therefore parses as
// unclean and lands on UNSAFE.
inline Verdict parse_verdict(std::string raw) {
  std::string normalized;
  bool pending_space = false;
  for (unsigned char c : raw) {
    if (std::isalnum(c)) {
      if (pending_space && !normalized.empty()) normalized.push_back(' ');
      pending_space = false;
      normalized.push_back(static_cast<char>(std::tolower(c)));
    } else if (std::isspace(c)) {
      pending_space = true;
    }
    // punctuation dropped entirely
  }

  Verdict v;
  v.raw_response = std::move(raw);
  if (normalized == "safe") {
    v.label = Verdict::Label::SAFE;
    v.parse_clean = true;
  } else if (normalized == "unsafe") {
    v.label = Verdict::Label::UNSAFE;
    v.parse_clean = true;
  } else {
    v.label = Verdict::Label::UNSAFE;
    v.parse_clean = false;
  }
  return v;
}

// Issues exactly one provider call.
inline Verdict self_check(const CodeSample& sample, Provider& provider,
                          const PromptTemplates& templates, const std::string& model_name,
                          UsageLedger* ledger = nullptr, const std::string& task_id = {}) {
  ChatRequest request;
  request.messages.push_back(ChatMessage{"user", render_self_check(sample, templates)});
  request.model_name = model_name;
  request.stage_tag = StageTag::SELF_CHECK;
  Completion completion = provider.complete(request);
  if (ledger) ledger->add(StageTag::SELF_CHECK, task_id, completion.usage);
  return parse_verdict(completion.text);
}

}  // namespace reflex
