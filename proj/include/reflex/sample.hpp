#pragma once

#include <stdexcept>
#include <string>

namespace reflex {

enum class Language { C, Cpp, Python };

inline std::string to_string(Language lang) {
  switch (lang) {
    case Language::C: return "c";
    case Language::Cpp: return "cpp";
    case Language::Python: return "python";
  }
  return "unknown";
}

inline Language language_from_string(const std::string& s) {
  if (s == "c") return Language::C;
  if (s == "cpp" || s == "c++") return Language::Cpp;
  if (s == "python" || s == "py") return Language::Python;
  throw std::invalid_argument("unsupported language: " + s);
}

inline std::string file_extension(Language lang) {
  switch (lang) {
    case Language::C: return ".c";
    case Language::Cpp: return ".cpp";
    case Language::Python: return ".py";
  }
  return ".txt";
}

// One unit of work for the control loop: the code under suspicion plus its
// file- and function-level context.
struct CodeSample {
  std::string sample_id;
  Language language = Language::Python;
  std::string code;
  std::string file_context;
  std::string function_context;
  std::string cwe_hint;  // empty = absent

  std::string joined_context() const {
    if (file_context.empty()) return function_context;
    if (function_context.empty()) return file_context;
    return file_context + "\n" + function_context;
  }
};

}  // namespace reflex
