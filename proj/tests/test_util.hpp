#pragma once

// Shared helpers for the test suites: an embedder with scripted vectors so
// similarities can be pinned exactly, and a self-cleaning temp directory.

#include <cmath>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <unordered_map>

#include "reflex/embedding.hpp"

namespace reflex_test {

// Maps exact text to a preset vector. Unknown text yields the zero vector so
// queries against unregistered content are simply "not similar".
class FixtureEmbedder final : public reflex::Embedder {
 public:
  explicit FixtureEmbedder(std::size_t dim) : dim_(dim) {}

  void set(const std::string& text, reflex::EmbeddingVector v) {
    if (v.dim() != dim_) throw std::invalid_argument("FixtureEmbedder: dim mismatch");
    vectors_[text] = std::move(v);
  }

  // Convenience: register the (code, context) composition the store embeds.
  void set_entry(const std::string& code, const std::string& context,
                 reflex::EmbeddingVector v) {
    set(code + "\n" + context, std::move(v));
  }

  reflex::EmbeddingVector embed(std::string_view text) const override {
    auto it = vectors_.find(std::string(text));
    if (it != vectors_.end()) return it->second;
    reflex::EmbeddingVector z;
    z.values.assign(dim_, 0.0);
    return z;
  }

  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
  std::unordered_map<std::string, reflex::EmbeddingVector> vectors_;
};

// Unit vector in 2-D whose cosine against (1, 0) equals `sim` exactly enough.
inline reflex::EmbeddingVector unit2(double sim) {
  reflex::EmbeddingVector v;
  v.values = {sim, std::sqrt(std::max(0.0, 1.0 - sim * sim))};
  return v;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::mt19937_64 rng(std::random_device{}());
    path_ = std::filesystem::temp_directory_path() /
            ("reflex_test_" + tag + "_" + std::to_string(rng()));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

}  // namespace reflex_test
