#pragma once

// Pluggable text embedding plus exact cosine similarity.
//
// The default embedder is deliberately simple and deterministic: lowercase,
// split on non-alphanumerics, hash each token into one of `dim` buckets,
// accumulate counts, L2-normalize. Identical text always yields an identical
// vector, which is what makes retrieval results reproducible offline.

#include <cctype>
#include <cmath>
#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace reflex {

struct EmbeddingVector {
  std::vector<double> values;

  std::size_t dim() const { return values.size(); }
};

// Cosine similarity. Zero-norm operands compare as 0 so empty text is
// retrievable-but-last instead of producing NaN.
inline double cosine(const EmbeddingVector& a, const EmbeddingVector& b) {
  if (a.dim() != b.dim()) {
    throw std::invalid_argument("cosine: dimension mismatch (" + std::to_string(a.dim()) +
                                " vs " + std::to_string(b.dim()) + ")");
  }
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    dot += a.values[i] * b.values[i];
    na += a.values[i] * a.values[i];
    nb += b.values[i] * b.values[i];
  }
  if (na == 0.0 || nb == 0.0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

namespace detail {

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ull;
  }
  return h;
}

}  // namespace detail

// Hashed token counts, L2-normalized. Empty token set stays the zero vector.
inline EmbeddingVector embed(std::string_view text, std::size_t dim = 256) {
  if (dim < 1) throw std::invalid_argument("embed: dim must be >= 1");
  EmbeddingVector v;
  v.values.assign(dim, 0.0);

  std::string token;
  auto flush = [&] {
    if (!token.empty()) {
      v.values[detail::fnv1a64(token) % dim] += 1.0;
      token.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      token.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();

  double norm = 0.0;
  for (double x : v.values) norm += x * x;
  if (norm > 0.0) {
    norm = std::sqrt(norm);
    for (double& x : v.values) x /= norm;
  }
  return v;
}

// Embedding backend interface; the store only depends on this.
class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual EmbeddingVector embed(std::string_view text) const = 0;
  virtual std::size_t dim() const = 0;
};

class HashedTokenEmbedder final : public Embedder {
 public:
  explicit HashedTokenEmbedder(std::size_t dim = 256) : dim_(dim) {
    if (dim_ < 1) throw std::invalid_argument("HashedTokenEmbedder: dim must be >= 1");
  }
  EmbeddingVector embed(std::string_view text) const override { return reflex::embed(text, dim_); }
  std::size_t dim() const override { return dim_; }

 private:
  std::size_t dim_;
};

}  // namespace reflex
