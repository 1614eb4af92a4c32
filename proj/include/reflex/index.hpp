#pragma once

// Exact cosine-similarity top-k over an in-memory document set.
//
// No ANN structures: the stores this index backs hold on the order of a few
// hundred entries, and an exact scan keeps results oracle-checkable. Ranking
// is total and deterministic: similarity descending, then newer insertion
// first, then doc_id ascending.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "reflex/embedding.hpp"

namespace reflex {

struct ScoredHit {
  std::string doc_id;
  double similarity = 0.0;
};

struct IndexedDoc {
  std::string doc_id;
  EmbeddingVector vector;
  std::uint64_t payload_ref = 0;   // opaque handle into the owning store
  std::uint64_t inserted_seq = 0;  // strictly increasing in insertion order
};

class CosineIndex {
 public:
  explicit CosineIndex(std::size_t dim) : dim_(dim) {
    if (dim_ < 1) throw std::invalid_argument("CosineIndex: dim must be >= 1");
  }

  std::size_t dim() const { return dim_; }

  std::uint64_t add(std::string doc_id, EmbeddingVector vector, std::uint64_t payload_ref) {
    std::unique_lock lock(mutex_);
    if (vector.dim() != dim_) {
      throw std::invalid_argument("CosineIndex::add: vector dim " + std::to_string(vector.dim()) +
                                  " != index dim " + std::to_string(dim_));
    }
    if (by_id_.contains(doc_id)) {
      throw std::invalid_argument("CosineIndex::add: duplicate doc_id " + doc_id);
    }
    std::uint64_t seq = next_seq_++;
    by_id_.emplace(doc_id, docs_.size());
    docs_.push_back(IndexedDoc{std::move(doc_id), std::move(vector), payload_ref, seq});
    return seq;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return docs_.size();
  }

  bool empty() const { return size() == 0; }

  // Top-k over documents accepted by `filter`. Empty candidate set yields an
  // empty list, never an error.
  std::vector<ScoredHit> top_k_if(const EmbeddingVector& query, std::size_t k,
                                  const std::function<bool(const IndexedDoc&)>& filter) const {
    if (k < 1) throw std::invalid_argument("CosineIndex::top_k: k must be >= 1");
    if (query.dim() != dim_) {
      throw std::invalid_argument("CosineIndex::top_k: query dim mismatch");
    }
    std::shared_lock lock(mutex_);

    struct Row {
      double similarity;
      std::uint64_t inserted_seq;
      const IndexedDoc* doc;
    };
    std::vector<Row> rows;
    rows.reserve(docs_.size());
    for (const IndexedDoc& doc : docs_) {
      if (filter && !filter(doc)) continue;
      rows.push_back(Row{cosine(query, doc.vector), doc.inserted_seq, &doc});
    }
    auto better = [](const Row& a, const Row& b) {
      if (a.similarity != b.similarity) return a.similarity > b.similarity;
      if (a.inserted_seq != b.inserted_seq) return a.inserted_seq > b.inserted_seq;
      return a.doc->doc_id < b.doc->doc_id;
    };
    std::size_t take = std::min(k, rows.size());
    std::partial_sort(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end(),
                      better);

    std::vector<ScoredHit> hits;
    hits.reserve(take);
    for (std::size_t i = 0; i < take; ++i) {
      hits.push_back(ScoredHit{rows[i].doc->doc_id, rows[i].similarity});
    }
    return hits;
  }

  std::vector<ScoredHit> top_k(const EmbeddingVector& query, std::size_t k) const {
    return top_k_if(query, k, nullptr);
  }

  // Snapshot of the stored docs in insertion order.
  std::vector<IndexedDoc> docs() const {
    std::shared_lock lock(mutex_);
    return docs_;
  }

  std::optional<IndexedDoc> find(const std::string& doc_id) const {
    std::shared_lock lock(mutex_);
    auto it = by_id_.find(doc_id);
    if (it == by_id_.end()) return std::nullopt;
    return docs_[it->second];
  }

 private:
  std::size_t dim_;
  mutable std::shared_mutex mutex_;
  std::vector<IndexedDoc> docs_;
  std::unordered_map<std::string, std::size_t> by_id_;
  std::uint64_t next_seq_ = 1;
};

}  // namespace reflex
