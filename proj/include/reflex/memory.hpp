#pragma once

// Two-tier reflective memory.
//
// The dynamic tier holds verified repair cases deposited at runtime; the
// static tier holds pre-seeded secure-coding knowledge. Retrieval is
// hierarchical: serve from the dynamic tier alone when it recalls enough
// sufficiently-similar evidence, otherwise re-rank the union of both tiers
// purely by similarity. The fallback decision is
//
//   fallback_used = NOT(dynamic_hit_count >= k_min AND max_dynamic_sim >= theta)
//
// where dynamic_hit_count counts positive-similarity rows in the dynamic-only
// top-k scan and max_dynamic_sim is the best dynamic similarity (0 when the
// dynamic tier is empty).

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <optional>
#include <shared_mutex>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "reflex/index.hpp"
#include "reflex/sha256.hpp"

namespace reflex {

enum class Tier { DYNAMIC, STATIC };

inline std::string to_string(Tier t) { return t == Tier::DYNAMIC ? "DYNAMIC" : "STATIC"; }

inline Tier tier_from_string(const std::string& s) {
  if (s == "DYNAMIC") return Tier::DYNAMIC;
  if (s == "STATIC") return Tier::STATIC;
  throw std::invalid_argument("unknown tier: " + s);
}

struct MemoryEntry {
  std::string entry_id;    // assigned by the store when empty
  Tier tier = Tier::DYNAMIC;
  std::string problem_code;
  std::string context;     // serialized file + function context
  std::string diagnosis;
  std::string fix_code;    // empty allowed for STATIC guideline entries
  std::string cwe_tag;     // empty = absent
  bool verified = false;
  std::int64_t created_at = 0;  // logical timestamp supplied by the caller
  std::string source_run;  // empty = absent; must be absent for STATIC
  std::string content_hash;  // digest of (problem_code, fix_code), filled by the store

  // Text both deposits and queries are embedded from.
  std::string embedding_text() const { return problem_code + "\n" + context; }
};

struct RetrievalQuery {
  std::string code;
  std::string context;
  std::size_t k = 3;
  std::size_t k_min = 1;
  double theta = 0.70;
};

struct EvidenceItem {
  MemoryEntry entry;
  double similarity = 0.0;
};

struct EvidenceSet {
  std::vector<EvidenceItem> items;  // similarity nonincreasing, |items| <= k
  bool fallback_used = false;
  std::size_t dynamic_hit_count = 0;
  double max_dynamic_sim = 0.0;
};

enum class DepositResult { INSERTED, DUPLICATE };

struct DepositOutcome {
  DepositResult result = DepositResult::INSERTED;
  std::string entry_id;  // the inserted entry, or the existing duplicate

  bool operator==(DepositResult r) const { return result == r; }
};

inline std::string memory_content_hash(const std::string& problem_code,
                                       const std::string& fix_code) {
  std::string keyed;
  keyed.reserve(problem_code.size() + fix_code.size() + 1);
  keyed.append(problem_code);
  keyed.push_back('\x1f');
  keyed.append(fix_code);
  return sha256_hex(keyed);
}

inline void to_json(nlohmann::json& j, const MemoryEntry& e) {
  j = nlohmann::json{{"entry_id", e.entry_id},
                     {"tier", to_string(e.tier)},
                     {"problem_code", e.problem_code},
                     {"context", e.context},
                     {"diagnosis", e.diagnosis},
                     {"fix_code", e.fix_code},
                     {"cwe_tag", e.cwe_tag},
                     {"verified", e.verified},
                     {"created_at", e.created_at},
                     {"source_run", e.source_run},
                     {"content_hash", e.content_hash}};
}

class SeedFormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class SnapshotError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class MemoryStore {
 public:
  explicit MemoryStore(std::shared_ptr<const Embedder> embedder)
      : embedder_(std::move(embedder)), index_(embedder_->dim()) {
    if (!embedder_) throw std::invalid_argument("MemoryStore: null embedder");
  }

  std::size_t dim() const { return embedder_->dim(); }

  std::size_t dynamic_size() const {
    std::shared_lock lock(mutex_);
    return dynamic_count_;
  }

  std::size_t static_size() const {
    std::shared_lock lock(mutex_);
    return entries_.size() - dynamic_count_;
  }

  std::size_t size() const {
    std::shared_lock lock(mutex_);
    return entries_.size();
  }

  // Hierarchical retrieval. Both tiers may be empty; the result is then an
  // empty fallback set, not an error.
  EvidenceSet retrieve(const RetrievalQuery& query) const {
    if (query.k < 1) throw std::invalid_argument("retrieve: k must be >= 1");
    if (query.k_min > query.k) throw std::invalid_argument("retrieve: k_min must be <= k");
    if (query.theta < 0.0 || query.theta > 1.0) {
      throw std::invalid_argument("retrieve: theta must lie in [0, 1]");
    }
    EmbeddingVector qv = embedder_->embed(query.code + "\n" + query.context);

    std::shared_lock lock(mutex_);
    auto is_dynamic = [this](const IndexedDoc& doc) {
      return entries_[doc.payload_ref].tier == Tier::DYNAMIC;
    };
    std::vector<ScoredHit> dyn_hits = index_.top_k_if(qv, query.k, is_dynamic);

    EvidenceSet result;
    result.max_dynamic_sim = dyn_hits.empty() ? 0.0 : dyn_hits.front().similarity;
    for (const ScoredHit& h : dyn_hits) {
      if (h.similarity > 0.0) ++result.dynamic_hit_count;
    }
    bool condition =
        result.dynamic_hit_count >= query.k_min && result.max_dynamic_sim >= query.theta;
    result.fallback_used = !condition;

    std::vector<ScoredHit> hits = condition ? std::move(dyn_hits) : index_.top_k(qv, query.k);
    for (const ScoredHit& h : hits) {
      // doc_id == entry_id; payload_ref is the entries_ slot.
      auto doc = index_.find(h.doc_id);
      result.items.push_back(EvidenceItem{entries_[doc->payload_ref], h.similarity});
    }
    return result;
  }

  // Deposit one entry. Dynamic entries must already be verified; the pipeline
  // runs the verification gate before calling this.
  DepositOutcome deposit(MemoryEntry entry) {
    if (entry.tier == Tier::DYNAMIC && !entry.verified) {
      throw std::invalid_argument("deposit: DYNAMIC entry must be verified");
    }
    if (entry.tier == Tier::STATIC && !entry.source_run.empty()) {
      throw std::invalid_argument("deposit: STATIC entry must not carry source_run");
    }
    entry.content_hash = memory_content_hash(entry.problem_code, entry.fix_code);

    std::unique_lock lock(mutex_);
    for (const MemoryEntry& existing : entries_) {
      if (existing.tier == entry.tier && existing.content_hash == entry.content_hash) {
        return DepositOutcome{DepositResult::DUPLICATE, existing.entry_id};
      }
    }
    if (entry.entry_id.empty()) {
      char buf[16];
      std::snprintf(buf, sizeof(buf), "%06zu", next_id_++);
      entry.entry_id = (entry.tier == Tier::DYNAMIC ? "dyn-" : "sta-") + std::string(buf);
    }
    EmbeddingVector v = embedder_->embed(entry.embedding_text());
    index_.add(entry.entry_id, std::move(v), entries_.size());
    if (entry.tier == Tier::DYNAMIC) ++dynamic_count_;
    std::string id = entry.entry_id;
    entries_.push_back(std::move(entry));
    return DepositOutcome{DepositResult::INSERTED, std::move(id)};
  }

  // Load STATIC guideline entries from a line-delimited file (one JSON object
  // per line; blank lines skipped). Malformed records are reported with their
  // line number; the whole file is parsed before anything is deposited, so a
  // bad record leaves the store untouched. Returns the number of entries
  // loaded.
  std::size_t load_static_seed(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw SeedFormatError("cannot open seed file: " + path.string());
    std::vector<MemoryEntry> parsed;
    std::size_t line_no = 0;
    std::string line;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      MemoryEntry entry = parse_entry_line(line, line_no, path.string());
      entry.tier = Tier::STATIC;
      entry.source_run.clear();
      parsed.push_back(std::move(entry));
    }
    std::size_t loaded = 0;
    for (MemoryEntry& entry : parsed) {
      if (deposit(std::move(entry)) == DepositResult::INSERTED) ++loaded;
    }
    return loaded;
  }

  // Persist the dynamic tier. First line is a metadata record carrying the
  // embedder dimension; each following line is one serialized MemoryEntry.
  void snapshot(const std::filesystem::path& path) const {
    std::shared_lock lock(mutex_);
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw SnapshotError("cannot write snapshot: " + path.string());
    nlohmann::json meta{{"snapshot_meta", {{"dim", dim()}, {"entries", dynamic_count_}}}};
    out << meta.dump() << "\n";
    for (const MemoryEntry& e : entries_) {
      if (e.tier != Tier::DYNAMIC) continue;
      nlohmann::json j = e;
      out << j.dump() << "\n";
    }
    if (!out) throw SnapshotError("short write to snapshot: " + path.string());
  }

  // Restore a snapshot into a store whose dynamic tier is still empty.
  // The file is fully parsed and validated before anything is deposited.
  // Returns the number of entries restored.
  std::size_t restore(const std::filesystem::path& path) {
    if (dynamic_size() != 0) {
      throw SnapshotError("restore requires an empty dynamic tier");
    }
    std::ifstream in(path);
    if (!in) throw SnapshotError("cannot open snapshot: " + path.string());
    std::string line;
    std::size_t line_no = 0;
    bool meta_seen = false;
    std::vector<MemoryEntry> parsed;
    while (std::getline(in, line)) {
      ++line_no;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      if (!meta_seen) {
        nlohmann::json meta;
        try {
          meta = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
          throw SnapshotError("corrupt snapshot header: " + std::string(e.what()));
        }
        if (!meta.contains("snapshot_meta")) {
          throw SnapshotError("corrupt snapshot: missing snapshot_meta header");
        }
        auto snap_dim = meta["snapshot_meta"].value("dim", std::size_t{0});
        if (snap_dim != dim()) {
          throw SnapshotError("snapshot dim " + std::to_string(snap_dim) +
                              " != embedder dim " + std::to_string(dim()));
        }
        meta_seen = true;
        continue;
      }
      MemoryEntry entry = parse_entry_line(line, line_no, path.string());
      if (entry.tier != Tier::DYNAMIC) {
        throw SnapshotError("snapshot line " + std::to_string(line_no) +
                            ": non-dynamic entry in dynamic snapshot");
      }
      parsed.push_back(std::move(entry));
    }
    if (!meta_seen) throw SnapshotError("corrupt snapshot: empty file without header");
    std::size_t restored = 0;
    for (MemoryEntry& entry : parsed) {
      if (deposit(std::move(entry)) == DepositResult::INSERTED) ++restored;
    }
    return restored;
  }

  // Entries in insertion order (both tiers).
  std::vector<MemoryEntry> entries() const {
    std::shared_lock lock(mutex_);
    return entries_;
  }

 private:
  static MemoryEntry parse_entry_line(const std::string& line, std::size_t line_no,
                                      const std::string& source) {
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw SeedFormatError(source + ":" + std::to_string(line_no) +
                            ": invalid JSON record: " + e.what());
    }
    static const char* kRequired[] = {"tier", "problem_code"};
    for (const char* field : kRequired) {
      if (!j.contains(field)) {
        throw SeedFormatError(source + ":" + std::to_string(line_no) +
                              ": record missing field '" + field + "'");
      }
    }
    static const char* kKnown[] = {"entry_id",  "tier",       "problem_code", "context",
                                   "diagnosis", "fix_code",   "cwe_tag",      "verified",
                                   "created_at", "source_run", "content_hash"};
    for (auto it = j.begin(); it != j.end(); ++it) {
      bool known = false;
      for (const char* f : kKnown) {
        if (it.key() == f) { known = true; break; }
      }
      if (!known) {
        std::fprintf(stderr, "warning: %s:%zu: ignoring unknown field '%s'\n", source.c_str(),
                     line_no, it.key().c_str());
      }
    }
    MemoryEntry e;
    try {
      e.entry_id = j.value("entry_id", std::string{});
      e.tier = tier_from_string(j.at("tier").get<std::string>());
      e.problem_code = j.at("problem_code").get<std::string>();
      e.context = j.value("context", std::string{});
      e.diagnosis = j.value("diagnosis", std::string{});
      e.fix_code = j.value("fix_code", std::string{});
      e.cwe_tag = j.value("cwe_tag", std::string{});
      e.verified = j.value("verified", false);
      e.created_at = j.value("created_at", std::int64_t{0});
      e.source_run = j.value("source_run", std::string{});
    } catch (const std::exception& e2) {
      throw SeedFormatError(source + ":" + std::to_string(line_no) + ": " + e2.what());
    }
    return e;
  }

  std::shared_ptr<const Embedder> embedder_;
  mutable std::shared_mutex mutex_;
  CosineIndex index_;
  std::vector<MemoryEntry> entries_;
  std::size_t dynamic_count_ = 0;
  std::size_t next_id_ = 1;
};

}  // namespace reflex
