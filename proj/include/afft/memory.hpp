#pragma once

// Persistent affordance memory.
//
// On-disk layout:
//   <root>/index.json                 {"version":1,"records":[{"id","category","dir","encoders":[...],"digests":{...}}]}
//   <root>/records/<id>/crop.png      object crop
//   <root>/records/<id>/points.json   {"points":[[x,y],...],"source_video":..,"frame_index":..}
//   <root>/records/<id>/emb-<enc>.rft one embedding per encoder
//   <root>/.lock                      writer lock (flock)
//
// Record files are written before the index; the index is replaced with
// write-to-temp + rename, so it never references files that do not exist.

#include <filesystem>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "afft/extraction.hpp"
#include "afft/tensor_io.hpp"

namespace afft {

class EmbeddingVector {
 public:
  EmbeddingVector() = default;
  EmbeddingVector(std::vector<float> values, std::string encoder_name);

  const std::vector<float>& values() const { return values_; }
  const std::string& encoder_name() const { return encoder_; }
  double norm() const { return norm_; }
  std::size_t size() const { return values_.size(); }

  Tensor to_tensor() const;
  static EmbeddingVector from_tensor(const Tensor& t, std::string encoder_name);

  friend bool operator==(const EmbeddingVector& a, const EmbeddingVector& b) {
    return a.values_ == b.values_ && a.encoder_ == b.encoder_;
  }

 private:
  std::vector<float> values_;
  std::string encoder_;
  double norm_ = 0.0;
};

struct Provenance {
  std::string video_id;
  int frame_index = 0;
  friend bool operator==(const Provenance&, const Provenance&) = default;
};

struct AffordanceRecord {
  std::string id;
  std::string category;
  RasterImage crop;
  ContactPointSet contact_points;  // crop coordinates
  std::map<std::string, EmbeddingVector> embeddings;
  Provenance provenance;

  void validate() const;
};

std::string normalize_category(std::string_view category);

class AffordanceMemory {
 public:
  /// Opens (and creates, when missing) a memory directory; loads every record.
  static AffordanceMemory open(const std::filesystem::path& root);

  AffordanceMemory(AffordanceMemory&& other) noexcept;
  AffordanceMemory& operator=(AffordanceMemory&&) = delete;

  const std::filesystem::path& root() const { return root_; }
  std::size_t size() const { return records_.size(); }
  bool empty() const { return records_.empty(); }
  const std::vector<AffordanceRecord>& records() const { return records_; }
  const AffordanceRecord& get(const std::string& id) const;
  const AffordanceRecord* find(const std::string& id) const;

  void add(AffordanceRecord rec);

  /// Stores (or replaces) an embedding and persists it.
  void put_embedding(const std::string& id, const EmbeddingVector& emb);

  /// Records of one category (lowercase exact match), or all records.
  std::vector<const AffordanceRecord*> filter(const std::optional<std::string>& category) const;
  bool has_category(std::string_view category) const;
  std::vector<std::string> categories() const;

  /// In-process embedding cache for encoders a record was not stored with.
  std::optional<EmbeddingVector> cached_embedding(const std::string& id, const std::string& encoder) const;
  void cache_embedding(const std::string& id, const EmbeddingVector& emb) const;

 private:
  explicit AffordanceMemory(std::filesystem::path root);
  void write_index() const;
  void write_record_files(const AffordanceRecord& rec) const;

  std::filesystem::path root_;
  std::vector<AffordanceRecord> records_;
  std::map<std::string, std::size_t> by_id_;
  mutable std::mutex cache_mutex_;
  mutable std::map<std::pair<std::string, std::string>, EmbeddingVector> cache_;
};

/// Consistency check of a memory directory. Returns one message per problem; empty means clean.
std::vector<std::string> verify_memory(const std::filesystem::path& root);

namespace detail {
/// Fault injection for crash-consistency tests: when set, add() throws after
/// writing record files and before touching the index.
void set_fail_before_index_write(bool enabled);
}  // namespace detail

}  // namespace afft
