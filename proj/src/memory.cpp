#include "afft/memory.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <set>

#include <nlohmann/json.hpp>

#include "afft/error.hpp"

namespace afft {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::atomic<bool> g_fail_before_index{false};

constexpr int kIndexVersion = 1;

bool safe_name(const std::string& s) {
  if (s.empty() || s.front() == '.') return false;
  return std::all_of(s.begin(), s.end(), [](unsigned char c) { return std::isalnum(c) || c == '_' || c == '-' || c == '.'; });
}

class FileLock {
 public:
  explicit FileLock(const fs::path& path) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT, 0644);
    if (fd_ < 0) fail(ErrorCode::LockFailure, "cannot open lock file " + path.string());
    if (::flock(fd_, LOCK_EX) != 0) {
      ::close(fd_);
      fail(ErrorCode::LockFailure, "cannot lock " + path.string());
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

fs::path record_dir(const fs::path& root, const std::string& id) { return root / "records" / id; }

std::string embedding_file(const std::string& encoder) { return "emb-" + encoder + ".rft"; }

json points_json(const AffordanceRecord& rec) {
  json pts = json::array();
  for (const auto& p : rec.contact_points.points) pts.push_back({p.x, p.y});
  return {{"points", pts}, {"source_video", rec.provenance.video_id}, {"frame_index", rec.provenance.frame_index}};
}

std::string file_digest(const fs::path& p) { return sha256_hex(read_file_bytes(p)); }

}  // namespace

namespace detail {
void set_fail_before_index_write(bool enabled) { g_fail_before_index = enabled; }
}  // namespace detail

EmbeddingVector::EmbeddingVector(std::vector<float> values, std::string encoder_name)
    : values_(std::move(values)), encoder_(std::move(encoder_name)) {
  if (values_.empty()) fail(ErrorCode::InvalidInput, "embedding must be non-empty");
  double sq = 0.0;
  for (float v : values_) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "embedding contains NaN or Inf");
    sq += static_cast<double>(v) * v;
  }
  norm_ = std::sqrt(sq);
}

Tensor EmbeddingVector::to_tensor() const { return Tensor({values_.size()}, values_); }

EmbeddingVector EmbeddingVector::from_tensor(const Tensor& t, std::string encoder_name) {
  if (t.ndim() != 1) fail(ErrorCode::ShapeRejected, "embedding tensor must be 1-D");
  return EmbeddingVector(t.data(), std::move(encoder_name));
}

std::string normalize_category(std::string_view category) {
  std::string out(category);
  std::transform(out.begin(), out.end(), out.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

void AffordanceRecord::validate() const {
  if (!safe_name(id)) fail(ErrorCode::InvalidInput, "record id '" + id + "' must match [A-Za-z0-9._-]+");
  if (category.empty()) fail(ErrorCode::InvalidInput, "record category is empty");
  if (crop.empty()) fail(ErrorCode::InvalidInput, "record crop is empty");
  if (contact_points.points.empty()) fail(ErrorCode::InvalidInput, "record has no contact points");
  for (const auto& p : contact_points.points) {
    if (!crop.size().contains(to_pixel(p))) fail(ErrorCode::InvalidInput, "contact point outside crop for " + id);
  }
  for (const auto& [name, emb] : embeddings) {
    if (!safe_name(name)) fail(ErrorCode::InvalidInput, "encoder name '" + name + "' is not file-safe");
    if (emb.encoder_name() != name) fail(ErrorCode::InvalidInput, "embedding key/name mismatch for " + id);
  }
}

// ---------------------------------------------------------------- AffordanceMemory

AffordanceMemory::AffordanceMemory(fs::path root) : root_(std::move(root)) {}

AffordanceMemory::AffordanceMemory(AffordanceMemory&& other) noexcept
    : root_(std::move(other.root_)), records_(std::move(other.records_)), by_id_(std::move(other.by_id_)) {
  std::lock_guard lock(other.cache_mutex_);
  cache_ = std::move(other.cache_);
}

AffordanceMemory AffordanceMemory::open(const fs::path& root) {
  std::error_code ec;
  fs::create_directories(root / "records", ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create memory directory " + root.string() + ": " + ec.message());
  AffordanceMemory mem(root);
  const fs::path index = root / "index.json";
  if (!fs::exists(index)) return mem;

  json j;
  try {
    j = json::parse(read_text(index));
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseFailure, "index.json: " + std::string(e.what()));
  }
  if (j.value("version", 0) != kIndexVersion) fail(ErrorCode::UnsupportedVersion, "index.json version");
  try {
    for (const auto& entry : j.at("records")) {
      AffordanceRecord rec;
      rec.id = entry.at("id").get<std::string>();
      rec.category = entry.at("category").get<std::string>();
      const fs::path dir = root / entry.at("dir").get<std::string>();
      rec.crop = read_image(dir / "crop.png");
      const auto pj = json::parse(read_text(dir / "points.json"));
      for (const auto& p : pj.at("points")) rec.contact_points.points.push_back({p.at(0).get<double>(), p.at(1).get<double>()});
      rec.provenance.video_id = pj.value("source_video", "");
      rec.provenance.frame_index = pj.value("frame_index", 0);
      rec.contact_points.frame_index = rec.provenance.frame_index;
      for (const auto& enc : entry.at("encoders")) {
        const auto name = enc.get<std::string>();
        rec.embeddings.emplace(name, EmbeddingVector::from_tensor(read_tensor(dir / embedding_file(name)), name));
      }
      if (mem.by_id_.count(rec.id)) fail(ErrorCode::DuplicateId, "index lists " + rec.id + " twice");
      mem.by_id_[rec.id] = mem.records_.size();
      mem.records_.push_back(std::move(rec));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseFailure, "index.json: " + std::string(e.what()));
  }
  return mem;
}

const AffordanceRecord* AffordanceMemory::find(const std::string& id) const {
  const auto it = by_id_.find(id);
  return it == by_id_.end() ? nullptr : &records_[it->second];
}

const AffordanceRecord& AffordanceMemory::get(const std::string& id) const {
  const auto* rec = find(id);
  if (!rec) fail(ErrorCode::UnknownRecord, id);
  return *rec;
}

void AffordanceMemory::write_record_files(const AffordanceRecord& rec) const {
  const fs::path dir = record_dir(root_, rec.id);
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) fail(ErrorCode::IoFailure, "cannot create " + dir.string());
  write_image(rec.crop, dir / "crop.png");
  write_text_atomic(dir / "points.json", points_json(rec).dump(2) + "\n");
  for (const auto& [name, emb] : rec.embeddings) write_tensor(emb.to_tensor(), dir / embedding_file(name));
}

void AffordanceMemory::write_index() const {
  json records = json::array();
  for (const auto& rec : records_) {
    json encoders = json::array();
    json digests = json::object();
    for (const auto& [name, emb] : rec.embeddings) {
      encoders.push_back(name);
      digests[name] = sha256_hex(encode_tensor(emb.to_tensor()));
    }
    records.push_back({{"id", rec.id},
                       {"category", rec.category},
                       {"dir", "records/" + rec.id},
                       {"encoders", encoders},
                       {"digests", digests}});
  }
  const json index = {{"version", kIndexVersion}, {"records", records}};
  write_text_atomic(root_ / "index.json", index.dump(2) + "\n");
}

void AffordanceMemory::add(AffordanceRecord rec) {
  rec.category = normalize_category(rec.category);
  rec.validate();
  FileLock lock(root_ / ".lock");
  if (by_id_.count(rec.id)) fail(ErrorCode::DuplicateId, rec.id);
  write_record_files(rec);
  if (g_fail_before_index) fail(ErrorCode::IoFailure, "injected failure before index write");
  by_id_[rec.id] = records_.size();
  records_.push_back(std::move(rec));
  try {
    write_index();
  } catch (...) {
    by_id_.erase(records_.back().id);
    records_.pop_back();
    throw;
  }
}

void AffordanceMemory::put_embedding(const std::string& id, const EmbeddingVector& emb) {
  if (!safe_name(emb.encoder_name())) fail(ErrorCode::InvalidInput, "encoder name is not file-safe");
  const auto it = by_id_.find(id);
  if (it == by_id_.end()) fail(ErrorCode::UnknownRecord, id);
  FileLock lock(root_ / ".lock");
  write_tensor(emb.to_tensor(), record_dir(root_, id) / embedding_file(emb.encoder_name()));
  records_[it->second].embeddings.insert_or_assign(emb.encoder_name(), emb);
  write_index();
}

std::vector<const AffordanceRecord*> AffordanceMemory::filter(const std::optional<std::string>& category) const {
  std::vector<const AffordanceRecord*> out;
  for (const auto& rec : records_) {
    if (!category || rec.category == *category) out.push_back(&rec);
  }
  return out;
}

bool AffordanceMemory::has_category(std::string_view category) const {
  const std::string c = normalize_category(category);
  return std::any_of(records_.begin(), records_.end(), [&](const AffordanceRecord& r) { return r.category == c; });
}

std::vector<std::string> AffordanceMemory::categories() const {
  std::set<std::string> s;
  for (const auto& r : records_) s.insert(r.category);
  return {s.begin(), s.end()};
}

std::optional<EmbeddingVector> AffordanceMemory::cached_embedding(const std::string& id, const std::string& encoder) const {
  if (const auto* rec = find(id)) {
    if (auto it = rec->embeddings.find(encoder); it != rec->embeddings.end()) return it->second;
  }
  std::lock_guard lock(cache_mutex_);
  if (auto it = cache_.find({id, encoder}); it != cache_.end()) return it->second;
  return std::nullopt;
}

void AffordanceMemory::cache_embedding(const std::string& id, const EmbeddingVector& emb) const {
  std::lock_guard lock(cache_mutex_);
  cache_.insert_or_assign({id, emb.encoder_name()}, emb);
}

// ---------------------------------------------------------------- verify

std::vector<std::string> verify_memory(const fs::path& root) {
  std::vector<std::string> issues;
  const fs::path index = root / "index.json";
  if (!fs::exists(index)) {
    if (fs::exists(root / "records") && !fs::is_empty(root / "records")) {
      issues.push_back("records/ is populated but index.json is missing");
    }
    return issues;
  }
  json j;
  try {
    j = json::parse(read_text(index));
  } catch (const std::exception& e) {
    return {std::string("index.json does not parse: ") + e.what()};
  }
  if (j.value("version", 0) != kIndexVersion) issues.push_back("index.json has unsupported version");
  if (!j.contains("records") || !j["records"].is_array()) {
    issues.push_back("index.json lacks a records array");
    return issues;
  }
  std::set<std::string> ids, dirs;
  for (const auto& entry : j["records"]) {
    const std::string id = entry.value("id", "");
    const std::string dir = entry.value("dir", "");
    if (id.empty() || dir.empty()) {
      issues.push_back("index entry without id or dir");
      continue;
    }
    if (!ids.insert(id).second) issues.push_back("duplicate id " + id);
    if (!dirs.insert(dir).second) issues.push_back("directory referenced twice: " + dir);
    if (entry.value("category", "").empty()) issues.push_back(id + ": empty category");
    const fs::path rdir = root / dir;
    RasterImage crop;
    try {
      crop = read_image(rdir / "crop.png");
    } catch (const std::exception& e) {
      issues.push_back(id + ": crop.png unreadable (" + e.what() + ")");
    }
    try {
      const auto pj = json::parse(read_text(rdir / "points.json"));
      if (pj.at("points").empty()) issues.push_back(id + ": no contact points");
      for (const auto& p : pj.at("points")) {
        const Pixel px = to_pixel({p.at(0).get<double>(), p.at(1).get<double>()});
        if (!crop.empty() && !crop.size().contains(px)) issues.push_back(id + ": contact point outside crop");
      }
    } catch (const std::exception& e) {
      issues.push_back(id + ": points.json unreadable (" + e.what() + ")");
    }
    std::set<std::string> expected{"crop.png", "points.json"};
    for (const auto& enc : entry.value("encoders", json::array())) {
      const std::string name = enc.get<std::string>();
      const fs::path f = rdir / embedding_file(name);
      expected.insert(embedding_file(name));
      try {
        read_tensor(f);
        if (entry.contains("digests") && entry["digests"].contains(name) &&
            entry["digests"][name].get<std::string>() != file_digest(f)) {
          issues.push_back(id + ": digest mismatch for " + name);
        }
      } catch (const std::exception& e) {
        issues.push_back(id + ": embedding " + name + " unreadable (" + e.what() + ")");
      }
    }
    std::error_code ec;
    if (fs::is_directory(rdir, ec)) {
      for (const auto& f : fs::directory_iterator(rdir)) {
        if (!expected.count(f.path().filename().string())) {
          issues.push_back(id + ": unreferenced file " + f.path().filename().string());
        }
      }
    }
  }
  std::error_code ec;
  if (fs::is_directory(root / "records", ec)) {
    for (const auto& d : fs::directory_iterator(root / "records")) {
      const std::string rel = "records/" + d.path().filename().string();
      if (!dirs.count(rel)) issues.push_back("unreferenced record directory " + rel);
    }
  }
  return issues;
}

}  // namespace afft
