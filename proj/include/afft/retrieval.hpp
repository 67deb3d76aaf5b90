#pragma once

// Cosine-similarity retrieval over the affordance memory with seen/unseen
// category gating and an optional perceptual re-rank of the shortlist.

#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "afft/memory.hpp"

namespace afft {

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string name() const = 0;
  virtual EmbeddingVector embed(const RasterImage& img) const = 0;
};

/// Built-in baseline ("patchgram-v1"): per cell of a 4x4 grid, an 8-bin intensity
/// histogram and an 8-bin magnitude-weighted gradient-orientation histogram, at
/// full and half resolution; 512 values, L2-normalized.
class PatchgramEmbedder final : public Embedder {
 public:
  static constexpr std::size_t kDim = 512;
  std::string name() const override { return "patchgram-v1"; }
  EmbeddingVector embed(const RasterImage& img) const override;
};

/// Looks up exporter output "<dir>/<image-digest>.<encoder>.emb.rft".
class FileEmbedder final : public Embedder {
 public:
  FileEmbedder(std::filesystem::path dir, std::string encoder) : dir_(std::move(dir)), encoder_(std::move(encoder)) {}
  std::string name() const override { return encoder_; }
  EmbeddingVector embed(const RasterImage& img) const override;
  std::filesystem::path path_for(const RasterImage& img) const;

 private:
  std::filesystem::path dir_;
  std::string encoder_;
};

class PerceptualDistance {
 public:
  virtual ~PerceptualDistance() = default;
  virtual std::string name() const = 0;
  virtual double distance(const RasterImage& a, const RasterImage& b) const = 0;
};

/// Built-in baseline ("dssim64"): mean per-pixel CIELAB Euclidean distance after a
/// bilinear resize of both images to 64x64.
class Dssim64Distance final : public PerceptualDistance {
 public:
  std::string name() const override { return "dssim64"; }
  double distance(const RasterImage& a, const RasterImage& b) const override;
};

std::unique_ptr<Embedder> make_embedder(const std::string& name, const std::filesystem::path& embedding_dir = {});

struct RetrievalResult {
  std::string record_id;
  std::string category;
  double similarity = 0.0;
  int rank = 0;  // 1-based
};

/// dot(a,b) / (|a||b|) accumulated in double, clamped to [-1, 1].
double cosine_similarity(std::span<const float> a, std::span<const float> b);
double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b);

struct Candidate {
  std::string id;
  std::string category;
  const EmbeddingVector* embedding = nullptr;
};

/// Top-k by similarity, ties broken by smaller id. Returns the whole pool when it is smaller than k.
std::vector<RetrievalResult> rank_candidates(const EmbeddingVector& query, const std::vector<Candidate>& pool, int k,
                                             int jobs = 1);

/// Embedding of a record under `enc`, computed from its crop (and cached) when not stored.
EmbeddingVector record_embedding(const AffordanceMemory& mem, const AffordanceRecord& rec, const Embedder& enc);

/// Seen categories search within the category; unseen ones search the whole memory.
std::vector<RetrievalResult> retrieve(const AffordanceMemory& mem, const RasterImage& target_crop,
                                      const std::string& target_category, int k, const Embedder& enc, int jobs = 1);

/// The shortlist entry whose crop is perceptually closest to the target; ties keep the better cosine rank.
RetrievalResult rerank_perceptual(const AffordanceMemory& mem, const std::vector<RetrievalResult>& results,
                                  const RasterImage& target_crop, const PerceptualDistance& pd);

}  // namespace afft
