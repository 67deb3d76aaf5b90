#pragma once

// Stage drivers shared by the command-line tool, the Python module and the
// acceptance suite. Each stage reads and writes only the documented formats.

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "afft/correspondence.hpp"
#include "afft/evaluation.hpp"
#include "afft/extraction.hpp"
#include "afft/memory.hpp"
#include "afft/retrieval.hpp"

namespace afft {

/// A video directory: frames/*.png (name order), detections.jsonl,
/// optional skin/*.png, optional meta.json {"video_id","category"}.
struct VideoInput {
  std::string video_id;
  std::string category;
  VideoSequence video;
  std::vector<GroundTruthMask> skin_masks;  // empty when the directory has none
};

VideoInput load_video(const std::filesystem::path& dir, const std::string& default_category = {});

struct SkippedItem {
  std::string item;
  std::string reason;  // error code name
  std::string detail;
};

struct ExtractSummary {
  std::vector<std::string> records;
  std::vector<SkippedItem> skipped;
};

/// Extracts one record per video directory under `videos_root` into `mem`.
/// Per-video failures are collected, never thrown.
ExtractSummary run_extract(const std::filesystem::path& videos_root, AffordanceMemory& mem, const ExtractionConfig& cfg,
                           const std::string& default_category = {}, int jobs = 1);

/// Computes and persists embeddings for every record lacking one under `enc`. Returns how many were added.
std::size_t build_memory_embeddings(AffordanceMemory& mem, const Embedder& enc);

struct PipelineConfig {
  int top_k = 5;
  TransferConfig transfer;
  bool perceptual_rerank = false;  // keep only the perceptually closest of the top-k
  std::string method = "afft";
  int jobs = 1;
};

struct PipelineResult {
  Prediction prediction;
  std::vector<RetrievalResult> retrieved;
  std::optional<RetrievalResult> reranked;
  TransferResult transfer;
};

PipelineResult run_pipeline(const AffordanceMemory& mem, const RasterImage& target, const std::string& category,
                            const std::string& image_id, const Embedder& enc, const FeatureExtractor& fx,
                            const PipelineConfig& cfg, const PerceptualDistance* pd = nullptr);

// ---------------------------------------------------------------- synthetic corpus

struct FixtureOptions {
  std::uint64_t seed = 7;
  std::vector<std::string> categories{"bottle", "bowl", "cup", "knife", "scissors", "mug"};
  int objects_per_category = 2;
  int frames = 24;
};

struct FixtureObject {
  std::string video_id;
  std::string category;
  Pixel contact;  // ground-truth contact centre in crop coordinates
  int clear_frame = 0;
  int contact_frame = 0;
};

struct FixtureCorpus {
  std::filesystem::path root;
  std::filesystem::path videos;         // good videos, one record each
  std::filesystem::path faulty_videos;  // "nocontact" and "featureless"
  std::filesystem::path manifest_identical;
  std::filesystem::path manifest_transformed;
  std::filesystem::path manifest_all;
  std::filesystem::path grasp;  // intrinsics.json, depth.png, candidates.json
  std::vector<FixtureObject> objects;
};

/// Writes a desk-scale corpus of synthetic interaction videos with known contact
/// regions, evaluation targets (identical crops and dihedral variants) with
/// ground-truth masks, and a small RGB-D grasp scene.
FixtureCorpus generate_fixtures(const std::filesystem::path& out, const FixtureOptions& opt = {});

/// 3x3 box blur with edge replication.
RasterImage box_blur(const RasterImage& img);

}  // namespace afft
