#include "afft/pipeline.hpp"

#include <algorithm>
#include <nlohmann/json.hpp>

#include "afft/error.hpp"
#include "afft/parallel.hpp"

namespace fs = std::filesystem;

namespace afft {

namespace {

std::vector<fs::path> sorted_pngs(const fs::path& dir) {
  std::vector<fs::path> out;
  if (!fs::is_directory(dir)) return out;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
  }
  std::sort(out.begin(), out.end());
  return out;
}

SkippedItem skipped_from(const std::string& item, std::exception_ptr e) {
  try {
    std::rethrow_exception(e);
  } catch (const Error& err) {
    return {item, std::string(to_string(err.code())), err.what()};
  } catch (const std::exception& err) {
    return {item, "InvalidInput", err.what()};
  }
}

}  // namespace

VideoInput load_video(const fs::path& dir, const std::string& default_category) {
  VideoInput in;
  in.video_id = dir.filename().string();
  in.category = default_category;
  const fs::path meta = dir / "meta.json";
  if (fs::exists(meta)) {
    try {
      const auto j = nlohmann::json::parse(read_text(meta));
      in.video_id = j.value("video_id", in.video_id);
      in.category = j.value("category", in.category);
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::ParseFailure, meta.string() + ": " + e.what());
    }
  }
  if (in.category.empty()) fail(ErrorCode::InvalidInput, dir.string() + ": no category (meta.json or default)");

  const auto frames = sorted_pngs(dir / "frames");
  if (frames.empty()) fail(ErrorCode::EmptyImage, dir.string() + ": no frames");
  for (const auto& f : frames) in.video.frames.push_back(read_image(f));
  in.video.detections = load_detections(dir / "detections.jsonl");

  const auto skins = sorted_pngs(dir / "skin");
  if (!skins.empty()) {
    if (skins.size() != frames.size()) fail(ErrorCode::InvalidInput, dir.string() + ": skin/ and frames/ differ in length");
    for (const auto& s : skins) in.skin_masks.push_back(load_mask(s));
  }
  in.video.validate();
  return in;
}

ExtractSummary run_extract(const fs::path& videos_root, AffordanceMemory& mem, const ExtractionConfig& cfg,
                           const std::string& default_category, int jobs) {
  if (!fs::is_directory(videos_root)) fail(ErrorCode::IoFailure, videos_root.string() + " is not a directory");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(videos_root)) {
    if (e.is_directory()) dirs.push_back(e.path());
  }
  std::sort(dirs.begin(), dirs.end());

  struct Slot {
    std::optional<AffordanceRecord> rec;
    std::exception_ptr error;
  };
  std::vector<Slot> slots(dirs.size());
  parallel_for(dirs.size(), jobs, [&](std::size_t i) {
    try {
      VideoInput in = load_video(dirs[i], default_category);
      ExtractedAffordance ex = extract_affordance(in.video, in.skin_masks, cfg);
      AffordanceRecord rec;
      rec.id = in.video_id;
      rec.category = in.category;
      rec.crop = std::move(ex.crop.image);
      rec.contact_points = std::move(ex.crop.points);
      rec.provenance = {in.video_id, ex.clear_frame};
      slots[i].rec = std::move(rec);
    } catch (...) {
      slots[i].error = std::current_exception();
    }
  });

  ExtractSummary summary;
  for (std::size_t i = 0; i < dirs.size(); ++i) {
    const std::string item = dirs[i].filename().string();
    if (slots[i].error) {
      summary.skipped.push_back(skipped_from(item, slots[i].error));
      continue;
    }
    try {
      const std::string id = slots[i].rec->id;
      mem.add(std::move(*slots[i].rec));
      summary.records.push_back(id);
    } catch (...) {
      summary.skipped.push_back(skipped_from(item, std::current_exception()));
    }
  }
  return summary;
}

std::size_t build_memory_embeddings(AffordanceMemory& mem, const Embedder& enc) {
  std::vector<std::string> missing;
  for (const auto& rec : mem.records()) {
    if (!rec.embeddings.count(enc.name())) missing.push_back(rec.id);
  }
  for (const auto& id : missing) mem.put_embedding(id, enc.embed(mem.get(id).crop));
  return missing.size();
}

PipelineResult run_pipeline(const AffordanceMemory& mem, const RasterImage& target, const std::string& category,
                            const std::string& image_id, const Embedder& enc, const FeatureExtractor& fx,
                            const PipelineConfig& cfg, const PerceptualDistance* pd) {
  PipelineResult out;
  out.retrieved = retrieve(mem, target, category, cfg.top_k, enc, cfg.jobs);
  std::vector<const AffordanceRecord*> sources;
  if (cfg.perceptual_rerank) {
    if (!pd) fail(ErrorCode::InvalidInput, "perceptual re-rank requested without a distance");
    out.reranked = rerank_perceptual(mem, out.retrieved, target, *pd);
    sources.push_back(&mem.get(out.reranked->record_id));
  } else {
    for (const auto& r : out.retrieved) sources.push_back(&mem.get(r.record_id));
  }
  const DenseFeatureMap tgt_fm = fx.extract(target, Dihedral::R0);
  out.transfer = transfer_affordance(sources, target, tgt_fm, fx, cfg.transfer, cfg.jobs);
  out.prediction = {image_id, cfg.method, out.transfer.points};
  return out;
}

}  // namespace afft
