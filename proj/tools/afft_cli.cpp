// afft: command-line entry point. One subcommand per pipeline stage.
//
// Exit codes: 0 success, 1 partial (some items skipped), 2 configuration or input error.

#include <CLI11.hpp>

#include <filesystem>
#include <iomanip>
#include <iostream>
#include <memory>
#include <nlohmann/json.hpp>
#include <sstream>

#include "afft/correspondence.hpp"
#include "afft/error.hpp"
#include "afft/evaluation.hpp"
#include "afft/grasp.hpp"
#include "afft/pipeline.hpp"

namespace fs = std::filesystem;
using namespace afft;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitPartial = 1;
constexpr int kExitInput = 2;

/// Reads JSON config files ({"jobs": 2, "transfer": {"topk": 3}}) and falls back to TOML.
class JsonOrTomlConfig : public CLI::ConfigTOML {
 public:
  std::vector<CLI::ConfigItem> from_config(std::istream& input) const override {
    std::stringstream buffer;
    buffer << input.rdbuf();
    const std::string text = buffer.str();
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first == std::string::npos || text[first] != '{') {
      std::istringstream again(text);
      return CLI::ConfigTOML::from_config(again);
    }
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
      throw CLI::ConfigError(std::string("config: ") + e.what());
    }
    std::vector<CLI::ConfigItem> items;
    flatten(j, {}, items);
    return items;
  }

 private:
  static std::string scalar(const nlohmann::json& v) { return v.is_string() ? v.get<std::string>() : v.dump(); }

  static void flatten(const nlohmann::json& j, const std::vector<std::string>& parents, std::vector<CLI::ConfigItem>& out) {
    for (const auto& [key, value] : j.items()) {
      if (value.is_object()) {
        auto p = parents;
        p.push_back(key);
        flatten(value, p, out);
        continue;
      }
      CLI::ConfigItem item;
      item.parents = parents;
      item.name = key;
      if (value.is_array()) {
        for (const auto& v : value) item.inputs.push_back(scalar(v));
      } else {
        item.inputs.push_back(scalar(value));
      }
      out.push_back(std::move(item));
    }
  }
};

struct Globals {
  std::uint64_t seed = 7;
  int jobs = 1;
};

struct ModelOptions {
  std::string encoder = "patchgram-v1";
  std::string embedding_dir;
  std::string extractor = "toygrid";
  std::string feature_dir;

  std::unique_ptr<Embedder> embedder() const { return make_embedder(encoder, embedding_dir); }
  std::shared_ptr<const FeatureExtractor> feature_extractor() const {
    const std::string spec = extractor == "files" ? "files:" + feature_dir : extractor;
    return std::make_shared<CachingExtractor>(make_extractor(spec));
  }
};

void add_model_options(CLI::App* cmd, ModelOptions& m, bool features) {
  cmd->add_option("--encoder", m.encoder, "Embedding encoder name (patchgram-v1 or an exported encoder)")
      ->capture_default_str();
  cmd->add_option("--embedding-dir", m.embedding_dir, "Directory of exported <digest>.<encoder>.emb.rft files");
  if (features) {
    cmd->add_option("--extractor", m.extractor, "Dense feature extractor: toygrid or files")->capture_default_str();
    cmd->add_option("--feature-dir", m.feature_dir, "Directory of exported feature maps (with --extractor files)");
  }
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(digits) << v;
  return os.str();
}

std::vector<int> parse_ints(const std::string& text, char sep) {
  std::vector<int> out;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, sep)) {
    try {
      std::size_t used = 0;
      out.push_back(std::stoi(part, &used));
      if (used != part.size()) throw std::invalid_argument(part);
    } catch (const std::exception&) {
      fail(ErrorCode::InvalidInput, "not an integer: '" + part + "'");
    }
  }
  return out;
}

Pixel parse_pixel(const std::string& text) {
  const auto v = parse_ints(text, ',');
  if (v.size() != 2) fail(ErrorCode::InvalidInput, "expected u,v but got '" + text + "'");
  return {v[0], v[1]};
}

void print_skips(const std::vector<SkippedItem>& skipped) {
  for (const auto& s : skipped) std::cout << "  skipped " << s.item << ": " << s.detail << "\n";
}

// ---------------------------------------------------------------- subcommands

struct FixturesCmd {
  std::string out;
  int per_category = 2;
  int frames = 24;

  int run(const Globals& g) const {
    FixtureOptions opt;
    opt.seed = g.seed;
    opt.objects_per_category = per_category;
    opt.frames = frames;
    const auto corpus = generate_fixtures(out, opt);
    std::cout << "fixtures: " << corpus.objects.size() << " videos in " << corpus.videos.string() << "\n"
              << "  faulty videos: " << corpus.faulty_videos.string() << "\n"
              << "  manifests: " << corpus.manifest_identical.string() << ", " << corpus.manifest_transformed.string()
              << ", " << corpus.manifest_all.string() << "\n"
              << "  grasp scene: " << corpus.grasp.string() << "\n";
    return kExitOk;
  }
};

struct ExtractCmd {
  std::string videos;
  std::string memory;
  std::string category;
  ExtractionConfig cfg;

  int run(const Globals& g) {
    cfg.rng_seed = g.seed;
    cfg.validate();
    AffordanceMemory mem = AffordanceMemory::open(memory);
    const ExtractSummary s = run_extract(videos, mem, cfg, category, g.jobs);
    std::cout << "extract: " << s.records.size() << " records, " << s.skipped.size() << " skipped\n";
    for (const auto& id : s.records) std::cout << "  record " << id << "\n";
    print_skips(s.skipped);
    return s.records.empty() ? kExitPartial : kExitOk;
  }
};

struct BuildMemoryCmd {
  std::string memory;
  ModelOptions model;

  int run(const Globals&) const {
    AffordanceMemory mem = AffordanceMemory::open(memory);
    const auto enc = model.embedder();
    const std::size_t added = build_memory_embeddings(mem, *enc);
    std::cout << "build-memory: " << mem.size() << " records, " << added << " new '" << enc->name()
              << "' embeddings\n";
    return kExitOk;
  }
};

struct RetrieveCmd {
  std::string memory;
  std::string target;
  std::string category;
  int topk = 5;
  std::string rerank;
  ModelOptions model;

  int run(const Globals& g) const {
    const AffordanceMemory mem = AffordanceMemory::open(memory);
    const RasterImage img = read_image(target);
    const auto enc = model.embedder();
    const auto results = retrieve(mem, img, category, topk, *enc, g.jobs);
    std::cout << "retrieve: " << (mem.has_category(category) ? "seen" : "unseen") << " category '"
              << normalize_category(category) << "', " << results.size() << " results\n";
    for (const auto& r : results) {
      std::cout << "  " << r.rank << " " << r.record_id << " (" << r.category << ") " << fmt(r.similarity, 6) << "\n";
    }
    if (!rerank.empty()) {
      if (rerank != "dssim64") fail(ErrorCode::InvalidInput, "unknown perceptual distance '" + rerank + "'");
      const auto best = rerank_perceptual(mem, results, img, Dssim64Distance{});
      std::cout << "  re-ranked: " << best.record_id << "\n";
    }
    return kExitOk;
  }
};

struct TransferCmd {
  std::string memory;
  std::string target;
  std::string category;
  std::string image_id;
  std::string manifest;
  std::string out;
  std::string overlay;
  std::string method = "afft";
  std::string avg_mode = "map-then-average";
  std::string rerank;
  int topk = 5;
  bool no_transforms = false;
  ModelOptions model;

  int run(const Globals& g) const {
    if (target.empty() == manifest.empty()) fail(ErrorCode::InvalidInput, "give exactly one of --target or --manifest");
    if (!target.empty() && category.empty()) fail(ErrorCode::InvalidInput, "--target needs --category");
    const AffordanceMemory mem = AffordanceMemory::open(memory);
    if (mem.empty()) fail(ErrorCode::EmptyMemory, "the affordance memory at " + memory + " has no records");

    PipelineConfig cfg;
    cfg.top_k = topk;
    cfg.method = method;
    cfg.jobs = g.jobs;
    cfg.transfer.averaging_mode = parse_averaging_mode(avg_mode);
    cfg.transfer.use_transforms = !no_transforms;
    cfg.transfer.rng_seed = g.seed;
    cfg.perceptual_rerank = !rerank.empty();
    if (cfg.perceptual_rerank && rerank != "dssim64") fail(ErrorCode::InvalidInput, "unknown perceptual distance '" + rerank + "'");
    const Dssim64Distance dssim;
    const auto enc = model.embedder();
    const auto fx = model.feature_extractor();

    struct Item {
      std::string id;
      fs::path image;
      std::string category;
    };
    std::vector<Item> items;
    if (!target.empty()) {
      items.push_back({image_id.empty() ? fs::path(target).stem().string() : image_id, target, category});
    } else {
      for (const auto& [id, e] : load_manifest(manifest)) items.push_back({id, e.image, e.category});
    }

    std::string lines;
    std::vector<SkippedItem> skipped;
    for (const auto& item : items) {
      try {
        const RasterImage img = read_image(item.image);
        const PipelineResult r = run_pipeline(mem, img, item.category, item.id, *enc, *fx, cfg, &dssim);
        lines += prediction_line(r.prediction) + "\n";
        std::cout << item.id << ": source " << r.transfer.source_id << ", transform "
                  << to_string(r.transfer.best.transform) << ", similarity " << fmt(r.transfer.mean_similarity, 6)
                  << ", " << r.retrieved.size() << " sources considered:";
        for (const auto& s : r.retrieved) std::cout << " " << s.record_id;
        std::cout << "\n";
        if (!overlay.empty()) {
          const fs::path path = items.size() == 1 && fs::path(overlay).extension() == ".png"
                                    ? fs::path(overlay)
                                    : fs::path(overlay) / (item.id + ".png");
          if (path.has_parent_path()) fs::create_directories(path.parent_path());
          write_image(render_overlay(img, r.prediction.points), path);
        }
      } catch (const Error& e) {
        if (e.code() == ErrorCode::EmptyMemory) throw;
        skipped.push_back({item.id, std::string(to_string(e.code())), e.what()});
        std::cout << item.id << ": skipped, [" << owning_module(e.code()) << "] " << e.what() << "\n";
      }
    }
    if (out.empty()) {
      std::cout << lines;
    } else {
      if (fs::path(out).has_parent_path()) fs::create_directories(fs::path(out).parent_path());
      write_text_atomic(out, lines);
      std::cout << "transfer: " << (items.size() - skipped.size()) << " predictions written to " << out << "\n";
    }
    if (skipped.size() == items.size()) return kExitInput;
    return skipped.empty() ? kExitOk : kExitPartial;
  }
};

struct EvaluateCmd {
  std::string preds;
  std::string manifest;
  int threshold = kDefaultMaskThreshold;
  std::string curve;
  std::string method;
  std::string out_json;
  std::string out_csv;
  bool allow_partial = false;

  int run(const Globals& g) const {
    EvalOptions opt;
    opt.threshold = threshold;
    opt.allow_partial = allow_partial;
    opt.jobs = g.jobs;
    if (!method.empty()) opt.method = method;
    const auto predictions = load_predictions(preds);
    const auto entries = load_manifest(manifest);
    const EvalReport report = evaluate_dataset(predictions, entries, opt);
    std::cout << report.to_table();
    if (!out_json.empty()) write_text_atomic(out_json, report.to_json());
    if (!out_csv.empty()) write_text_atomic(out_csv, report.to_csv());
    if (!curve.empty()) {
      std::cout << "threshold,sr_percent\n";
      for (const auto& [t, sr] : sr_threshold_curve(predictions, entries, parse_threshold_range(curve), opt)) {
        std::cout << t << "," << fmt(sr, 4) << "\n";
      }
    }
    return report.missing_masks.empty() && report.missing_predictions.empty() ? kExitOk : kExitPartial;
  }
};

struct CurveCmd {
  std::string preds;
  std::string manifest;
  std::string range = "0:255:8";
  std::string out;
  bool allow_partial = false;

  int run(const Globals& g) const {
    EvalOptions opt;
    opt.allow_partial = allow_partial;
    opt.jobs = g.jobs;
    std::string csv = "threshold,sr_percent\n";
    for (const auto& [t, sr] :
         sr_threshold_curve(load_predictions(preds), load_manifest(manifest), parse_threshold_range(range), opt)) {
      csv += std::to_string(t) + "," + fmt(sr, 4) + "\n";
    }
    if (out.empty()) {
      std::cout << csv;
    } else {
      write_text_atomic(out, csv);
    }
    return kExitOk;
  }
};

struct GraspSelectCmd {
  std::string candidates;
  std::string contact;
  std::string depth;
  std::string intrinsics;
  double max_distance = 0.1;

  int run(const Globals&) const {
    const auto cands = load_grasp_candidates(candidates);
    const CameraIntrinsics intr = load_intrinsics(intrinsics);
    const DepthImage d = read_depth(depth);
    const Pixel px = parse_pixel(contact);
    if (!Size{d.width, d.height}.contains(px)) fail(ErrorCode::OutOfBounds, "contact pixel outside the depth image");
    const double raw = sample_depth(d, px.x, px.y);
    const ContactPoint3D p = deproject_pixel(px.x, px.y, raw, intr);
    const std::size_t idx = max_distance >= 0 ? select_grasp_within(cands, p, max_distance) : select_grasp_index(cands, p);
    const auto& c = cands[idx];
    nlohmann::json out{{"index", idx},
                       {"contact_xyz", {p.xyz.x(), p.xyz.y(), p.xyz.z()}},
                       {"distance", (c.translation - p.xyz).norm()},
                       {"t", {c.translation.x(), c.translation.y(), c.translation.z()}},
                       {"width", c.width}};
    nlohmann::json r = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) r.push_back({c.rotation(i, 0), c.rotation(i, 1), c.rotation(i, 2)});
    out["R"] = r;
    if (c.score) out["score"] = *c.score;
    std::cout << out.dump() << "\n";
    return kExitOk;
  }
};

struct VerifyCmd {
  std::string memory;

  int run(const Globals&) const {
    if (!fs::is_directory(memory)) fail(ErrorCode::IoFailure, memory + " is not a directory");
    const auto issues = verify_memory(memory);
    for (const auto& i : issues) std::cout << "  " << i << "\n";
    std::cout << "verify: " << (issues.empty() ? "ok" : std::to_string(issues.size()) + " problem(s)") << "\n";
    return issues.empty() ? kExitOk : kExitPartial;
  }
};

struct VisualizeCmd {
  std::string image;
  std::string mask;
  std::string points;
  std::string preds;
  std::string image_id;
  std::string out;

  int run(const Globals&) const {
    const RasterImage img = read_image(image);
    std::vector<Pixel> pts;
    if (!points.empty()) {
      std::stringstream ss(points);
      std::string part;
      while (std::getline(ss, part, ';')) pts.push_back(parse_pixel(part));
    }
    if (!preds.empty()) {
      const std::string id = image_id.empty() ? fs::path(image).stem().string() : image_id;
      bool found = false;
      for (const auto& p : load_predictions(preds)) {
        if (p.image_id == id) {
          pts.insert(pts.end(), p.points.begin(), p.points.end());
          found = true;
        }
      }
      if (!found) fail(ErrorCode::MissingPrediction, "no prediction for '" + id + "'");
    }
    std::optional<GroundTruthMask> m;
    if (!mask.empty()) m = load_mask(mask);
    write_image(render_overlay(img, pts, m), out);
    std::cout << "visualize: " << pts.size() << " points drawn to " << out << "\n";
    return kExitOk;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"afft: one-shot affordance transfer from interaction videos"};
  app.require_subcommand(1);
  app.config_formatter(std::make_shared<JsonOrTomlConfig>());
  app.set_config("--config", "", "TOML or JSON file with option defaults ([section] per subcommand)");
  app.allow_config_extras(CLI::config_extras_mode::error);

  Globals g;
  app.add_option("--seed", g.seed, "Seed for every random choice")->capture_default_str();
  app.add_option("--jobs", g.jobs, "Worker threads inside a stage")->capture_default_str()->check(CLI::PositiveNumber);

  FixturesCmd fixtures;
  auto* c_fix = app.add_subcommand("fixtures", "Generate the synthetic test corpus");
  c_fix->add_option("--out", fixtures.out, "Output directory")->required();
  c_fix->add_option("--objects-per-category", fixtures.per_category)->capture_default_str()->check(CLI::PositiveNumber);
  c_fix->add_option("--frames", fixtures.frames)->capture_default_str()->check(CLI::Range(12, 240));

  ExtractCmd extract;
  auto* c_ext = app.add_subcommand("extract", "Extract affordance records from video directories");
  c_ext->add_option("--videos", extract.videos, "Directory of video directories")->required()->check(CLI::ExistingDirectory);
  c_ext->add_option("--memory", extract.memory, "Affordance memory directory")->required();
  c_ext->add_option("--category", extract.category, "Category for videos without meta.json");
  c_ext->add_option("--window", extract.cfg.window_half_width, "Clear-frame search half width")->capture_default_str();
  c_ext->add_option("--samples", extract.cfg.sample_count, "Contact samples per video")->capture_default_str();
  c_ext->add_option("--radius", extract.cfg.resample_radius, "Final resampling radius")->capture_default_str();
  c_ext->add_option("--points", extract.cfg.resample_count, "Final point count")->capture_default_str();
  c_ext->add_flag("--homography-in-bbox", extract.cfg.homography_in_bbox, "Match corners inside the object box only");

  BuildMemoryCmd build;
  auto* c_build = app.add_subcommand("build-memory", "Compute missing record embeddings");
  c_build->add_option("--memory", build.memory)->required()->check(CLI::ExistingDirectory);
  add_model_options(c_build, build.model, false);

  RetrieveCmd ret;
  auto* c_ret = app.add_subcommand("retrieve", "Rank memory records against a target image");
  c_ret->add_option("--memory", ret.memory)->required()->check(CLI::ExistingDirectory);
  c_ret->add_option("--target", ret.target)->required()->check(CLI::ExistingFile);
  c_ret->add_option("--category", ret.category)->required();
  c_ret->add_option("--topk", ret.topk)->capture_default_str()->check(CLI::PositiveNumber);
  c_ret->add_option("--rerank", ret.rerank, "Perceptual re-rank of the shortlist (dssim64)");
  add_model_options(c_ret, ret.model, false);

  TransferCmd tr;
  auto* c_tr = app.add_subcommand("transfer", "Predict contact points on targets (retrieve + correspond)");
  c_tr->add_option("--memory", tr.memory)->required()->check(CLI::ExistingDirectory);
  c_tr->add_option("--target", tr.target, "Single target image")->check(CLI::ExistingFile);
  c_tr->add_option("--category", tr.category, "Target category (with --target)");
  c_tr->add_option("--image-id", tr.image_id, "Prediction id (with --target; default: file stem)");
  c_tr->add_option("--manifest", tr.manifest, "Evaluation manifest of targets")->check(CLI::ExistingFile);
  c_tr->add_option("--out", tr.out, "Prediction JSON-lines file (default: stdout)");
  c_tr->add_option("--overlay", tr.overlay, "Overlay PNG (single target) or directory");
  c_tr->add_option("--method", tr.method)->capture_default_str();
  c_tr->add_option("--topk", tr.topk)->capture_default_str()->check(CLI::PositiveNumber);
  c_tr->add_option("--avg-mode", tr.avg_mode, "map-then-average or average-then-map")->capture_default_str();
  c_tr->add_flag("--no-transforms", tr.no_transforms, "Search only the untransformed source");
  c_tr->add_option("--rerank", tr.rerank, "Keep only the perceptually closest source (dssim64)");
  add_model_options(c_tr, tr.model, true);

  EvaluateCmd ev;
  auto* c_ev = app.add_subcommand("evaluate", "Score predictions against ground-truth masks");
  c_ev->add_option("--preds", ev.preds)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--manifest", ev.manifest)->required()->check(CLI::ExistingFile);
  c_ev->add_option("--threshold", ev.threshold)->capture_default_str()->check(CLI::Range(0, 255));
  c_ev->add_option("--curve", ev.curve, "Also print the SR curve over start:stop:step");
  c_ev->add_option("--method", ev.method, "Only score predictions of this method");
  c_ev->add_option("--out-json", ev.out_json);
  c_ev->add_option("--out-csv", ev.out_csv);
  c_ev->add_flag("--allow-partial", ev.allow_partial, "Score what is available instead of failing");

  CurveCmd cv;
  auto* c_cv = app.add_subcommand("curve", "SR over a range of mask thresholds");
  c_cv->add_option("--preds", cv.preds)->required()->check(CLI::ExistingFile);
  c_cv->add_option("--manifest", cv.manifest)->required()->check(CLI::ExistingFile);
  c_cv->add_option("--range", cv.range, "start:stop:step")->capture_default_str();
  c_cv->add_option("--out", cv.out, "CSV output (default: stdout)");
  c_cv->add_flag("--allow-partial", cv.allow_partial);

  GraspSelectCmd gs;
  auto* c_gs = app.add_subcommand("grasp-select", "Pick the grasp nearest to a contact pixel");
  c_gs->add_option("--candidates", gs.candidates)->required()->check(CLI::ExistingFile);
  c_gs->add_option("--contact", gs.contact, "u,v")->required();
  c_gs->add_option("--depth", gs.depth, "16-bit depth PNG")->required()->check(CLI::ExistingFile);
  c_gs->add_option("--intrinsics", gs.intrinsics)->required()->check(CLI::ExistingFile);
  c_gs->add_option("--max-distance", gs.max_distance, "Reject grasps farther than this in metres; negative disables")->capture_default_str();

  VerifyCmd vf;
  auto* c_vf = app.add_subcommand("verify", "Check a memory directory for consistency");
  c_vf->add_option("--memory", vf.memory)->required();

  VisualizeCmd vz;
  auto* c_vz = app.add_subcommand("visualize", "Draw points (and a mask) over an image");
  c_vz->add_option("--image", vz.image)->required()->check(CLI::ExistingFile);
  c_vz->add_option("--mask", vz.mask)->check(CLI::ExistingFile);
  c_vz->add_option("--points", vz.points, "x,y;x,y;...");
  c_vz->add_option("--preds", vz.preds)->check(CLI::ExistingFile);
  c_vz->add_option("--image-id", vz.image_id);
  c_vz->add_option("--out", vz.out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitInput;
  }

  try {
    if (c_fix->parsed()) return fixtures.run(g);
    if (c_ext->parsed()) return extract.run(g);
    if (c_build->parsed()) return build.run(g);
    if (c_ret->parsed()) return ret.run(g);
    if (c_tr->parsed()) return tr.run(g);
    if (c_ev->parsed()) return ev.run(g);
    if (c_cv->parsed()) return cv.run(g);
    if (c_gs->parsed()) return gs.run(g);
    if (c_vf->parsed()) return vf.run(g);
    if (c_vz->parsed()) return vz.run(g);
  } catch (const Error& e) {
    std::cerr << "error: [" << owning_module(e.code()) << "] " << e.what() << "\n";
    return kExitInput;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitInput;
  }
  return kExitInput;
}
