#include "afft/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "afft/error.hpp"
#include "afft/parallel.hpp"

namespace afft {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void check_points(std::span<const Pixel> points, const Size& s) {
  if (points.empty()) fail(ErrorCode::EmptyPrediction, "no predicted points");
  for (const auto& p : points) {
    if (!s.contains(p)) {
      fail(ErrorCode::OutOfBounds, "point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside mask");
    }
  }
}

}  // namespace

double metric_sr(std::span<const Pixel> points, const GroundTruthMask& mask, int threshold) {
  check_points(points, mask.size());
  std::size_t hits = 0;
  for (const auto& p : points) hits += mask.at(p) > threshold;
  return static_cast<double>(hits) / static_cast<double>(points.size());
}

double metric_nss(std::span<const Pixel> points, const GroundTruthMask& mask) {
  check_points(points, mask.size());
  const int peak = mask.values.empty() ? 0 : *std::max_element(mask.values.begin(), mask.values.end());
  if (peak == 0) return 0.0;
  double sum = 0.0;
  for (const auto& p : points) sum += static_cast<double>(mask.at(p)) / peak;
  return sum / static_cast<double>(points.size());
}

namespace detail {
double nss_ratio(std::span<const Pixel> points, std::span<const double> values, int width) {
  if (points.empty()) fail(ErrorCode::EmptyPrediction, "no predicted points");
  const double peak = values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
  if (peak <= 0.0) return 0.0;
  double sum = 0.0;
  for (const auto& p : points) sum += values[static_cast<std::size_t>(p.y) * width + p.x] / peak;
  return sum / static_cast<double>(points.size());
}
}  // namespace detail

std::vector<Pixel> mask_contour(const GroundTruthMask& mask, int threshold) {
  std::vector<Pixel> contour;
  const int w = mask.width, h = mask.height;
  auto above = [&](int x, int y) { return mask.at(x, y) > threshold; };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (!above(x, y)) continue;
      const bool edge = x == 0 || y == 0 || x == w - 1 || y == h - 1 || !above(x - 1, y) || !above(x + 1, y) ||
                        !above(x, y - 1) || !above(x, y + 1);
      if (edge) contour.push_back({x, y});
    }
  }
  return contour;
}

double metric_dtm(std::span<const Pixel> points, const GroundTruthMask& mask, int threshold) {
  check_points(points, mask.size());
  const auto contour = mask_contour(mask, threshold);
  if (contour.empty()) fail(ErrorCode::EmptyMaskRegion, "mask has no pixel above threshold");
  double total = 0.0;
  for (const auto& p : points) {
    if (mask.at(p) > threshold) continue;
    long best = std::numeric_limits<long>::max();
    for (const auto& c : contour) {
      const long dx = c.x - p.x, dy = c.y - p.y;
      best = std::min(best, dx * dx + dy * dy);
    }
    total += std::sqrt(static_cast<double>(best));
  }
  const double diag = std::hypot(static_cast<double>(mask.width), static_cast<double>(mask.height));
  return total / static_cast<double>(points.size()) / diag;
}

// ---------------------------------------------------------------- files

std::map<std::string, ManifestEntry> load_manifest(const fs::path& path) {
  std::map<std::string, ManifestEntry> out;
  const fs::path base = path.parent_path();
  try {
    const auto j = json::parse(read_text(path));
    for (const auto& [id, e] : j.items()) {
      ManifestEntry m;
      m.image_id = id;
      m.image = base / e.at("image").get<std::string>();
      m.mask = base / e.at("mask").get<std::string>();
      m.category = e.at("category").get<std::string>();
      m.seen = e.value("seen", true);
      out.emplace(id, std::move(m));
    }
  } catch (const json::exception& e) {
    fail(ErrorCode::ParseFailure, path.string() + ": " + e.what());
  }
  return out;
}

void write_manifest(const std::map<std::string, ManifestEntry>& entries, const fs::path& path) {
  json j = json::object();
  const fs::path base = fs::absolute(path).parent_path();
  for (const auto& [id, m] : entries) {
    j[id] = {{"image", fs::relative(fs::absolute(m.image), base).generic_string()},
             {"mask", fs::relative(fs::absolute(m.mask), base).generic_string()},
             {"category", m.category},
             {"seen", m.seen}};
  }
  write_text_atomic(path, j.dump(2) + "\n");
}

std::vector<Prediction> load_predictions(const fs::path& path) {
  std::vector<Prediction> preds;
  const auto lines = read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      const auto j = json::parse(lines[i]);
      Prediction p;
      p.image_id = j.at("image_id").get<std::string>();
      p.method = j.value("method", "");
      for (const auto& pt : j.at("points")) p.points.push_back({pt.at(0).get<int>(), pt.at(1).get<int>()});
      if (p.points.size() > kMaxPredictionPoints) {
        fail(ErrorCode::InvalidInput, p.image_id + " has more than 5 points");
      }
      preds.push_back(std::move(p));
    } catch (const json::exception& e) {
      fail(ErrorCode::ParseFailure, path.string() + " line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  return preds;
}

std::string prediction_line(const Prediction& p) {
  json pts = json::array();
  for (const auto& q : p.points) pts.push_back({q.x, q.y});
  return json{{"image_id", p.image_id}, {"method", p.method}, {"points", pts}}.dump();
}

// ---------------------------------------------------------------- dataset

namespace {

Aggregate aggregate(const std::vector<const ImageMetrics*>& rows) {
  Aggregate a;
  a.images = rows.size();
  if (rows.empty()) return a;
  for (const auto* r : rows) {
    a.sr_percent += r->sr;
    a.nss += r->nss;
    a.dtm += r->dtm;
  }
  const auto n = static_cast<double>(rows.size());
  a.sr_percent = 100.0 * a.sr_percent / n;
  a.nss /= n;
  a.dtm /= n;
  return a;
}

json aggregate_json(const Aggregate& a) {
  return {{"images", a.images}, {"sr", a.sr_percent}, {"nss", a.nss}, {"dtm", a.dtm}};
}

struct Paired {
  const Prediction* pred;
  const ManifestEntry* entry;
};

// Pairs predictions with manifest rows; records the unmatched ones on the report.
std::vector<Paired> pair_up(const std::vector<Prediction>& preds, const std::map<std::string, ManifestEntry>& manifest,
                            const EvalOptions& opt, EvalReport& report) {
  std::map<std::string, const Prediction*> by_id;
  for (const auto& p : preds) {
    if (opt.method && p.method != *opt.method) continue;
    if (!by_id.emplace(p.image_id, &p).second) {
      fail(ErrorCode::InvalidInput, "duplicate prediction for " + p.image_id);
    }
  }
  std::vector<Paired> out;
  for (const auto& [id, p] : by_id) {
    const auto it = manifest.find(id);
    if (it == manifest.end() || !fs::exists(it->second.mask)) {
      report.missing_masks.push_back(id);
      continue;
    }
    out.push_back({p, &it->second});
  }
  for (const auto& [id, e] : manifest) {
    if (!by_id.count(id)) report.missing_predictions.push_back(id);
  }
  if (!opt.allow_partial) {
    if (!report.missing_masks.empty()) {
      fail(ErrorCode::MissingMask, "no mask for " + std::to_string(report.missing_masks.size()) +
                                       " prediction(s), first: " + report.missing_masks.front());
    }
    if (!report.missing_predictions.empty()) {
      fail(ErrorCode::MissingPrediction, "no prediction for " + std::to_string(report.missing_predictions.size()) +
                                             " image(s), first: " + report.missing_predictions.front());
    }
  }
  return out;
}

}  // namespace

EvalReport evaluate_dataset(const std::vector<Prediction>& preds, const std::map<std::string, ManifestEntry>& manifest,
                            const EvalOptions& opt) {
  EvalReport report;
  report.threshold = opt.threshold;
  const auto pairs = pair_up(preds, manifest, opt, report);

  report.images.resize(pairs.size());
  parallel_for(pairs.size(), opt.jobs, [&](std::size_t i) {
    const auto& [pred, entry] = pairs[i];
    const GroundTruthMask mask = load_mask(entry->mask);
    ImageMetrics& m = report.images[i];
    m.image_id = entry->image_id;
    m.category = entry->category;
    m.seen = entry->seen;
    m.points = pred->points.size();
    m.sr = metric_sr(pred->points, mask, opt.threshold);
    m.nss = metric_nss(pred->points, mask);
    m.dtm = metric_dtm(pred->points, mask, opt.threshold);
  });

  std::map<std::string, std::vector<const ImageMetrics*>> groups;
  std::vector<const ImageMetrics*> all, seen, unseen;
  for (const auto& m : report.images) {
    groups[m.category].push_back(&m);
    all.push_back(&m);
    (m.seen ? seen : unseen).push_back(&m);
  }
  for (const auto& [cat, rows] : groups) report.per_category[cat] = aggregate(rows);
  report.overall = aggregate(all);
  if (!seen.empty()) report.seen = aggregate(seen);
  if (!unseen.empty()) report.unseen = aggregate(unseen);
  return report;
}

std::string EvalReport::to_json() const {
  json imgs = json::array();
  for (const auto& m : images) {
    imgs.push_back({{"image_id", m.image_id},
                    {"category", m.category},
                    {"seen", m.seen},
                    {"points", m.points},
                    {"sr", m.sr},
                    {"nss", m.nss},
                    {"dtm", m.dtm}});
  }
  json cats = json::object();
  for (const auto& [c, a] : per_category) cats[c] = aggregate_json(a);
  json j = {{"threshold", threshold},
            {"overall", aggregate_json(overall)},
            {"categories", cats},
            {"images", imgs},
            {"missing_masks", missing_masks},
            {"missing_predictions", missing_predictions}};
  if (seen) j["seen"] = aggregate_json(*seen);
  if (unseen) j["unseen"] = aggregate_json(*unseen);
  return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
  std::ostringstream out;
  out << "group,images,sr_percent,nss,dtm\n";
  char buf[256];
  auto row = [&](const std::string& name, const Aggregate& a) {
    std::snprintf(buf, sizeof buf, "%s,%zu,%.4f,%.6f,%.6f\n", name.c_str(), a.images, a.sr_percent, a.nss, a.dtm);
    out << buf;
  };
  for (const auto& [c, a] : per_category) row(c, a);
  if (seen) row("[seen]", *seen);
  if (unseen) row("[unseen]", *unseen);
  row("[overall]", overall);
  return out.str();
}

std::string EvalReport::to_table() const {
  std::ostringstream out;
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-20s %7s %9s %8s %8s\n", "category", "images", "SR(%)", "NSS", "DTM");
  out << buf;
  auto row = [&](const std::string& name, const Aggregate& a) {
    std::snprintf(buf, sizeof buf, "%-20s %7zu %9.2f %8.4f %8.4f\n", name.c_str(), a.images, a.sr_percent, a.nss, a.dtm);
    out << buf;
  };
  for (const auto& [c, a] : per_category) row(c, a);
  if (seen) row("(seen)", *seen);
  if (unseen) row("(unseen)", *unseen);
  row("overall", overall);
  std::snprintf(buf, sizeof buf, "threshold %d", threshold);
  out << buf;
  if (!missing_masks.empty() || !missing_predictions.empty()) {
    out << ", skipped " << missing_masks.size() << " without mask, " << missing_predictions.size()
        << " without prediction";
  }
  out << "\n";
  return out.str();
}

std::vector<std::pair<int, double>> sr_threshold_curve(const std::vector<Prediction>& preds,
                                                       const std::map<std::string, ManifestEntry>& manifest,
                                                       const std::vector<int>& thresholds, const EvalOptions& opt) {
  for (int t : thresholds) {
    if (t < 0 || t > 255) fail(ErrorCode::InvalidInput, "threshold " + std::to_string(t) + " outside [0, 255]");
  }
  EvalReport scratch;
  const auto pairs = pair_up(preds, manifest, opt, scratch);
  std::vector<GroundTruthMask> masks(pairs.size());
  parallel_for(pairs.size(), opt.jobs, [&](std::size_t i) { masks[i] = load_mask(pairs[i].entry->mask); });

  std::vector<std::pair<int, double>> curve;
  for (int t : thresholds) {
    double sum = 0.0;
    for (std::size_t i = 0; i < pairs.size(); ++i) sum += metric_sr(pairs[i].pred->points, masks[i], t);
    curve.emplace_back(t, pairs.empty() ? 0.0 : 100.0 * sum / static_cast<double>(pairs.size()));
  }
  return curve;
}

std::vector<int> parse_threshold_range(const std::string& spec) {
  int start = 0, stop = 0, step = 0;
  char c1 = 0, c2 = 0;
  std::istringstream in(spec);
  if (!(in >> start >> c1 >> stop >> c2 >> step) || c1 != ':' || c2 != ':' || step <= 0 || stop < start) {
    fail(ErrorCode::InvalidInput, "threshold range must be start:stop:step, got '" + spec + "'");
  }
  std::vector<int> out;
  for (int t = start; t <= stop; t += step) out.push_back(t);
  if (out.back() != stop) out.push_back(stop);
  return out;
}

// ---------------------------------------------------------------- rendering

RasterImage render_overlay(const RasterImage& img, std::span<const Pixel> points,
                           const std::optional<GroundTruthMask>& mask) {
  RasterImage out(img.width, img.height, 3);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < 3; ++c) out.at(x, y, c) = img.at(x, y, img.channels == 1 ? 0 : c);
    }
  }
  if (mask) {
    if (mask->size() != img.size()) fail(ErrorCode::InvalidInput, "overlay mask size differs from image");
    constexpr double kAlpha = 0.4;
    constexpr std::array<double, 3> kTint{255.0, 0.0, 0.0};
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        if (mask->at(x, y) == 0) continue;
        for (int c = 0; c < 3; ++c) {
          const double v = (1.0 - kAlpha) * out.at(x, y, c) + kAlpha * kTint[static_cast<std::size_t>(c)];
          out.at(x, y, c) = static_cast<std::uint8_t>(std::lround(v));
        }
      }
    }
  }
  constexpr int kRadius = 5;
  for (const auto& p : points) {
    if (!img.size().contains(p)) fail(ErrorCode::OutOfBounds, "overlay point outside image");
    for (int dy = -kRadius; dy <= kRadius; ++dy) {
      for (int dx = -kRadius; dx <= kRadius; ++dx) {
        const Pixel q{p.x + dx, p.y + dy};
        if (dx * dx + dy * dy > kRadius * kRadius || !img.size().contains(q)) continue;
        out.at(q.x, q.y, 0) = 0;
        out.at(q.x, q.y, 1) = 255;
        out.at(q.x, q.y, 2) = 0;
      }
    }
  }
  return out;
}

std::vector<Pixel> heatmap_top_points(const Tensor& heatmap, std::size_t k) {
  const auto& s = heatmap.shape();
  if (!(s.size() == 2 || (s.size() == 3 && s[0] == 1))) fail(ErrorCode::ShapeRejected, "heatmap must be [H,W] or [1,H,W]");
  const auto w = s[s.size() - 1];
  std::vector<std::size_t> idx(heatmap.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const auto& d = heatmap.data();
  const std::size_t take = std::min<std::size_t>(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(take), idx.end(),
                    [&](std::size_t a, std::size_t b) { return d[a] != d[b] ? d[a] > d[b] : a < b; });
  std::vector<Pixel> out;
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back({static_cast<int>(idx[i] % w), static_cast<int>(idx[i] / w)});
  }
  return out;
}

}  // namespace afft
