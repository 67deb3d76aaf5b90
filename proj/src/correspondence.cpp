#include "afft/correspondence.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "afft/error.hpp"
#include "afft/extraction.hpp"
#include "afft/parallel.hpp"

namespace afft {

void DenseFeatureMap::validate() const {
  if (channels < 1 || grid_h < 1 || grid_w < 1) fail(ErrorCode::ShapeRejected, "feature map grid must be non-empty");
  if (image_h < grid_h || image_w < grid_w) fail(ErrorCode::ShapeRejected, "feature grid is finer than its image");
  if (data.size() != static_cast<std::size_t>(channels) * grid_h * grid_w) {
    fail(ErrorCode::ShapeRejected, "feature data length does not match [C, gh, gw]");
  }
  for (float v : data) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "feature map contains NaN or Inf");
  }
}

Tensor DenseFeatureMap::to_tensor() const {
  return Tensor({static_cast<std::uint64_t>(channels), static_cast<std::uint64_t>(grid_h),
                 static_cast<std::uint64_t>(grid_w)},
                data);
}

DenseFeatureMap DenseFeatureMap::from_tensor(const Tensor& t, int image_h, int image_w) {
  if (t.ndim() != 3) fail(ErrorCode::ShapeRejected, "feature map tensor must be [C, gh, gw]");
  DenseFeatureMap fm{static_cast<int>(t.shape()[0]), static_cast<int>(t.shape()[1]), static_cast<int>(t.shape()[2]),
                     image_h, image_w, t.data()};
  fm.validate();
  return fm;
}

// ---------------------------------------------------------------- dihedral transforms

std::string_view to_string(Dihedral d) {
  switch (d) {
    case Dihedral::R0: return "r0";
    case Dihedral::R90: return "r90";
    case Dihedral::R180: return "r180";
    case Dihedral::R270: return "r270";
    case Dihedral::FR0: return "fr0";
    case Dihedral::FR90: return "fr90";
    case Dihedral::FR180: return "fr180";
    case Dihedral::FR270: return "fr270";
  }
  return "r0";
}

Dihedral parse_dihedral(std::string_view code) {
  for (Dihedral d : kAllTransforms) {
    if (to_string(d) == code) return d;
  }
  fail(ErrorCode::InvalidInput, "unknown transform code '" + std::string(code) + "'");
}

Dihedral inverse(Dihedral d) {
  switch (d) {
    case Dihedral::R90: return Dihedral::R270;
    case Dihedral::R270: return Dihedral::R90;
    default: return d;  // identity, half turn and every reflection are involutions
  }
}

namespace {

bool flipped(Dihedral d) { return static_cast<int>(d) >= 4; }
int quarter_turns(Dihedral d) { return static_cast<int>(d) % 4; }

}  // namespace

Size transformed_size(const Size& s, Dihedral d) {
  return quarter_turns(d) % 2 == 1 ? Size{s.height, s.width} : s;
}

Point2d apply(Dihedral d, const Point2d& p, const Size& s) {
  const double w = s.width, h = s.height;
  Point2d q = p;
  if (flipped(d)) q.x = w - 1 - q.x;
  switch (quarter_turns(d)) {
    case 1: return {h - 1 - q.y, q.x};
    case 2: return {w - 1 - q.x, h - 1 - q.y};
    case 3: return {q.y, w - 1 - q.x};
    default: return q;
  }
}

Pixel apply(Dihedral d, const Pixel& p, const Size& s) { return to_pixel(apply(d, to_point(p), s)); }

Point2d apply_inverse(Dihedral d, const Point2d& p, const Size& s) {
  return apply(inverse(d), p, transformed_size(s, d));
}

RasterImage transform_image(const RasterImage& img, Dihedral d) {
  const Size ts = transformed_size(img.size(), d);
  RasterImage out(ts.width, ts.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const Pixel q = apply(d, Pixel{x, y}, img.size());
      for (int c = 0; c < img.channels; ++c) out.at(q.x, q.y, c) = img.at(x, y, c);
    }
  }
  return out;
}

GroundTruthMask transform_mask(const GroundTruthMask& mask, Dihedral d) {
  return mask_from_image(transform_image(image_from_mask(mask), d));
}

// ---------------------------------------------------------------- lookup and matching

std::vector<float> feature_at(const DenseFeatureMap& fm, const Point2d& p) {
  if (!(p.x >= 0 && p.y >= 0 && p.x <= fm.image_w - 1 && p.y <= fm.image_h - 1)) {
    fail(ErrorCode::OutOfBounds, "point (" + std::to_string(p.x) + ", " + std::to_string(p.y) + ") outside image");
  }
  const double gx = std::clamp((p.x + 0.5) * fm.grid_w / fm.image_w - 0.5, 0.0, fm.grid_w - 1.0);
  const double gy = std::clamp((p.y + 0.5) * fm.grid_h / fm.image_h - 0.5, 0.0, fm.grid_h - 1.0);
  const int x0 = static_cast<int>(std::floor(gx));
  const int y0 = static_cast<int>(std::floor(gy));
  const int x1 = std::min(x0 + 1, fm.grid_w - 1);
  const int y1 = std::min(y0 + 1, fm.grid_h - 1);
  const double ax = gx - x0, ay = gy - y0;
  std::vector<float> out(static_cast<std::size_t>(fm.channels));
  for (int c = 0; c < fm.channels; ++c) {
    const double v = (1 - ay) * ((1 - ax) * fm.at(c, y0, x0) + ax * fm.at(c, y0, x1)) +
                     ay * ((1 - ax) * fm.at(c, y1, x0) + ax * fm.at(c, y1, x1));
    out[static_cast<std::size_t>(c)] = static_cast<float>(v);
  }
  return out;
}

Point2d cell_center(const DenseFeatureMap& fm, int gy, int gx) {
  return {(gx + 0.5) * fm.image_w / fm.grid_w - 0.5, (gy + 0.5) * fm.image_h / fm.grid_h - 0.5};
}

MatchResult match_point(const DenseFeatureMap& src_fm, const Point2d& p_s, const DenseFeatureMap& tgt_fm) {
  if (src_fm.channels != tgt_fm.channels) {
    fail(ErrorCode::DimensionMismatch, "source has " + std::to_string(src_fm.channels) + " channels, target " +
                                           std::to_string(tgt_fm.channels));
  }
  const auto v = feature_at(src_fm, p_s);
  double nv = 0;
  for (float f : v) nv += static_cast<double>(f) * f;
  if (nv == 0.0) fail(ErrorCode::ZeroFeature, "source feature vector is zero");
  const double sqrt_nv = std::sqrt(nv);

  const std::size_t cells = static_cast<std::size_t>(tgt_fm.grid_h) * tgt_fm.grid_w;
  std::vector<double> dot(cells, 0.0), nt(cells, 0.0);
  for (int c = 0; c < tgt_fm.channels; ++c) {
    const double vc = v[static_cast<std::size_t>(c)];
    const float* plane = &tgt_fm.data[static_cast<std::size_t>(c) * cells];
    for (std::size_t i = 0; i < cells; ++i) {
      dot[i] += vc * plane[i];
      nt[i] += static_cast<double>(plane[i]) * plane[i];
    }
  }
  double best = -std::numeric_limits<double>::infinity();
  std::size_t best_i = cells;
  for (std::size_t i = 0; i < cells; ++i) {
    if (nt[i] == 0.0) continue;
    const double s = std::clamp(dot[i] / (sqrt_nv * std::sqrt(nt[i])), -1.0, 1.0);
    if (s > best) {
      best = s;
      best_i = i;
    }
  }
  if (best_i == cells) fail(ErrorCode::ZeroFeature, "every target feature vector is zero");
  const int gy = static_cast<int>(best_i / static_cast<std::size_t>(tgt_fm.grid_w));
  const int gx = static_cast<int>(best_i % static_cast<std::size_t>(tgt_fm.grid_w));
  MatchResult r;
  r.target_point = cell_center(tgt_fm, gy, gx);
  r.similarity = best;
  return r;
}

// ---------------------------------------------------------------- extractors

namespace {

// Bands of integer radius floor(sqrt(dx^2 + dy^2)); each band's offset set is closed under the dihedral group.
constexpr std::array<int, 10> kBandEdges{0, 1, 2, 3, 4, 6, 8, 11, 15, 20};
constexpr int kEnergyBands = 5;  // bands 1..5 also contribute sum of squares
constexpr int kToyChannels = static_cast<int>(kBandEdges.size()) - 1 + kEnergyBands + 2;

int isqrt(int v) {
  int r = static_cast<int>(std::sqrt(static_cast<double>(v)));
  while (r * r > v) --r;
  while ((r + 1) * (r + 1) <= v) ++r;
  return r;
}

}  // namespace

DenseFeatureMap ToyGridExtractor::features(const RasterImage& img) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "cannot extract features of an empty image");
  const RasterImage gray = to_gray(img);
  const int w = gray.width, h = gray.height;
  const int bands = static_cast<int>(kBandEdges.size()) - 1;
  const int rmax = kBandEdges.back();

  std::vector<std::vector<Pixel>> offsets(static_cast<std::size_t>(bands));
  for (int dy = -rmax; dy <= rmax; ++dy) {
    for (int dx = -rmax; dx <= rmax; ++dx) {
      const int r = isqrt(dx * dx + dy * dy);
      for (int b = 0; b < bands; ++b) {
        if (r >= kBandEdges[static_cast<std::size_t>(b)] && r < kBandEdges[static_cast<std::size_t>(b) + 1]) {
          offsets[static_cast<std::size_t>(b)].push_back({dx, dy});
        }
      }
    }
  }

  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<std::int64_t> raw(static_cast<std::size_t>(kToyChannels) * n, 0);
  auto g = [&](int x, int y) -> std::int64_t {
    return (x < 0 || y < 0 || x >= w || y >= h) ? 0 : gray.at(x, y);
  };
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      for (int b = 0; b < bands; ++b) {
        std::int64_t s = 0, e = 0;
        for (const auto& o : offsets[static_cast<std::size_t>(b)]) {
          const std::int64_t v = g(x + o.x, y + o.y);
          s += v;
          e += v * v;
        }
        raw[static_cast<std::size_t>(b) * n + i] = s;
        if (b >= 1 && b <= kEnergyBands) raw[static_cast<std::size_t>(bands + b - 1) * n + i] = e;
      }
      const std::int64_t cx = 2 * x + 1 - w, cy = 2 * y + 1 - h;
      raw[static_cast<std::size_t>(bands + kEnergyBands) * n + i] = cx * cx + cy * cy;
      raw[static_cast<std::size_t>(bands + kEnergyBands + 1) * n + i] = std::min({x, w - 1 - x, y, h - 1 - y});
    }
  }

  DenseFeatureMap fm{kToyChannels, h, w, h, w, std::vector<float>(raw.size())};
  for (int c = 0; c < kToyChannels; ++c) {
    __int128 sum = 0, sum_sq = 0;
    const std::size_t base = static_cast<std::size_t>(c) * n;
    for (std::size_t i = 0; i < n; ++i) {
      sum += raw[base + i];
      sum_sq += static_cast<__int128>(raw[base + i]) * raw[base + i];
    }
    // Integer moments make the statistics independent of pixel order.
    const double dn = static_cast<double>(n);
    const double mean = static_cast<double>(sum) / dn;
    const double var = static_cast<double>(sum_sq * static_cast<__int128>(n) - sum * sum) / (dn * dn);
    const double sd = var > 0 ? std::sqrt(var) : 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      fm.data[base + i] = sd > 0 ? static_cast<float>((static_cast<double>(raw[base + i]) - mean) / sd) : 0.f;
    }
  }
  return fm;
}

DenseFeatureMap ToyGridExtractor::extract(const RasterImage& original, Dihedral d) const {
  return features(d == Dihedral::R0 ? original : transform_image(original, d));
}

std::filesystem::path FileFeatureExtractor::tensor_path(const RasterImage& original, Dihedral d) const {
  return dir_ / (image_digest(original) + "." + std::string(to_string(d)) + ".rft");
}

DenseFeatureMap FileFeatureExtractor::extract(const RasterImage& original, Dihedral d) const {
  const auto tp = tensor_path(original, d);
  auto sidecar = tp;
  sidecar.replace_extension(".json");
  if (!std::filesystem::exists(tp) || !std::filesystem::exists(sidecar)) {
    fail(ErrorCode::MissingFeatureFile, "no feature map for transform " + std::string(to_string(d)) + " at " + tp.string());
  }
  int ih = 0, iw = 0;
  try {
    const auto j = nlohmann::json::parse(read_text(sidecar));
    ih = j.at("image_h").get<int>();
    iw = j.at("image_w").get<int>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseFailure, sidecar.string() + ": " + e.what());
  }
  const Size expect = transformed_size(original.size(), d);
  if (iw != expect.width || ih != expect.height) {
    fail(ErrorCode::ShapeRejected, sidecar.string() + " image size does not match the transformed image");
  }
  return DenseFeatureMap::from_tensor(read_tensor(tp), ih, iw);
}

DenseFeatureMap CachingExtractor::extract(const RasterImage& original, Dihedral d) const {
  const auto key = std::make_pair(image_digest(original), d);
  {
    std::lock_guard lock(mutex_);
    if (auto it = cache_.find(key); it != cache_.end()) return *it->second;
  }
  auto fm = std::make_shared<const DenseFeatureMap>(inner_->extract(original, d));
  std::lock_guard lock(mutex_);
  cache_.emplace(key, fm);
  return *fm;
}

std::shared_ptr<const FeatureExtractor> make_extractor(const std::string& spec) {
  if (spec == "toygrid") return std::make_shared<ToyGridExtractor>();
  if (spec.rfind("files:", 0) == 0) return std::make_shared<FileFeatureExtractor>(spec.substr(6));
  fail(ErrorCode::InvalidInput, "unknown extractor '" + spec + "' (expected toygrid or files:<dir>)");
}

// ---------------------------------------------------------------- transform search

TransformedSource prepare_source(const RasterImage& src_img, const FeatureExtractor& fx, bool use_transforms, int jobs) {
  TransformedSource src;
  src.size = src_img.size();
  const std::size_t count = use_transforms ? kAllTransforms.size() : 1;
  src.maps.resize(count);
  parallel_for(count, jobs, [&](std::size_t i) {
    src.maps[i] = {kAllTransforms[i], fx.extract(src_img, kAllTransforms[i])};
  });
  return src;
}

MatchResult match_with_transforms(const TransformedSource& src, const Pixel& p_s, const DenseFeatureMap& tgt_fm) {
  if (!src.size.contains(p_s)) fail(ErrorCode::OutOfBounds, "source point outside the source image");
  MatchResult best;
  bool have = false;
  for (const auto& [d, fm] : src.maps) {
    MatchResult r = match_point(fm, apply(d, to_point(p_s), src.size), tgt_fm);
    r.transform = d;
    if (!have || r.similarity > best.similarity) {
      best = r;
      have = true;
    }
  }
  return best;
}

MatchResult match_with_transforms(const RasterImage& src_img, const Pixel& p_s, const DenseFeatureMap& tgt_fm,
                                  const FeatureExtractor& fx, bool use_transforms) {
  return match_with_transforms(prepare_source(src_img, fx, use_transforms), p_s, tgt_fm);
}

std::string_view to_string(AveragingMode m) {
  return m == AveragingMode::MapThenAverage ? "map-then-average" : "average-then-map";
}

AveragingMode parse_averaging_mode(std::string_view s) {
  if (s == "map-then-average") return AveragingMode::MapThenAverage;
  if (s == "average-then-map") return AveragingMode::AverageThenMap;
  fail(ErrorCode::InvalidInput, "unknown averaging mode '" + std::string(s) + "'");
}

TransferResult transfer_affordance(const std::vector<const AffordanceRecord*>& sources, const RasterImage& tgt_img,
                                   const DenseFeatureMap& tgt_fm, const FeatureExtractor& fx,
                                   const TransferConfig& cfg, int jobs) {
  if (sources.empty()) fail(ErrorCode::InvalidInput, "transfer needs at least one source");
  if (tgt_fm.image_size() != tgt_img.size()) fail(ErrorCode::ShapeRejected, "target feature map describes another image size");

  std::vector<SourceScore> scores(sources.size());
  parallel_for(sources.size(), jobs, [&](std::size_t s) {
    const AffordanceRecord& rec = *sources[s];
    SourceScore& sc = scores[s];
    sc.record_id = rec.id;
    try {
      const TransformedSource prepared = prepare_source(rec.crop, fx, cfg.use_transforms);
      std::vector<Pixel> queries;
      if (cfg.averaging_mode == AveragingMode::MapThenAverage) {
        for (const auto& p : rec.contact_points.points) queries.push_back(to_pixel(p));
      } else {
        double sx = 0, sy = 0;
        for (const auto& p : rec.contact_points.points) {
          sx += p.x;
          sy += p.y;
        }
        const auto n = static_cast<double>(rec.contact_points.points.size());
        queries.push_back(to_pixel({sx / n, sy / n}));
      }
      if (queries.empty()) fail(ErrorCode::InvalidInput, "source " + rec.id + " has no contact points");
      double sim = 0, lx = 0, ly = 0;
      for (const auto& q : queries) {
        MatchResult m = match_with_transforms(prepared, q, tgt_fm);
        m.source_record_id = rec.id;
        sim += m.similarity;
        lx += m.target_point.x;
        ly += m.target_point.y;
        sc.matches.push_back(std::move(m));
      }
      const auto n = static_cast<double>(queries.size());
      sc.mean_similarity = sim / n;
      sc.mean_location = {lx / n, ly / n};
    } catch (const Error& e) {
      sc.error = e.what();
    }
  });

  std::optional<std::size_t> chosen;
  for (std::size_t s = 0; s < scores.size(); ++s) {
    if (scores[s].error) continue;
    if (!chosen || scores[s].mean_similarity > scores[*chosen].mean_similarity) chosen = s;
  }
  if (!chosen) fail(ErrorCode::AllSourcesFailed, "no source could be mapped onto the target: " + *scores.front().error);

  const SourceScore& sc = scores[*chosen];
  TransferResult out;
  out.source_id = sc.record_id;
  out.mean_similarity = sc.mean_similarity;
  out.best = *std::max_element(sc.matches.begin(), sc.matches.end(),
                               [](const MatchResult& a, const MatchResult& b) { return a.similarity < b.similarity; });
  out.centroid = to_pixel(sc.mean_location);
  out.centroid.x = std::clamp(out.centroid.x, 0, tgt_img.width - 1);
  out.centroid.y = std::clamp(out.centroid.y, 0, tgt_img.height - 1);
  out.points = sample_disk(out.centroid, cfg.resample_radius, cfg.resample_count, cfg.rng_seed, tgt_img.size());
  out.per_source = std::move(scores);
  return out;
}

}  // namespace afft
