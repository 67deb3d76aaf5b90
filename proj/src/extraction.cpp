#include "afft/extraction.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <nlohmann/json.hpp>

#include "afft/error.hpp"
#include "afft/random.hpp"

namespace afft {

namespace {

constexpr std::uint64_t kDiskSeedMix = 0x9e3779b97f4a7c15ULL;

int reflect101(int i, int n) {
  if (n == 1) return 0;
  while (i < 0 || i >= n) {
    if (i < 0) i = -i;
    if (i >= n) i = 2 * n - 2 - i;
  }
  return i;
}

// Luma plane in double precision (ITU-R 601 weights for RGB input).
std::vector<double> luma_plane(const RasterImage& img) {
  std::vector<double> g(static_cast<std::size_t>(img.width) * img.height);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * img.width + x;
      g[i] = img.channels == 1 ? img.at(x, y)
                               : 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
    }
  }
  return g;
}

}  // namespace

bool FrameDetection::obstructed() const {
  if (!hand_bbox || !object_bbox) return false;
  return !intersect(*hand_bbox, *object_bbox).empty();
}

void VideoSequence::validate() const {
  if (frames.empty()) fail(ErrorCode::InvalidInput, "video has no frames");
  if (frames.size() != detections.size()) {
    fail(ErrorCode::InvalidInput, "frame count " + std::to_string(frames.size()) + " != detection count " +
                                      std::to_string(detections.size()));
  }
  const Size s = frames.front().size();
  for (std::size_t i = 0; i < frames.size(); ++i) {
    if (frames[i].size() != s) fail(ErrorCode::InvalidInput, "frame " + std::to_string(i) + " size differs");
    const auto& d = detections[i];
    if (d.hand_bbox && !d.hand_bbox->inside(s)) fail(ErrorCode::InvalidInput, "hand bbox outside frame");
    if (d.object_bbox && !d.object_bbox->inside(s)) fail(ErrorCode::InvalidInput, "object bbox outside frame");
    if (d.in_contact && (!d.hand_bbox || !d.object_bbox)) {
      fail(ErrorCode::InvalidInput, "contact frame " + std::to_string(i) + " lacks a hand or object bbox");
    }
  }
}

// ---------------------------------------------------------------- Homography

Homography::Homography() : h_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : h_(m) {
  for (double v : h_) {
    if (!std::isfinite(v)) fail(ErrorCode::DegenerateConfiguration, "non-finite homography entry");
  }
  if (std::abs(h_[8]) < 1e-15) fail(ErrorCode::DegenerateConfiguration, "homography with h22 == 0");
  const double s = 1.0 / h_[8];
  for (double& v : h_) v *= s;
  h_[8] = 1.0;
  if (std::abs(determinant()) <= 1e-12) fail(ErrorCode::DegenerateConfiguration, "singular homography");
}

Homography Homography::translation(double dx, double dy) { return Homography({1, 0, dx, 0, 1, dy, 0, 0, 1}); }

Point2d Homography::apply(const Point2d& p) const {
  const double w = h_[6] * p.x + h_[7] * p.y + h_[8];
  const double x = (h_[0] * p.x + h_[1] * p.y + h_[2]) / w;
  const double y = (h_[3] * p.x + h_[4] * p.y + h_[5]) / w;
  return {x, y};
}

double Homography::determinant() const {
  const auto& m = h_;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

Homography Homography::inverse() const {
  const auto& m = h_;
  const double det = determinant();
  std::array<double, 9> inv{
      (m[4] * m[8] - m[5] * m[7]) / det, (m[2] * m[7] - m[1] * m[8]) / det, (m[1] * m[5] - m[2] * m[4]) / det,
      (m[5] * m[6] - m[3] * m[8]) / det, (m[0] * m[8] - m[2] * m[6]) / det, (m[2] * m[3] - m[0] * m[5]) / det,
      (m[3] * m[7] - m[4] * m[6]) / det, (m[1] * m[6] - m[0] * m[7]) / det, (m[0] * m[4] - m[1] * m[3]) / det,
  };
  return Homography(inv);
}

Homography Homography::operator*(const Homography& rhs) const {
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) s += (*this)(r, k) * rhs(k, c);
      out[static_cast<std::size_t>(r * 3 + c)] = s;
    }
  }
  return Homography(out);
}

void ExtractionConfig::validate() const {
  if (window_half_width < 0) fail(ErrorCode::InvalidInput, "window_half_width must be >= 0");
  if (sample_count < 1) fail(ErrorCode::InvalidInput, "sample_count must be >= 1");
  if (resample_count < 1) fail(ErrorCode::InvalidInput, "resample_count must be >= 1");
  if (!(resample_radius >= 0)) fail(ErrorCode::InvalidInput, "resample_radius must be >= 0");
}

// ---------------------------------------------------------------- contact frame and sampling

int find_contact_frame(const VideoSequence& video) {
  if (video.detections.empty()) fail(ErrorCode::InvalidInput, "empty video");
  for (std::size_t i = 0; i < video.detections.size(); ++i) {
    if (video.detections[i].in_contact) return static_cast<int>(i);
  }
  fail(ErrorCode::NoContactFrame, "no frame has hand-object contact");
}

ContactPointSet sample_contact_points(const RasterImage& frame, const FrameDetection& det,
                                      const GroundTruthMask& skin_mask, const ExtractionConfig& cfg) {
  cfg.validate();
  if (!det.in_contact || !det.hand_bbox || !det.object_bbox) {
    fail(ErrorCode::InvalidInput, "sampling requires a contact detection with both bboxes");
  }
  if (skin_mask.size() != frame.size()) fail(ErrorCode::InvalidInput, "skin mask size differs from frame");
  Rect region = intersect(*det.hand_bbox, *det.object_bbox);
  if (region.empty()) fail(ErrorCode::NoIntersection, "hand and object bboxes are disjoint");
  region = intersect(region, Rect{0, 0, frame.width, frame.height});

  std::vector<Pixel> candidates;
  for (int y = region.y; y < region.y + region.h; ++y) {
    for (int x = region.x; x < region.x + region.w; ++x) {
      if (skin_mask.at(x, y) > 0) candidates.push_back({x, y});
    }
  }
  if (candidates.empty()) fail(ErrorCode::NoSkinPixels, "bbox intersection contains no skin pixels");

  Rng rng(cfg.rng_seed);
  ContactPointSet out;
  out.frame_index = det.frame_index;
  out.points.reserve(static_cast<std::size_t>(cfg.sample_count));
  for (int i = 0; i < cfg.sample_count; ++i) {
    out.points.push_back(to_point(candidates[uniform_index(rng, candidates.size())]));
  }
  return out;
}

GroundTruthMask skin_mask_fallback(const RasterImage& frame) {
  GroundTruthMask mask(frame.width, frame.height, 0);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      double r, g, b;
      if (frame.channels == 3) {
        r = frame.at(x, y, 0);
        g = frame.at(x, y, 1);
        b = frame.at(x, y, 2);
      } else {
        r = g = b = frame.at(x, y);
      }
      const double cb = 128.0 - 0.168736 * r - 0.331264 * g + 0.5 * b;
      const double cr = 128.0 + 0.5 * r - 0.418688 * g - 0.081312 * b;
      if (cr >= 133.0 && cr <= 173.0 && cb >= 77.0 && cb <= 127.0) mask.at(x, y) = 255;
    }
  }
  return mask;
}

// ---------------------------------------------------------------- blur

double laplacian_blur_score(const RasterImage& img) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "blur score of an empty image");
  const int w = img.width;
  const int h = img.height;
  const auto g = luma_plane(img);
  auto at = [&](int x, int y) { return g[static_cast<std::size_t>(reflect101(y, h)) * w + reflect101(x, w)]; };
  double sum = 0.0;
  double sum_sq = 0.0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = at(x - 1, y) + at(x + 1, y) + at(x, y - 1) + at(x, y + 1) - 4.0 * at(x, y);
      sum += r;
      sum_sq += r * r;
    }
  }
  const double n = static_cast<double>(w) * h;
  const double mean = sum / n;
  return std::max(0.0, sum_sq / n - mean * mean);
}

int select_clear_frame(const VideoSequence& video, int contact_frame, const ExtractionConfig& cfg) {
  const int n = static_cast<int>(video.frames.size());
  if (contact_frame < 0 || contact_frame >= n) fail(ErrorCode::InvalidInput, "contact frame out of range");
  const int lo = std::max(0, contact_frame - cfg.window_half_width);
  const int hi = std::min(n - 1, contact_frame + cfg.window_half_width);

  int best_clear = -1;
  int best_any = -1;
  double score_clear = -1.0;
  double score_any = -1.0;
  for (int i = lo; i <= hi; ++i) {
    const double s = laplacian_blur_score(video.frames[static_cast<std::size_t>(i)]);
    if (s > score_any) {
      score_any = s;
      best_any = i;
    }
    if (!video.detections[static_cast<std::size_t>(i)].obstructed() && s > score_clear) {
      score_clear = s;
      best_clear = i;
    }
  }
  return best_clear >= 0 ? best_clear : best_any;
}

// ---------------------------------------------------------------- corners and matching

std::vector<Corner> harris_corners(const RasterImage& img, const HomographyOptions& opt) {
  const int w = img.width;
  const int h = img.height;
  if (w < 3 || h < 3) return {};
  const auto g = luma_plane(img);
  auto px = [&](int x, int y) { return g[static_cast<std::size_t>(reflect101(y, h)) * w + reflect101(x, w)]; };

  const std::size_t n = static_cast<std::size_t>(w) * h;
  std::vector<double> ixx(n), iyy(n), ixy(n);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double gx = (px(x + 1, y - 1) + 2 * px(x + 1, y) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x - 1, y) + px(x - 1, y + 1));
      const double gy = (px(x - 1, y + 1) + 2 * px(x, y + 1) + px(x + 1, y + 1)) -
                        (px(x - 1, y - 1) + 2 * px(x, y - 1) + px(x + 1, y - 1));
      const std::size_t i = static_cast<std::size_t>(y) * w + x;
      ixx[i] = gx * gx;
      iyy[i] = gy * gy;
      ixy[i] = gx * gy;
    }
  }
  std::vector<double> response(n, 0.0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      double a = 0, b = 0, c = 0;
      for (int dy = -1; dy <= 1; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          const std::size_t j = static_cast<std::size_t>(reflect101(y + dy, h)) * w + reflect101(x + dx, w);
          a += ixx[j];
          b += iyy[j];
          c += ixy[j];
        }
      }
      response[static_cast<std::size_t>(y) * w + x] = (a * b - c * c) - opt.k * (a + b) * (a + b);
    }
  }

  Rect area{opt.patch_radius, opt.patch_radius, w - 2 * opt.patch_radius, h - 2 * opt.patch_radius};
  if (opt.roi) area = intersect(area, *opt.roi);
  std::vector<Corner> corners;
  for (int y = area.y; y < area.y + area.h; ++y) {
    for (int x = area.x; x < area.x + area.w; ++x) {
      const double r = response[static_cast<std::size_t>(y) * w + x];
      if (r <= 0) continue;
      bool is_max = true;
      for (int dy = -1; dy <= 1 && is_max; ++dy) {
        for (int dx = -1; dx <= 1; ++dx) {
          if (dx == 0 && dy == 0) continue;
          const int xx = x + dx, yy = y + dy;
          if (xx < 0 || yy < 0 || xx >= w || yy >= h) continue;
          const double o = response[static_cast<std::size_t>(yy) * w + xx];
          // Plateaus keep only their first pixel in raster order.
          if (o > r || (o == r && (dy < 0 || (dy == 0 && dx < 0)))) {
            is_max = false;
            break;
          }
        }
      }
      if (is_max) corners.push_back({x, y, r});
    }
  }
  std::stable_sort(corners.begin(), corners.end(),
                   [](const Corner& a, const Corner& b) { return a.response > b.response; });
  if (corners.size() > static_cast<std::size_t>(opt.max_corners)) corners.resize(static_cast<std::size_t>(opt.max_corners));
  return corners;
}

namespace {

// Zero-mean, unit-norm patch; empty when the patch is flat.
std::vector<double> normalized_patch(const std::vector<double>& g, int w, int x, int y, int radius) {
  std::vector<double> p;
  p.reserve(static_cast<std::size_t>((2 * radius + 1) * (2 * radius + 1)));
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) p.push_back(g[static_cast<std::size_t>(y + dy) * w + (x + dx)]);
  }
  const double mean = std::accumulate(p.begin(), p.end(), 0.0) / static_cast<double>(p.size());
  double norm = 0.0;
  for (double& v : p) {
    v -= mean;
    norm += v * v;
  }
  if (norm < 1e-9) return {};
  norm = std::sqrt(norm);
  for (double& v : p) v /= norm;
  return p;
}

}  // namespace

std::vector<PointMatch> match_corners(const RasterImage& src, const RasterImage& dst, const HomographyOptions& opt) {
  if (src.size() != dst.size()) fail(ErrorCode::InvalidInput, "frames differ in size");
  const auto cs = harris_corners(src, opt);
  const auto cd = harris_corners(dst, opt);
  const auto gs = luma_plane(src);
  const auto gd = luma_plane(dst);

  std::vector<std::vector<double>> ps, pd;
  for (const auto& c : cs) ps.push_back(normalized_patch(gs, src.width, c.x, c.y, opt.patch_radius));
  for (const auto& c : cd) pd.push_back(normalized_patch(gd, dst.width, c.x, c.y, opt.patch_radius));

  constexpr double kNone = -2.0;
  std::vector<int> best_for_src(cs.size(), -1), best_for_dst(cd.size(), -1);
  std::vector<double> score_src(cs.size(), kNone), score_dst(cd.size(), kNone);
  for (std::size_t i = 0; i < cs.size(); ++i) {
    if (ps[i].empty()) continue;
    for (std::size_t j = 0; j < cd.size(); ++j) {
      if (pd[j].empty()) continue;
      double ncc = 0.0;
      for (std::size_t k = 0; k < ps[i].size(); ++k) ncc += ps[i][k] * pd[j][k];
      if (ncc > score_src[i]) {
        score_src[i] = ncc;
        best_for_src[i] = static_cast<int>(j);
      }
      if (ncc > score_dst[j]) {
        score_dst[j] = ncc;
        best_for_dst[j] = static_cast<int>(i);
      }
    }
  }
  std::vector<PointMatch> matches;
  for (std::size_t i = 0; i < cs.size(); ++i) {
    const int j = best_for_src[i];
    if (j < 0 || best_for_dst[static_cast<std::size_t>(j)] != static_cast<int>(i)) continue;
    matches.push_back({{static_cast<double>(cs[i].x), static_cast<double>(cs[i].y)},
                       {static_cast<double>(cd[static_cast<std::size_t>(j)].x),
                        static_cast<double>(cd[static_cast<std::size_t>(j)].y)}});
  }
  return matches;
}

// ---------------------------------------------------------------- DLT + RANSAC

namespace {

struct Normalizer {
  double cx = 0, cy = 0, s = 1;
  Point2d apply(const Point2d& p) const { return {(p.x - cx) * s, (p.y - cy) * s}; }
  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
  }
};

template <typename Get>
Normalizer make_normalizer(std::size_t n, Get get) {
  Normalizer nz;
  for (std::size_t i = 0; i < n; ++i) {
    nz.cx += get(i).x;
    nz.cy += get(i).y;
  }
  nz.cx /= static_cast<double>(n);
  nz.cy /= static_cast<double>(n);
  double mean_dist = 0.0;
  for (std::size_t i = 0; i < n; ++i) mean_dist += std::hypot(get(i).x - nz.cx, get(i).y - nz.cy);
  mean_dist /= static_cast<double>(n);
  nz.s = mean_dist > 1e-12 ? std::sqrt(2.0) / mean_dist : 1.0;
  return nz;
}

double cross(const Point2d& a, const Point2d& b, const Point2d& c) {
  return (b.x - a.x) * (c.y - a.y) - (b.y - a.y) * (c.x - a.x);
}

// True when all points lie (numerically) on one line.
bool collinear(const std::vector<Point2d>& pts) {
  if (pts.size() < 3) return true;
  double cx = 0, cy = 0;
  for (const auto& p : pts) {
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(pts.size());
  cy /= static_cast<double>(pts.size());
  double sxx = 0, syy = 0, sxy = 0;
  for (const auto& p : pts) {
    sxx += (p.x - cx) * (p.x - cx);
    syy += (p.y - cy) * (p.y - cy);
    sxy += (p.x - cx) * (p.y - cy);
  }
  const double tr = sxx + syy;
  if (tr <= 1e-18) return true;
  const double det = sxx * syy - sxy * sxy;
  const double lmin = tr / 2 - std::sqrt(std::max(0.0, tr * tr / 4 - det));
  return lmin / tr < 1e-10;
}

bool sample_degenerate(const std::array<PointMatch, 4>& s) {
  for (int side = 0; side < 2; ++side) {
    auto pt = [&](int i) { return side == 0 ? s[static_cast<std::size_t>(i)].src : s[static_cast<std::size_t>(i)].dst; };
    double scale = 0.0;
    for (int i = 0; i < 4; ++i) {
      for (int j = i + 1; j < 4; ++j) scale = std::max(scale, std::hypot(pt(i).x - pt(j).x, pt(i).y - pt(j).y));
    }
    if (scale < 1e-9) return true;
    for (int a = 0; a < 4; ++a) {
      for (int b = a + 1; b < 4; ++b) {
        for (int c = b + 1; c < 4; ++c) {
          if (std::abs(cross(pt(a), pt(b), pt(c))) < 1e-6 * scale * scale) return true;
        }
      }
    }
  }
  return false;
}

double transfer_error(const Homography& h, const PointMatch& m) {
  const Point2d q = h.apply(m.src);
  const double e = std::hypot(q.x - m.dst.x, q.y - m.dst.y);
  return std::isfinite(e) ? e : std::numeric_limits<double>::infinity();
}

}  // namespace

Homography fit_homography_dlt(const std::vector<PointMatch>& matches) {
  const std::size_t n = matches.size();
  if (n < 4) fail(ErrorCode::TooFewMatches, "DLT needs at least 4 correspondences");
  const auto ns = make_normalizer(n, [&](std::size_t i) { return matches[i].src; });
  const auto nd = make_normalizer(n, [&](std::size_t i) { return matches[i].dst; });

  Eigen::MatrixXd a(2 * n, 9);
  for (std::size_t i = 0; i < n; ++i) {
    const Point2d p = ns.apply(matches[i].src);
    const Point2d q = nd.apply(matches[i].dst);
    const auto r = static_cast<Eigen::Index>(2 * i);
    a.row(r) << -p.x, -p.y, -1, 0, 0, 0, q.x * p.x, q.x * p.y, q.x;
    a.row(r + 1) << 0, 0, 0, -p.x, -p.y, -1, q.y * p.x, q.y * p.y, q.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeFullV);
  const Eigen::VectorXd v = svd.matrixV().col(8);
  Eigen::Matrix3d hn;
  hn << v(0), v(1), v(2), v(3), v(4), v(5), v(6), v(7), v(8);
  const Eigen::Matrix3d h = nd.matrix().inverse() * hn * ns.matrix();
  std::array<double, 9> out{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out[static_cast<std::size_t>(r * 3 + c)] = h(r, c);
  }
  return Homography(out);
}

HomographyEstimate estimate_homography(const std::vector<PointMatch>& matches, const HomographyOptions& opt) {
  const std::size_t n = matches.size();
  if (n < 4) fail(ErrorCode::TooFewMatches, std::to_string(n) + " matches, need 4");
  {
    std::vector<Point2d> src, dst;
    for (const auto& m : matches) {
      src.push_back(m.src);
      dst.push_back(m.dst);
    }
    if (collinear(src) || collinear(dst)) fail(ErrorCode::DegenerateConfiguration, "matched points are collinear");
  }

  Rng rng(opt.seed);
  std::size_t best_count = 0;
  std::vector<bool> best_mask;
  bool any_model = false;
  for (int it = 0; it < opt.iterations; ++it) {
    std::array<std::size_t, 4> idx{};
    for (std::size_t k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = uniform_index(rng, n);
        fresh = std::find(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx[k]) ==
                idx.begin() + static_cast<std::ptrdiff_t>(k);
      } while (!fresh);
    }
    const std::array<PointMatch, 4> sample{matches[idx[0]], matches[idx[1]], matches[idx[2]], matches[idx[3]]};
    if (sample_degenerate(sample)) continue;
    Homography h;
    try {
      h = fit_homography_dlt({sample.begin(), sample.end()});
    } catch (const Error&) {
      continue;
    }
    any_model = true;
    std::vector<bool> mask(n);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = transfer_error(h, matches[i]) < opt.inlier_threshold;
      count += mask[i];
    }
    if (count > best_count) {
      best_count = count;
      best_mask = std::move(mask);
      if (best_count == n) break;
    }
  }
  if (!any_model) fail(ErrorCode::DegenerateConfiguration, "every minimal sample was degenerate");
  if (best_count < 4) fail(ErrorCode::NoConsensus, std::to_string(best_count) + " inliers");

  // Refit on the consensus set until it stops changing (bounded).
  Homography h;
  for (int round = 0; round < 5; ++round) {
    std::vector<PointMatch> inl;
    for (std::size_t i = 0; i < n; ++i) {
      if (best_mask[i]) inl.push_back(matches[i]);
    }
    h = fit_homography_dlt(inl);
    std::vector<bool> mask(n);
    std::size_t count = 0;
    for (std::size_t i = 0; i < n; ++i) {
      mask[i] = transfer_error(h, matches[i]) < opt.inlier_threshold;
      count += mask[i];
    }
    if (mask == best_mask || count < 4) break;
    best_mask = std::move(mask);
  }
  return HomographyEstimate{h, best_mask, n};
}

HomographyEstimate estimate_homography(const RasterImage& src, const RasterImage& dst,
                                       const std::optional<std::vector<PointMatch>>& matches,
                                       const HomographyOptions& opt) {
  if (matches) return estimate_homography(*matches, opt);
  return estimate_homography(match_corners(src, dst, opt), opt);
}

// ---------------------------------------------------------------- points

ContactPointSet propagate_points(const ContactPointSet& p, const std::vector<Homography>& chain, const Size& bounds) {
  Homography composed;
  for (const auto& h : chain) composed = h * composed;
  ContactPointSet out;
  out.frame_index = p.frame_index;
  for (const auto& pt : p.points) {
    const Point2d q = composed.apply(pt);
    if (!std::isfinite(q.x) || !std::isfinite(q.y)) continue;
    if (bounds.contains(to_pixel(q))) out.points.push_back(q);
  }
  if (out.points.empty()) fail(ErrorCode::AllPointsOutOfBounds, "every propagated point left the frame");
  return out;
}

std::vector<Pixel> sample_disk(const Pixel& center, double radius, int count, std::uint64_t seed, const Size& bounds) {
  const int r = static_cast<int>(std::floor(radius));
  std::vector<Pixel> offsets;
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) {
      if (dx * dx + dy * dy <= radius * radius) offsets.push_back({dx, dy});
    }
  }
  Rng rng(seed ^ kDiskSeedMix);
  std::vector<Pixel> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    const Pixel o = offsets[uniform_index(rng, offsets.size())];
    out.push_back({std::clamp(center.x + o.x, 0, bounds.width - 1), std::clamp(center.y + o.y, 0, bounds.height - 1)});
  }
  return out;
}

ContactPointSet finalize_contact_points(const ContactPointSet& p, const ExtractionConfig& cfg, const Size& bounds) {
  cfg.validate();
  if (p.points.empty()) fail(ErrorCode::InvalidInput, "finalize needs at least one point");
  if (bounds.width <= 0 || bounds.height <= 0) fail(ErrorCode::InvalidInput, "empty bounds");
  double sx = 0, sy = 0;
  for (const auto& q : p.points) {
    sx += q.x;
    sy += q.y;
  }
  const auto n = static_cast<double>(p.points.size());
  Pixel c = to_pixel({sx / n, sy / n});
  c.x = std::clamp(c.x, 0, bounds.width - 1);
  c.y = std::clamp(c.y, 0, bounds.height - 1);
  ContactPointSet out;
  out.frame_index = p.frame_index;
  for (const auto& px : sample_disk(c, cfg.resample_radius, cfg.resample_count, cfg.rng_seed, bounds)) {
    out.points.push_back(to_point(px));
  }
  return out;
}

RasterImage crop_image(const RasterImage& img, const Rect& r) {
  if (r.empty()) fail(ErrorCode::EmptyCrop, "crop rectangle is empty");
  if (!r.inside(img.size())) fail(ErrorCode::InvalidInput, "crop rectangle exceeds image");
  RasterImage out(r.w, r.h, img.channels);
  const std::size_t row = static_cast<std::size_t>(r.w) * img.channels;
  for (int y = 0; y < r.h; ++y) {
    const auto* from = &img.data[(static_cast<std::size_t>(r.y + y) * img.width + r.x) * img.channels];
    std::copy(from, from + row, &out.data[static_cast<std::size_t>(y) * row]);
  }
  return out;
}

Crop crop_object(const RasterImage& frame, const Rect& bbox, const ContactPointSet& pts) {
  Crop out;
  out.image = crop_image(frame, bbox);
  out.points.frame_index = pts.frame_index;
  for (const auto& p : pts.points) {
    if (bbox.contains(to_pixel(p))) out.points.points.push_back({p.x - bbox.x, p.y - bbox.y});
  }
  if (out.points.points.empty()) fail(ErrorCode::AllPointsOutsideBbox, "no contact point inside the object bbox");
  return out;
}

// ---------------------------------------------------------------- detections

namespace {

std::optional<Rect> parse_bbox(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  if (!j.is_array() || j.size() != 4) throw std::invalid_argument("bbox must be [x,y,w,h] or null");
  return Rect{j[0].get<int>(), j[1].get<int>(), j[2].get<int>(), j[3].get<int>()};
}

}  // namespace

std::vector<FrameDetection> parse_detections(const std::vector<std::string>& lines) {
  std::vector<FrameDetection> dets;
  for (std::size_t i = 0; i < lines.size(); ++i) {
    try {
      const auto j = nlohmann::json::parse(lines[i]);
      FrameDetection d;
      d.frame_index = j.at("frame").get<int>();
      d.hand_bbox = parse_bbox(j.value("hand_bbox", nlohmann::json()));
      d.object_bbox = parse_bbox(j.value("object_bbox", nlohmann::json()));
      d.in_contact = j.at("contact").get<bool>();
      dets.push_back(d);
    } catch (const std::exception& e) {
      fail(ErrorCode::ParseFailure, "detection line " + std::to_string(i + 1) + ": " + e.what());
    }
  }
  std::stable_sort(dets.begin(), dets.end(),
                   [](const FrameDetection& a, const FrameDetection& b) { return a.frame_index < b.frame_index; });
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (dets[i].frame_index != static_cast<int>(i)) {
      fail(ErrorCode::ParseFailure, "detections must cover frames 0..N-1 exactly once");
    }
  }
  return dets;
}

std::vector<FrameDetection> load_detections(const std::filesystem::path& jsonl) {
  return parse_detections(read_lines(jsonl));
}

// ---------------------------------------------------------------- full chain

ExtractedAffordance extract_affordance(const VideoSequence& video, const std::vector<GroundTruthMask>& skin_masks,
                                       const ExtractionConfig& cfg) {
  cfg.validate();
  video.validate();
  if (!skin_masks.empty() && skin_masks.size() != video.frames.size()) {
    fail(ErrorCode::InvalidInput, "skin mask count differs from frame count");
  }
  const int j = find_contact_frame(video);
  const auto& frame_j = video.frames[static_cast<std::size_t>(j)];
  const GroundTruthMask skin = skin_masks.empty() ? skin_mask_fallback(frame_j) : skin_masks[static_cast<std::size_t>(j)];
  const ContactPointSet sampled = sample_contact_points(frame_j, video.detections[static_cast<std::size_t>(j)], skin, cfg);

  const int c = select_clear_frame(video, j, cfg);
  std::vector<Homography> chain;
  const int step = c > j ? 1 : -1;
  for (int t = j; t != c; t += step) {
    HomographyOptions opt;
    opt.seed = cfg.rng_seed;
    if (cfg.homography_in_bbox) opt.roi = video.detections[static_cast<std::size_t>(t)].object_bbox;
    chain.push_back(estimate_homography(video.frames[static_cast<std::size_t>(t)],
                                        video.frames[static_cast<std::size_t>(t + step)], std::nullopt, opt)
                        .h);
  }
  ContactPointSet moved = propagate_points(sampled, chain, video.frame_size());
  moved.frame_index = c;
  const ContactPointSet final_pts = finalize_contact_points(moved, cfg, video.frame_size());

  Rect bbox;
  if (const auto& ob = video.detections[static_cast<std::size_t>(c)].object_bbox) {
    bbox = *ob;
  } else {
    // Carry the contact-frame box through the chain and take its bounding rectangle.
    const Rect& src = *video.detections[static_cast<std::size_t>(j)].object_bbox;
    Homography composed;
    for (const auto& h : chain) composed = h * composed;
    double x0 = 1e300, y0 = 1e300, x1 = -1e300, y1 = -1e300;
    for (const Point2d corner : {Point2d{double(src.x), double(src.y)}, Point2d{double(src.x + src.w), double(src.y)},
                                 Point2d{double(src.x), double(src.y + src.h)},
                                 Point2d{double(src.x + src.w), double(src.y + src.h)}}) {
      const Point2d q = composed.apply(corner);
      x0 = std::min(x0, q.x);
      y0 = std::min(y0, q.y);
      x1 = std::max(x1, q.x);
      y1 = std::max(y1, q.y);
    }
    const Rect raw{round_pixel(x0), round_pixel(y0), round_pixel(x1) - round_pixel(x0), round_pixel(y1) - round_pixel(y0)};
    bbox = intersect(raw, Rect{0, 0, video.frame_size().width, video.frame_size().height});
  }
  ExtractedAffordance out;
  out.crop = crop_object(video.frames[static_cast<std::size_t>(c)], bbox, final_pts);
  out.contact_frame = j;
  out.clear_frame = c;
  out.object_bbox = bbox;
  return out;
}

}  // namespace afft
