#pragma once

// Turns an annotated interaction video into (object crop, contact points) pairs.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <vector>

#include "afft/geometry.hpp"
#include "afft/tensor_io.hpp"

namespace afft {

struct FrameDetection {
  int frame_index = 0;
  std::optional<Rect> hand_bbox;
  std::optional<Rect> object_bbox;
  bool in_contact = false;

  bool obstructed() const;
};

struct VideoSequence {
  std::vector<RasterImage> frames;
  std::vector<FrameDetection> detections;

  /// Checks frame/detection counts, common frame size and bbox bounds.
  void validate() const;
  Size frame_size() const { return frames.front().size(); }
};

struct ContactPointSet {
  std::vector<Point2d> points;
  int frame_index = 0;
};

class Homography {
 public:
  Homography();  // identity
  /// Normalizes so h[2][2] == 1; rejects near-singular matrices.
  explicit Homography(const std::array<double, 9>& row_major);

  static Homography translation(double dx, double dy);

  double operator()(int r, int c) const { return h_[static_cast<std::size_t>(r * 3 + c)]; }
  const std::array<double, 9>& data() const { return h_; }

  Point2d apply(const Point2d& p) const;
  Homography inverse() const;
  double determinant() const;

  /// this * rhs, i.e. rhs applied first.
  Homography operator*(const Homography& rhs) const;

 private:
  std::array<double, 9> h_;
};

struct ExtractionConfig {
  int window_half_width = 15;
  int sample_count = 20;
  double resample_radius = 4.0;
  int resample_count = 5;
  std::uint64_t rng_seed = 7;
  bool homography_in_bbox = false;

  void validate() const;
};

int find_contact_frame(const VideoSequence& video);

ContactPointSet sample_contact_points(const RasterImage& frame, const FrameDetection& det,
                                      const GroundTruthMask& skin_mask, const ExtractionConfig& cfg);

/// YCbCr threshold skin rule (Cr in [133,173], Cb in [77,127]); 255 for skin, 0 otherwise.
GroundTruthMask skin_mask_fallback(const RasterImage& frame);

/// Variance of the 3x3 Laplacian response (reflect-101 borders) on the luma channel.
double laplacian_blur_score(const RasterImage& img);

int select_clear_frame(const VideoSequence& video, int contact_frame, const ExtractionConfig& cfg);

struct PointMatch {
  Point2d src;
  Point2d dst;
};

struct HomographyOptions {
  double k = 0.04;
  int max_corners = 200;
  int patch_radius = 5;  // 11x11 patches
  double inlier_threshold = 3.0;
  int iterations = 2000;
  std::uint64_t seed = 7;
  /// Restrict the corner search to this region of both frames.
  std::optional<Rect> roi;
};

struct HomographyEstimate {
  Homography h;
  std::vector<bool> inliers;  // parallel to the matches used
  std::size_t match_count = 0;
};

/// Harris corners: (x, y, response) for the strongest `max_corners` local maxima.
struct Corner {
  int x = 0;
  int y = 0;
  double response = 0.0;
};
std::vector<Corner> harris_corners(const RasterImage& img, const HomographyOptions& opt);

/// Mutual-best NCC matches between the corner sets of two frames.
std::vector<PointMatch> match_corners(const RasterImage& src, const RasterImage& dst, const HomographyOptions& opt);

/// Least-squares homography through all pairs (normalized DLT).
Homography fit_homography_dlt(const std::vector<PointMatch>& matches);

/// Robust fit; runs the internal corner matcher when `matches` is absent.
HomographyEstimate estimate_homography(const RasterImage& src, const RasterImage& dst,
                                       const std::optional<std::vector<PointMatch>>& matches,
                                       const HomographyOptions& opt = {});
HomographyEstimate estimate_homography(const std::vector<PointMatch>& matches, const HomographyOptions& opt = {});

/// Applies chain[n-1] * ... * chain[0] to every point and drops the ones leaving `bounds`.
ContactPointSet propagate_points(const ContactPointSet& p, const std::vector<Homography>& chain, const Size& bounds);

/// Centroid (rounded) followed by seeded uniform resampling inside a disk, clamped to bounds.
ContactPointSet finalize_contact_points(const ContactPointSet& p, const ExtractionConfig& cfg, const Size& bounds);

/// Shared by extraction and correspondence: `count` seeded pixels uniformly from the
/// integer disk of `radius` around `center`, clamped to bounds.
std::vector<Pixel> sample_disk(const Pixel& center, double radius, int count, std::uint64_t seed, const Size& bounds);

struct Crop {
  RasterImage image;
  ContactPointSet points;
};
Crop crop_object(const RasterImage& frame, const Rect& object_bbox, const ContactPointSet& pts);

RasterImage crop_image(const RasterImage& img, const Rect& r);

/// Parses the per-frame detection stream: {"frame", "hand_bbox", "object_bbox", "contact"}.
std::vector<FrameDetection> load_detections(const std::filesystem::path& jsonl);
std::vector<FrameDetection> parse_detections(const std::vector<std::string>& lines);

struct ExtractedAffordance {
  Crop crop;
  int contact_frame = 0;
  int clear_frame = 0;
  Rect object_bbox;
};

/// The full per-video chain: contact frame, sampling, clear frame, homography
/// propagation, centroid resampling and crop. `skin_masks` may be empty, in which
/// case the threshold fallback is used.
ExtractedAffordance extract_affordance(const VideoSequence& video, const std::vector<GroundTruthMask>& skin_masks,
                                       const ExtractionConfig& cfg);

}  // namespace afft
