#pragma once

// Dense-feature correspondence: maps source contact points onto a target image
// by cosine nearest-neighbour search over feature grids, searching the eight
// rotations/flips of the source image.

#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "afft/geometry.hpp"
#include "afft/memory.hpp"
#include "afft/tensor_io.hpp"

namespace afft {

struct DenseFeatureMap {
  int channels = 0;
  int grid_h = 0;
  int grid_w = 0;
  int image_h = 0;
  int image_w = 0;
  std::vector<float> data;  // [channels, grid_h, grid_w]

  float at(int c, int gy, int gx) const {
    return data[(static_cast<std::size_t>(c) * grid_h + gy) * grid_w + gx];
  }
  Size image_size() const { return {image_w, image_h}; }

  void validate() const;
  Tensor to_tensor() const;
  static DenseFeatureMap from_tensor(const Tensor& t, int image_h, int image_w);
};

/// Dihedral group of the square. The flipped codes mirror horizontally first and
/// then rotate clockwise by the same angle as their unflipped counterpart.
enum class Dihedral : std::uint8_t { R0, R90, R180, R270, FR0, FR90, FR180, FR270 };

inline constexpr std::array<Dihedral, 8> kAllTransforms{Dihedral::R0,  Dihedral::R90,  Dihedral::R180,
                                                        Dihedral::R270, Dihedral::FR0, Dihedral::FR90,
                                                        Dihedral::FR180, Dihedral::FR270};

std::string_view to_string(Dihedral d);
Dihedral parse_dihedral(std::string_view code);
Dihedral inverse(Dihedral d);

/// Image size after the transform (90/270 variants swap width and height).
Size transformed_size(const Size& s, Dihedral d);
/// Coordinate map of `d` for an image of size `s`; e.g. R90 sends (x, y) to (h-1-y, x).
Point2d apply(Dihedral d, const Point2d& p, const Size& s);
Pixel apply(Dihedral d, const Pixel& p, const Size& s);
/// Maps coordinates in the transformed image back to the original of size `s`.
Point2d apply_inverse(Dihedral d, const Point2d& p, const Size& s);
RasterImage transform_image(const RasterImage& img, Dihedral d);
GroundTruthMask transform_mask(const GroundTruthMask& mask, Dihedral d);

struct MatchResult {
  Point2d target_point;
  double similarity = 0.0;
  Dihedral transform = Dihedral::R0;
  std::string source_record_id;
};

/// Bilinear feature lookup at a pixel position (cell centers at ((g+0.5)*image/grid - 0.5)).
std::vector<float> feature_at(const DenseFeatureMap& fm, const Point2d& p);

/// Pixel coordinates of a grid cell's center.
Point2d cell_center(const DenseFeatureMap& fm, int gy, int gx);

/// Cosine argmax of the source feature over every target cell; ties go to the
/// smallest row-major cell index. Target cells with zero norm never match.
MatchResult match_point(const DenseFeatureMap& src_fm, const Point2d& p_s, const DenseFeatureMap& tgt_fm);

class FeatureExtractor {
 public:
  virtual ~FeatureExtractor() = default;
  virtual std::string name() const = 0;
  /// Feature map of transform_image(original, d).
  virtual DenseFeatureMap extract(const RasterImage& original, Dihedral d) const = 0;
};

/// Deterministic pixel-resolution features built from dihedral-invariant
/// neighbourhood statistics (ring sums of gray values, ring energies, distance to
/// the image center and border), standardized per channel. Computed with integer
/// accumulators, so extract(img, d) at apply(d, p) is bit-identical to extract(img, R0) at p.
class ToyGridExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "toygrid"; }
  DenseFeatureMap extract(const RasterImage& original, Dihedral d) const override;
  static DenseFeatureMap features(const RasterImage& img);
};

/// Reads exporter output "<dir>/<image-digest>.<code>.rft" with sidecar
/// "<dir>/<image-digest>.<code>.json" = {"image_h","image_w","extractor"}.
class FileFeatureExtractor final : public FeatureExtractor {
 public:
  explicit FileFeatureExtractor(std::filesystem::path dir) : dir_(std::move(dir)) {}
  std::string name() const override { return "files"; }
  DenseFeatureMap extract(const RasterImage& original, Dihedral d) const override;
  std::filesystem::path tensor_path(const RasterImage& original, Dihedral d) const;

 private:
  std::filesystem::path dir_;
};

/// Memoizes another extractor by (image digest, transform).
class CachingExtractor final : public FeatureExtractor {
 public:
  explicit CachingExtractor(std::shared_ptr<const FeatureExtractor> inner) : inner_(std::move(inner)) {}
  std::string name() const override { return inner_->name(); }
  DenseFeatureMap extract(const RasterImage& original, Dihedral d) const override;

 private:
  std::shared_ptr<const FeatureExtractor> inner_;
  mutable std::mutex mutex_;
  mutable std::map<std::pair<std::string, Dihedral>, std::shared_ptr<const DenseFeatureMap>> cache_;
};

/// "toygrid" or "files:<dir>".
std::shared_ptr<const FeatureExtractor> make_extractor(const std::string& spec);

/// Source feature maps for each transform under consideration, in tie-break order.
struct TransformedSource {
  Size size;  // untransformed source image size
  std::vector<std::pair<Dihedral, DenseFeatureMap>> maps;
};

TransformedSource prepare_source(const RasterImage& src_img, const FeatureExtractor& fx, bool use_transforms, int jobs = 1);

/// Best match over the prepared transforms; ties keep the earlier transform.
MatchResult match_with_transforms(const TransformedSource& src, const Pixel& p_s, const DenseFeatureMap& tgt_fm);
MatchResult match_with_transforms(const RasterImage& src_img, const Pixel& p_s, const DenseFeatureMap& tgt_fm,
                                  const FeatureExtractor& fx, bool use_transforms = true);

enum class AveragingMode { MapThenAverage, AverageThenMap };
std::string_view to_string(AveragingMode m);
AveragingMode parse_averaging_mode(std::string_view s);

struct TransferConfig {
  AveragingMode averaging_mode = AveragingMode::MapThenAverage;
  bool use_transforms = true;
  double resample_radius = 4.0;
  int resample_count = 5;
  std::uint64_t rng_seed = 7;
};

struct SourceScore {
  std::string record_id;
  double mean_similarity = 0.0;
  Point2d mean_location;
  std::vector<MatchResult> matches;
  std::optional<std::string> error;
};

struct TransferResult {
  std::vector<Pixel> points;  // final resampled target points
  Pixel centroid;
  std::string source_id;
  double mean_similarity = 0.0;
  MatchResult best;  // highest-similarity single match of the chosen source
  std::vector<SourceScore> per_source;
};

/// Maps every source's contact points, keeps the source with the highest mean
/// similarity (earlier sources win ties) and resamples the final points in a disk
/// around its mean mapped location.
TransferResult transfer_affordance(const std::vector<const AffordanceRecord*>& sources, const RasterImage& tgt_img,
                                   const DenseFeatureMap& tgt_fm, const FeatureExtractor& fx,
                                   const TransferConfig& cfg, int jobs = 1);

}  // namespace afft
