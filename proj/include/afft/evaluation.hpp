#pragma once

// Point-based affordance metrics (SR, NSS, DTM) and the dataset harness.

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afft/geometry.hpp"
#include "afft/tensor_io.hpp"

namespace afft {

inline constexpr int kDefaultMaskThreshold = 122;
inline constexpr std::size_t kMaxPredictionPoints = 5;

struct Prediction {
  std::string image_id;
  std::string method;
  std::vector<Pixel> points;
};

/// Fraction of points whose mask value is strictly above `threshold`.
double metric_sr(std::span<const Pixel> points, const GroundTruthMask& mask, int threshold = kDefaultMaskThreshold);

/// Mean of mask(p) / max(mask); 0 when the mask is all zero.
double metric_nss(std::span<const Pixel> points, const GroundTruthMask& mask);

/// Mean distance from each point to the contour of the above-threshold region
/// (0 for points inside it), divided by the image diagonal.
double metric_dtm(std::span<const Pixel> points, const GroundTruthMask& mask, int threshold = kDefaultMaskThreshold);

/// Above-threshold pixels that touch a below-threshold 4-neighbour or the image border.
std::vector<Pixel> mask_contour(const GroundTruthMask& mask, int threshold);

namespace detail {
/// NSS over real-valued masks (row-major `values` of width `width`).
double nss_ratio(std::span<const Pixel> points, std::span<const double> values, int width);
}  // namespace detail

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path image;
  std::filesystem::path mask;
  std::string category;
  bool seen = true;
};

/// {"<image_id>": {"image", "mask", "category", "seen"}}; paths relative to the manifest's directory.
std::map<std::string, ManifestEntry> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::map<std::string, ManifestEntry>& entries, const std::filesystem::path& path);

/// JSON-lines {"image_id","method","points":[[x,y],...]}.
std::vector<Prediction> load_predictions(const std::filesystem::path& path);
std::string prediction_line(const Prediction& p);

struct ImageMetrics {
  std::string image_id;
  std::string category;
  bool seen = true;
  double sr = 0.0;  // fraction
  double nss = 0.0;
  double dtm = 0.0;
  std::size_t points = 0;
};

struct Aggregate {
  std::size_t images = 0;
  double sr_percent = 0.0;
  double nss = 0.0;
  double dtm = 0.0;
};

struct EvalReport {
  int threshold = kDefaultMaskThreshold;
  std::vector<ImageMetrics> images;  // sorted by image_id
  std::map<std::string, Aggregate> per_category;
  std::optional<Aggregate> seen;
  std::optional<Aggregate> unseen;
  Aggregate overall;
  std::vector<std::string> missing_masks;        // predictions without a usable mask
  std::vector<std::string> missing_predictions;  // manifest images without a prediction

  std::string to_json() const;
  std::string to_csv() const;
  std::string to_table() const;
};

struct EvalOptions {
  int threshold = kDefaultMaskThreshold;
  bool allow_partial = false;
  std::optional<std::string> method;  // only score predictions of this method
  int jobs = 1;
};

EvalReport evaluate_dataset(const std::vector<Prediction>& preds, const std::map<std::string, ManifestEntry>& manifest,
                            const EvalOptions& opt = {});

/// Image-averaged SR (percent) per threshold.
std::vector<std::pair<int, double>> sr_threshold_curve(const std::vector<Prediction>& preds,
                                                       const std::map<std::string, ManifestEntry>& manifest,
                                                       const std::vector<int>& thresholds, const EvalOptions& opt = {});

/// "start:stop:step", inclusive of stop.
std::vector<int> parse_threshold_range(const std::string& spec);

/// RGB copy of `img` with the mask alpha-blended in red (weight 0.4 where mask > 0)
/// and each point drawn as a green disc of radius 5.
RasterImage render_overlay(const RasterImage& img, std::span<const Pixel> points,
                           const std::optional<GroundTruthMask>& mask = std::nullopt);

/// Top-k cells of a [H, W] (or [1, H, W]) heatmap, highest first, ties by row-major index.
std::vector<Pixel> heatmap_top_points(const Tensor& heatmap, std::size_t k = kMaxPredictionPoints);

}  // namespace afft
