#pragma once

// Readers and writers for the toolkit's on-disk formats:
//
//   .rft tensor file, little-endian throughout:
//     magic "RATK" (4 bytes) | version u16 (=1) | dtype u8 (1 = f32) | ndim u8 (1..4)
//     | dims u64 x ndim | payload f32 x product(dims), row-major
//
//   PNG for RGB/gray images, 8-bit gray masks and 16-bit depth images.
//   intrinsics.json: {"fx","fy","cx","cy","depth_scale"}.

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "afft/geometry.hpp"

namespace afft {

inline constexpr char kTensorMagic[4] = {'R', 'A', 'T', 'K'};
inline constexpr std::uint16_t kTensorVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 1;
inline constexpr std::size_t kMaxTensorDims = 4;

class Tensor {
 public:
  Tensor() = default;
  /// Validates shape (1..4 dims), element count and finiteness.
  Tensor(std::vector<std::uint64_t> shape, std::vector<float> data);

  const std::vector<std::uint64_t>& shape() const { return shape_; }
  const std::vector<float>& data() const { return data_; }
  std::size_t ndim() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }

  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  std::vector<std::uint64_t> shape_;
  std::vector<float> data_;
};

Tensor read_tensor(const std::filesystem::path& path);
void write_tensor(const Tensor& t, const std::filesystem::path& path);

/// In-memory variants of the .rft codec, used by the file functions.
Tensor decode_tensor(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> encode_tensor(const Tensor& t);

struct RasterImage {
  int width = 0;
  int height = 0;
  int channels = 0;  // 1 or 3
  std::vector<std::uint8_t> data;  // row-major, interleaved

  RasterImage() = default;
  RasterImage(int w, int h, int c, std::uint8_t fill = 0);

  Size size() const { return {width, height}; }
  bool empty() const { return width == 0 || height == 0; }
  std::uint8_t& at(int x, int y, int c = 0) { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }
  std::uint8_t at(int x, int y, int c = 0) const { return data[(static_cast<std::size_t>(y) * width + x) * channels + c]; }

  friend bool operator==(const RasterImage&, const RasterImage&) = default;
};

struct GroundTruthMask {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> values;

  GroundTruthMask() = default;
  GroundTruthMask(int w, int h, std::uint8_t fill = 0);

  Size size() const { return {width, height}; }
  std::uint8_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t& at(int x, int y) { return values[static_cast<std::size_t>(y) * width + x]; }
  std::uint8_t at(const Pixel& p) const { return at(p.x, p.y); }

  friend bool operator==(const GroundTruthMask&, const GroundTruthMask&) = default;
};

struct DepthImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint16_t> values;

  std::uint16_t at(int x, int y) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

struct CameraIntrinsics {
  double fx = 0.0;
  double fy = 0.0;
  double cx = 0.0;
  double cy = 0.0;
  double depth_scale = 0.001;

  void validate() const;
};

/// Reads an 8-bit PNG as gray (1 channel) or RGB (3 channels). Palette images
/// are expanded to RGB, alpha is dropped.
RasterImage read_image(const std::filesystem::path& path);
void write_image(const RasterImage& img, const std::filesystem::path& path);

/// 8-bit single-channel PNG, values preserved as stored.
GroundTruthMask load_mask(const std::filesystem::path& path);
void write_mask(const GroundTruthMask& mask, const std::filesystem::path& path);

DepthImage read_depth(const std::filesystem::path& path);
void write_depth(const DepthImage& depth, const std::filesystem::path& path);

CameraIntrinsics load_intrinsics(const std::filesystem::path& path);

/// Mask view of a single-channel image (or error for RGB).
GroundTruthMask mask_from_image(const RasterImage& img);
RasterImage image_from_mask(const GroundTruthMask& mask);
RasterImage to_gray(const RasterImage& img);

/// Hex SHA-256 over "<w>x<h>x<c>\n" followed by the raw samples. Keys exporter files.
std::string image_digest(const RasterImage& img);
std::string sha256_hex(std::span<const std::uint8_t> bytes);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
/// Writes to "<path>.tmp" then renames over path.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_text_atomic(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

/// Non-empty lines of a JSON-lines file, trimmed.
std::vector<std::string> read_lines(const std::filesystem::path& path);

}  // namespace afft
