#include "afft/tensor_io.hpp"

#include <openssl/evp.h>
#include <png.h>

#include <array>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "afft/error.hpp"

namespace afft {
namespace fs = std::filesystem;

namespace {

std::uint64_t element_count(const std::vector<std::uint64_t>& shape) {
  std::uint64_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_f32(std::vector<std::uint8_t>& out, float f) {
  std::uint32_t bits;
  std::memcpy(&bits, &f, sizeof bits);
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> bytes, std::size_t off, int width) {
  std::uint64_t v = 0;
  for (int i = 0; i < width; ++i) v |= static_cast<std::uint64_t>(bytes[off + i]) << (8 * i);
  return v;
}

}  // namespace

Tensor::Tensor(std::vector<std::uint64_t> shape, std::vector<float> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.empty() || shape_.size() > kMaxTensorDims) {
    fail(ErrorCode::ShapeRejected, "tensor must have 1 to 4 dimensions, got " + std::to_string(shape_.size()));
  }
  if (element_count(shape_) != data_.size()) {
    fail(ErrorCode::ShapeRejected, "shape product does not match data length");
  }
  for (float v : data_) {
    if (!std::isfinite(v)) fail(ErrorCode::NonFiniteValue, "tensor contains NaN or Inf");
  }
}

std::vector<std::uint8_t> encode_tensor(const Tensor& t) {
  if (t.ndim() == 0 || t.ndim() > kMaxTensorDims) fail(ErrorCode::ShapeRejected, "invalid tensor rank");
  std::vector<std::uint8_t> out;
  out.reserve(8 + 8 * t.ndim() + 4 * t.size());
  out.insert(out.end(), std::begin(kTensorMagic), std::end(kTensorMagic));
  put_u16(out, kTensorVersion);
  out.push_back(kDtypeF32);
  out.push_back(static_cast<std::uint8_t>(t.ndim()));
  for (auto d : t.shape()) put_u64(out, d);
  for (float v : t.data()) put_f32(out, v);
  return out;
}

Tensor decode_tensor(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kTensorMagic, 4) != 0) {
    fail(ErrorCode::BadMagic, "missing RATK magic");
  }
  if (bytes.size() < 8) fail(ErrorCode::TruncatedPayload, "header cut short");
  const auto version = static_cast<std::uint16_t>(get_le(bytes, 4, 2));
  if (version != kTensorVersion) fail(ErrorCode::UnsupportedVersion, "version " + std::to_string(version));
  const std::uint8_t dtype = bytes[6];
  if (dtype != kDtypeF32) fail(ErrorCode::UnsupportedDtype, "dtype tag " + std::to_string(dtype));
  const std::size_t ndim = bytes[7];
  if (ndim == 0 || ndim > kMaxTensorDims) fail(ErrorCode::ShapeRejected, "ndim " + std::to_string(ndim));
  std::size_t off = 8;
  if (bytes.size() < off + 8 * ndim) fail(ErrorCode::TruncatedPayload, "dims cut short");
  std::vector<std::uint64_t> shape(ndim);
  for (auto& d : shape) {
    d = get_le(bytes, off, 8);
    off += 8;
  }
  const std::uint64_t n = element_count(shape);
  const std::uint64_t remaining = bytes.size() - off;
  if (n > remaining / 4 || remaining != 4 * n) {
    fail(ErrorCode::TruncatedPayload, "payload size " + std::to_string(remaining) + " != " + std::to_string(4 * n));
  }
  std::vector<float> data(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const auto bits = static_cast<std::uint32_t>(get_le(bytes, off + 4 * i, 4));
    std::memcpy(&data[i], &bits, sizeof(float));
  }
  return Tensor(std::move(shape), std::move(data));
}

Tensor read_tensor(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  return decode_tensor(bytes);
}

void write_tensor(const Tensor& t, const fs::path& path) {
  const auto bytes = encode_tensor(t);
  write_file_atomic(path, bytes);
}

RasterImage::RasterImage(int w, int h, int c, std::uint8_t fill)
    : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {
  if (w < 0 || h < 0 || (c != 1 && c != 3)) fail(ErrorCode::InvalidInput, "bad image geometry");
}

GroundTruthMask::GroundTruthMask(int w, int h, std::uint8_t fill)
    : width(w), height(h), values(static_cast<std::size_t>(w) * h, fill) {
  if (w < 0 || h < 0) fail(ErrorCode::InvalidInput, "bad mask geometry");
}

void CameraIntrinsics::validate() const {
  if (!(fx > 0) || !(fy > 0) || !(depth_scale > 0)) {
    fail(ErrorCode::InvalidInput, "intrinsics require fx > 0, fy > 0, depth_scale > 0");
  }
  if (!std::isfinite(cx) || !std::isfinite(cy)) fail(ErrorCode::InvalidInput, "non-finite principal point");
}

// ---------------------------------------------------------------- PNG

namespace {

struct DecodedPng {
  png_uint_32 width = 0;
  png_uint_32 height = 0;
  int color_type = 0;  // as stored in the file
  int bit_depth = 0;   // as stored in the file
  int channels = 0;    // after transforms
  int sample_bytes = 1;
  std::vector<std::uint8_t> pixels;
};

struct MemReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos;
};

void read_cb(png_structp png, png_bytep out, png_size_t n) {
  auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
  if (r->pos + n > r->size) png_error(png, "unexpected end of PNG data");
  std::memcpy(out, r->data + r->pos, n);
  r->pos += n;
}

void silent_warning(png_structp, png_const_charp) {}

// Only C objects live across setjmp here; the caller owns the C++ containers.
bool decode_png_raw(const std::uint8_t* data, std::size_t size, DecodedPng* out, std::vector<std::uint8_t>* pixels) {
  if (size < 8 || png_sig_cmp(data, 0, 8) != 0) return false;
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    return false;
  }
  png_bytep* volatile rows = nullptr;
  MemReader reader{data, size, 0};
  if (setjmp(png_jmpbuf(png))) {
    std::free(rows);
    png_destroy_read_struct(&png, &info, nullptr);
    return false;
  }
  png_set_read_fn(png, &reader, read_cb);
  png_read_info(png, info);
  out->width = png_get_image_width(png, info);
  out->height = png_get_image_height(png, info);
  out->color_type = png_get_color_type(png, info);
  out->bit_depth = png_get_bit_depth(png, info);

  if (out->color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (out->color_type == PNG_COLOR_TYPE_GRAY && out->bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  if (out->color_type & PNG_COLOR_MASK_ALPHA) png_set_strip_alpha(png);
  if (out->bit_depth == 16) png_set_swap(png);  // native little-endian u16
  png_read_update_info(png, info);

  out->channels = png_get_channels(png, info);
  out->sample_bytes = png_get_bit_depth(png, info) == 16 ? 2 : 1;
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  pixels->assign(rowbytes * out->height, 0);
  rows = static_cast<png_bytep*>(std::malloc(sizeof(png_bytep) * (out->height ? out->height : 1)));
  for (png_uint_32 y = 0; y < out->height; ++y) rows[y] = pixels->data() + y * rowbytes;
  png_read_image(png, rows);
  png_read_end(png, nullptr);
  std::free(rows);
  png_destroy_read_struct(&png, &info, nullptr);
  return true;
}

DecodedPng decode_png(const fs::path& path) {
  const auto bytes = read_file_bytes(path);
  DecodedPng out;
  if (!decode_png_raw(bytes.data(), bytes.size(), &out, &out.pixels)) {
    fail(ErrorCode::DecodeFailure, "cannot decode PNG " + path.string());
  }
  return out;
}

void write_cb(png_structp png, png_bytep data, png_size_t n) {
  auto* out = static_cast<std::vector<std::uint8_t>*>(png_get_io_ptr(png));
  out->insert(out->end(), data, data + n);
}

void flush_cb(png_structp) {}

bool encode_png_raw(const std::uint8_t* pixels, int width, int height, int color_type, int bit_depth,
                    std::size_t rowbytes, std::vector<std::uint8_t>* out) {
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, silent_warning);
  if (!png) return false;
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_write_struct(&png, nullptr);
    return false;
  }
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    return false;
  }
  png_set_write_fn(png, out, write_cb, flush_cb);
  png_set_compression_level(png, 6);
  png_set_IHDR(png, info, static_cast<png_uint_32>(width), static_cast<png_uint_32>(height), bit_depth, color_type,
               PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  if (bit_depth == 16) png_set_swap(png);
  for (int y = 0; y < height; ++y) {
    png_write_row(png, const_cast<png_bytep>(pixels + static_cast<std::size_t>(y) * rowbytes));
  }
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return true;
}

void write_png(const std::uint8_t* pixels, int width, int height, int color_type, int bit_depth, std::size_t rowbytes,
               const fs::path& path) {
  if (width <= 0 || height <= 0) fail(ErrorCode::InvalidInput, "cannot write an empty PNG");
  std::vector<std::uint8_t> bytes;
  if (!encode_png_raw(pixels, width, height, color_type, bit_depth, rowbytes, &bytes)) {
    fail(ErrorCode::IoFailure, "PNG encode failed for " + path.string());
  }
  write_file_atomic(path, bytes);
}

}  // namespace

RasterImage read_image(const fs::path& path) {
  DecodedPng png = decode_png(path);
  if (png.sample_bytes != 1) fail(ErrorCode::DecodeFailure, "16-bit PNG where an 8-bit image was expected");
  if (png.channels != 1 && png.channels != 3) fail(ErrorCode::WrongChannelCount, path.string());
  RasterImage img;
  img.width = static_cast<int>(png.width);
  img.height = static_cast<int>(png.height);
  img.channels = png.channels;
  img.data = std::move(png.pixels);
  return img;
}

void write_image(const RasterImage& img, const fs::path& path) {
  if (img.channels != 1 && img.channels != 3) fail(ErrorCode::WrongChannelCount, "image must have 1 or 3 channels");
  write_png(img.data.data(), img.width, img.height, img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB, 8,
            static_cast<std::size_t>(img.width) * img.channels, path);
}

GroundTruthMask load_mask(const fs::path& path) {
  DecodedPng png = decode_png(path);
  if (png.color_type != PNG_COLOR_TYPE_GRAY) {
    fail(ErrorCode::WrongChannelCount, "mask must be single-channel grayscale: " + path.string());
  }
  if (png.bit_depth != 8) fail(ErrorCode::DecodeFailure, "mask must be 8-bit: " + path.string());
  GroundTruthMask mask;
  mask.width = static_cast<int>(png.width);
  mask.height = static_cast<int>(png.height);
  mask.values = std::move(png.pixels);
  return mask;
}

void write_mask(const GroundTruthMask& mask, const fs::path& path) {
  write_png(mask.values.data(), mask.width, mask.height, PNG_COLOR_TYPE_GRAY, 8, static_cast<std::size_t>(mask.width),
            path);
}

DepthImage read_depth(const fs::path& path) {
  DecodedPng png = decode_png(path);
  if (png.color_type != PNG_COLOR_TYPE_GRAY || png.bit_depth != 16) {
    fail(ErrorCode::DecodeFailure, "depth must be 16-bit grayscale PNG: " + path.string());
  }
  DepthImage depth;
  depth.width = static_cast<int>(png.width);
  depth.height = static_cast<int>(png.height);
  depth.values.resize(static_cast<std::size_t>(depth.width) * depth.height);
  std::memcpy(depth.values.data(), png.pixels.data(), depth.values.size() * 2);
  return depth;
}

void write_depth(const DepthImage& depth, const fs::path& path) {
  write_png(reinterpret_cast<const std::uint8_t*>(depth.values.data()), depth.width, depth.height, PNG_COLOR_TYPE_GRAY,
            16, static_cast<std::size_t>(depth.width) * 2, path);
}

CameraIntrinsics load_intrinsics(const fs::path& path) {
  CameraIntrinsics intr;
  try {
    const auto j = nlohmann::json::parse(read_text(path));
    intr.fx = j.at("fx").get<double>();
    intr.fy = j.at("fy").get<double>();
    intr.cx = j.at("cx").get<double>();
    intr.cy = j.at("cy").get<double>();
    intr.depth_scale = j.at("depth_scale").get<double>();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseFailure, path.string() + ": " + e.what());
  }
  intr.validate();
  return intr;
}

GroundTruthMask mask_from_image(const RasterImage& img) {
  if (img.channels != 1) fail(ErrorCode::WrongChannelCount, "mask image must be single-channel");
  GroundTruthMask m;
  m.width = img.width;
  m.height = img.height;
  m.values = img.data;
  return m;
}

RasterImage image_from_mask(const GroundTruthMask& mask) {
  RasterImage img;
  img.width = mask.width;
  img.height = mask.height;
  img.channels = 1;
  img.data = mask.values;
  return img;
}

RasterImage to_gray(const RasterImage& img) {
  if (img.channels == 1) return img;
  RasterImage out(img.width, img.height, 1);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      const double luma = 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
      out.at(x, y) = static_cast<std::uint8_t>(std::lround(luma));
    }
  }
  return out;
}

namespace {

std::string digest_hex(std::span<const std::span<const std::uint8_t>> parts) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int md_len = 0;
  EVP_MD_CTX* ctx = EVP_MD_CTX_new();
  if (!ctx) fail(ErrorCode::IoFailure, "digest context allocation failed");
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  for (const auto& part : parts) EVP_DigestUpdate(ctx, part.data(), part.size());
  EVP_DigestFinal_ex(ctx, md, &md_len);
  EVP_MD_CTX_free(ctx);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string hex;
  hex.reserve(md_len * 2);
  for (unsigned int i = 0; i < md_len; ++i) {
    hex.push_back(kHex[md[i] >> 4]);
    hex.push_back(kHex[md[i] & 0xf]);
  }
  return hex;
}

}  // namespace

std::string image_digest(const RasterImage& img) {
  const std::string header =
      std::to_string(img.width) + "x" + std::to_string(img.height) + "x" + std::to_string(img.channels) + "\n";
  const std::array<std::span<const std::uint8_t>, 2> parts{
      std::span(reinterpret_cast<const std::uint8_t*>(header.data()), header.size()), std::span(img.data)};
  return digest_hex(parts);
}

std::string sha256_hex(std::span<const std::uint8_t> bytes) {
  const std::array<std::span<const std::uint8_t>, 1> parts{bytes};
  return digest_hex(parts);
}

// ---------------------------------------------------------------- files

std::vector<std::uint8_t> read_file_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file_atomic(const fs::path& path, std::span<const std::uint8_t> bytes) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorCode::IoFailure, "cannot write " + tmp.string());
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorCode::IoFailure, "short write to " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) fail(ErrorCode::IoFailure, "rename to " + path.string() + ": " + ec.message());
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::string read_text(const fs::path& path) {
  if (fs::is_directory(path)) fail(ErrorCode::IoFailure, path.string() + " is a directory");
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::vector<std::string> read_lines(const fs::path& path) {
  if (fs::is_directory(path)) fail(ErrorCode::IoFailure, path.string() + " is a directory");
  std::ifstream in(path);
  if (!in) fail(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    const auto b = line.find_first_not_of(" \t\r");
    if (b == std::string::npos) continue;
    const auto e = line.find_last_not_of(" \t\r");
    lines.push_back(line.substr(b, e - b + 1));
  }
  return lines;
}

}  // namespace afft
