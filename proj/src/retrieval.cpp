#include "afft/retrieval.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "afft/error.hpp"
#include "afft/parallel.hpp"

namespace afft {

namespace {

struct Plane {
  int w = 0;
  int h = 0;
  std::vector<double> v;
  double at(int x, int y) const {
    x = std::clamp(x, 0, w - 1);
    y = std::clamp(y, 0, h - 1);
    return v[static_cast<std::size_t>(y) * w + x];
  }
};

Plane luma(const RasterImage& img) {
  Plane p{img.width, img.height, std::vector<double>(static_cast<std::size_t>(img.width) * img.height)};
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      p.v[static_cast<std::size_t>(y) * img.width + x] =
          img.channels == 1 ? img.at(x, y)
                            : 0.299 * img.at(x, y, 0) + 0.587 * img.at(x, y, 1) + 0.114 * img.at(x, y, 2);
    }
  }
  return p;
}

Plane halve(const Plane& p) {
  Plane out{std::max(1, p.w / 2), std::max(1, p.h / 2), {}};
  out.v.resize(static_cast<std::size_t>(out.w) * out.h);
  for (int y = 0; y < out.h; ++y) {
    for (int x = 0; x < out.w; ++x) {
      out.v[static_cast<std::size_t>(y) * out.w + x] =
          0.25 * (p.at(2 * x, 2 * y) + p.at(2 * x + 1, 2 * y) + p.at(2 * x, 2 * y + 1) + p.at(2 * x + 1, 2 * y + 1));
    }
  }
  return out;
}

constexpr int kGrid = 4;
constexpr int kBins = 8;

void cell_histograms(const Plane& p, float* out) {
  std::array<double, kGrid * kGrid * kBins> inten{}, grad{};
  for (int y = 0; y < p.h; ++y) {
    for (int x = 0; x < p.w; ++x) {
      const int cell = (y * kGrid / p.h) * kGrid + (x * kGrid / p.w);
      const double v = p.at(x, y);
      const int ib = std::min(kBins - 1, static_cast<int>(v / 32.0));
      inten[static_cast<std::size_t>(cell * kBins + ib)] += 1.0;
      const double gx = p.at(x + 1, y) - p.at(x - 1, y);
      const double gy = p.at(x, y + 1) - p.at(x, y - 1);
      const double mag = std::hypot(gx, gy);
      if (mag > 0) {
        double theta = std::atan2(gy, gx);
        if (theta < 0) theta += 2 * std::numbers::pi;
        const int gb = std::min(kBins - 1, static_cast<int>(theta / (2 * std::numbers::pi) * kBins));
        grad[static_cast<std::size_t>(cell * kBins + gb)] += mag;
      }
    }
  }
  for (int c = 0; c < kGrid * kGrid; ++c) {
    double si = 0, sg = 0;
    for (int b = 0; b < kBins; ++b) {
      si += inten[static_cast<std::size_t>(c * kBins + b)];
      sg += grad[static_cast<std::size_t>(c * kBins + b)];
    }
    for (int b = 0; b < kBins; ++b) {
      out[c * 2 * kBins + b] = si > 0 ? static_cast<float>(inten[static_cast<std::size_t>(c * kBins + b)] / si) : 0.f;
      out[c * 2 * kBins + kBins + b] =
          sg > 0 ? static_cast<float>(grad[static_cast<std::size_t>(c * kBins + b)] / sg) : 0.f;
    }
  }
}

// sRGB (8-bit) to CIELAB, D65 white.
std::array<double, 3> to_lab(double r8, double g8, double b8) {
  auto lin = [](double c) {
    c /= 255.0;
    return c <= 0.04045 ? c / 12.92 : std::pow((c + 0.055) / 1.055, 2.4);
  };
  const double r = lin(r8), g = lin(g8), b = lin(b8);
  const double x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
  const double y = (0.2126729 * r + 0.7151522 * g + 0.0721750 * b) / 1.0;
  const double z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
  auto f = [](double t) { return t > 216.0 / 24389.0 ? std::cbrt(t) : (24389.0 / 27.0 * t + 16.0) / 116.0; };
  const double fx = f(x), fy = f(y), fz = f(z);
  return {116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)};
}

constexpr int kPerceptualSide = 64;

std::vector<std::array<double, 3>> resized_lab(const RasterImage& img) {
  if (img.empty()) fail(ErrorCode::EmptyImage, "perceptual distance of an empty image");
  std::vector<std::array<double, 3>> out(kPerceptualSide * kPerceptualSide);
  const double sx = static_cast<double>(img.width) / kPerceptualSide;
  const double sy = static_cast<double>(img.height) / kPerceptualSide;
  auto sample = [&](int x, int y, int c) {
    x = std::clamp(x, 0, img.width - 1);
    y = std::clamp(y, 0, img.height - 1);
    return static_cast<double>(img.at(x, y, img.channels == 1 ? 0 : c));
  };
  for (int y = 0; y < kPerceptualSide; ++y) {
    for (int x = 0; x < kPerceptualSide; ++x) {
      const double fx = std::max(0.0, (x + 0.5) * sx - 0.5);
      const double fy = std::max(0.0, (y + 0.5) * sy - 0.5);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double ax = fx - x0, ay = fy - y0;
      std::array<double, 3> rgb{};
      for (int c = 0; c < 3; ++c) {
        rgb[static_cast<std::size_t>(c)] =
            (1 - ay) * ((1 - ax) * sample(x0, y0, c) + ax * sample(x0 + 1, y0, c)) +
            ay * ((1 - ax) * sample(x0, y0 + 1, c) + ax * sample(x0 + 1, y0 + 1, c));
      }
      out[static_cast<std::size_t>(y * kPerceptualSide + x)] = to_lab(rgb[0], rgb[1], rgb[2]);
    }
  }
  return out;
}

}  // namespace

EmbeddingVector PatchgramEmbedder::embed(const RasterImage& img) const {
  if (img.empty()) fail(ErrorCode::EmptyImage, "cannot embed an empty image");
  std::vector<float> v(kDim, 0.f);
  const Plane full = luma(img);
  cell_histograms(full, v.data());
  cell_histograms(halve(full), v.data() + kDim / 2);
  double sq = 0;
  for (float f : v) sq += static_cast<double>(f) * f;
  const double inv = 1.0 / std::sqrt(sq);
  for (float& f : v) f = static_cast<float>(f * inv);
  return EmbeddingVector(std::move(v), name());
}

std::filesystem::path FileEmbedder::path_for(const RasterImage& img) const {
  return dir_ / (image_digest(img) + "." + encoder_ + ".emb.rft");
}

EmbeddingVector FileEmbedder::embed(const RasterImage& img) const {
  const auto p = path_for(img);
  if (!std::filesystem::exists(p)) fail(ErrorCode::MissingFeatureFile, "no exported embedding at " + p.string());
  return EmbeddingVector::from_tensor(read_tensor(p), encoder_);
}

double Dssim64Distance::distance(const RasterImage& a, const RasterImage& b) const {
  const auto la = resized_lab(a);
  const auto lb = resized_lab(b);
  double sum = 0.0;
  for (std::size_t i = 0; i < la.size(); ++i) {
    const double d0 = la[i][0] - lb[i][0], d1 = la[i][1] - lb[i][1], d2 = la[i][2] - lb[i][2];
    sum += std::sqrt(d0 * d0 + d1 * d1 + d2 * d2);
  }
  return sum / static_cast<double>(la.size());
}

std::unique_ptr<Embedder> make_embedder(const std::string& name, const std::filesystem::path& embedding_dir) {
  if (name == "patchgram-v1") return std::make_unique<PatchgramEmbedder>();
  if (embedding_dir.empty()) {
    fail(ErrorCode::InvalidInput, "encoder '" + name + "' is not built in; supply an embedding directory");
  }
  return std::make_unique<FileEmbedder>(embedding_dir, name);
}

double cosine_similarity(std::span<const float> a, std::span<const float> b) {
  if (a.size() != b.size()) {
    fail(ErrorCode::DimensionMismatch, std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  }
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  if (na == 0.0 || nb == 0.0) fail(ErrorCode::ZeroNormVector, "cosine similarity with a zero vector");
  return std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
}

double cosine_similarity(const EmbeddingVector& a, const EmbeddingVector& b) {
  return cosine_similarity(std::span(a.values()), std::span(b.values()));
}

std::vector<RetrievalResult> rank_candidates(const EmbeddingVector& query, const std::vector<Candidate>& pool, int k,
                                             int jobs) {
  if (k < 1) fail(ErrorCode::InvalidInput, "k must be >= 1");
  std::vector<RetrievalResult> all(pool.size());
  parallel_for(pool.size(), jobs, [&](std::size_t i) {
    all[i] = {pool[i].id, pool[i].category, cosine_similarity(query, *pool[i].embedding), 0};
  });
  std::sort(all.begin(), all.end(), [](const RetrievalResult& a, const RetrievalResult& b) {
    if (a.similarity != b.similarity) return a.similarity > b.similarity;
    return a.record_id < b.record_id;
  });
  if (all.size() > static_cast<std::size_t>(k)) all.resize(static_cast<std::size_t>(k));
  for (std::size_t i = 0; i < all.size(); ++i) all[i].rank = static_cast<int>(i + 1);
  return all;
}

EmbeddingVector record_embedding(const AffordanceMemory& mem, const AffordanceRecord& rec, const Embedder& enc) {
  if (auto cached = mem.cached_embedding(rec.id, enc.name())) return *cached;
  EmbeddingVector e = enc.embed(rec.crop);
  mem.cache_embedding(rec.id, e);
  return e;
}

std::vector<RetrievalResult> retrieve(const AffordanceMemory& mem, const RasterImage& target_crop,
                                      const std::string& target_category, int k, const Embedder& enc, int jobs) {
  if (k < 1) fail(ErrorCode::InvalidInput, "k must be >= 1");
  if (mem.empty()) fail(ErrorCode::EmptyMemory, "the affordance memory has no records");
  const std::string category = normalize_category(target_category);
  const auto records = mem.has_category(category) ? mem.filter(category) : mem.filter(std::nullopt);

  std::vector<EmbeddingVector> embeddings(records.size());
  parallel_for(records.size(), jobs, [&](std::size_t i) { embeddings[i] = record_embedding(mem, *records[i], enc); });
  std::vector<Candidate> pool;
  pool.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) pool.push_back({records[i]->id, records[i]->category, &embeddings[i]});
  return rank_candidates(enc.embed(target_crop), pool, k, jobs);
}

RetrievalResult rerank_perceptual(const AffordanceMemory& mem, const std::vector<RetrievalResult>& results,
                                  const RasterImage& target_crop, const PerceptualDistance& pd) {
  if (results.empty()) fail(ErrorCode::InvalidInput, "nothing to re-rank");
  std::size_t best = 0;
  double best_d = pd.distance(target_crop, mem.get(results[0].record_id).crop);
  for (std::size_t i = 1; i < results.size(); ++i) {
    const double d = pd.distance(target_crop, mem.get(results[i].record_id).crop);
    if (d < best_d || (d == best_d && results[i].rank < results[best].rank)) {
      best_d = d;
      best = i;
    }
  }
  return results[best];
}

}  // namespace afft
