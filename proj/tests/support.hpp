#pragma once

#include <algorithm>
#include <atomic>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>
#include <unistd.h>

#include <Eigen/LU>

#include "afft/correspondence.hpp"
#include "afft/grasp.hpp"
#include "afft/memory.hpp"
#include "afft/retrieval.hpp"
#include "afft/tensor_io.hpp"

namespace afft::testing {

/// Unique scratch directory removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("afft-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline RasterImage random_image(std::mt19937_64& rng, int w, int h, int c) {
  RasterImage img(w, h, c);
  for (auto& v : img.data) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

/// Embeds an image as its first `dim` samples shifted by -127.5.
class PrefixEmbedder final : public Embedder {
 public:
  PrefixEmbedder(std::string name, std::size_t dim) : name_(std::move(name)), dim_(dim) {}
  std::string name() const override { return name_; }
  EmbeddingVector embed(const RasterImage& img) const override {
    std::vector<float> v(dim_);
    for (std::size_t i = 0; i < dim_; ++i) v[i] = static_cast<float>(img.data[i % img.data.size()]) - 127.5f;
    return EmbeddingVector(std::move(v), name_);
  }

 private:
  std::string name_;
  std::size_t dim_;
};

/// Adds `n` records over categories c0..c{m-1} with random "toy" embeddings of
/// size `dim`. About one in five embeddings duplicates an earlier one to create ties.
inline void fill_random_memory(AffordanceMemory& mem, std::mt19937_64& rng, int n, int m, std::size_t dim) {
  std::normal_distribution<float> gauss(0.0f, 1.0f);
  std::vector<std::vector<float>> used;
  std::set<std::string> ids;
  for (int i = 0; i < n; ++i) {
    AffordanceRecord rec;
    do {
      rec.id = "r" + std::to_string(rng() % 100000);
    } while (!ids.insert(rec.id).second);
    rec.category = "c" + std::to_string(rng() % static_cast<std::uint64_t>(m));
    rec.crop = random_image(rng, 4, 4, 3);
    rec.contact_points.points = {{1, 1}};
    std::vector<float> v(dim);
    if (!used.empty() && rng() % 5 == 0) {
      v = used[rng() % used.size()];
    } else {
      for (auto& x : v) x = gauss(rng);
    }
    used.push_back(v);
    rec.embeddings.emplace("toy", EmbeddingVector(v, "toy"));
    mem.add(std::move(rec));
  }
}

/// Exhaustive reference ranking: gate by category, score every record in long
/// double, order by score then id.
inline std::vector<std::string> brute_force_ranking(const AffordanceMemory& mem, const EmbeddingVector& query,
                                                    const std::string& category, std::size_t k) {
  std::string lower = category;
  for (auto& ch : lower) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
  bool seen = false;
  for (const auto& r : mem.records()) seen = seen || r.category == lower;
  std::vector<std::pair<long double, std::string>> scored;
  for (const auto& r : mem.records()) {
    if (seen && r.category != lower) continue;
    const auto& e = r.embeddings.at(query.encoder_name()).values();
    long double dot = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < e.size(); ++i) {
      dot += static_cast<long double>(e[i]) * query.values()[i];
      na += static_cast<long double>(e[i]) * e[i];
      nb += static_cast<long double>(query.values()[i]) * query.values()[i];
    }
    scored.emplace_back(dot / std::sqrt(na * nb), r.id);
  }
  std::sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) {
    if (std::fabs(a.first - b.first) > 1e-12L) return a.first > b.first;
    return a.second < b.second;
  });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < scored.size() && i < k; ++i) out.push_back(scored[i].second);
  return out;
}

/// Random map with grid up to max_grid, image 1-3x the grid plus slack. Some
/// cells are zeroed and some duplicated to exercise the tie and skip rules.
inline DenseFeatureMap random_feature_map(std::mt19937_64& rng, int max_grid, int channels = 0) {
  DenseFeatureMap fm;
  fm.channels = channels > 0 ? channels : 1 + static_cast<int>(rng() % 12);
  fm.grid_w = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_grid));
  fm.grid_h = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_grid));
  fm.image_w = fm.grid_w * (1 + static_cast<int>(rng() % 3)) + static_cast<int>(rng() % 3);
  fm.image_h = fm.grid_h * (1 + static_cast<int>(rng() % 3)) + static_cast<int>(rng() % 3);
  const std::size_t cells = static_cast<std::size_t>(fm.grid_w) * fm.grid_h;
  fm.data.resize(cells * fm.channels);
  std::normal_distribution<float> g;
  for (auto& v : fm.data) v = g(rng);
  const auto set_cell = [&](std::size_t dst, std::size_t src, bool zero) {
    for (int c = 0; c < fm.channels; ++c) fm.data[c * cells + dst] = zero ? 0.0f : fm.data[c * cells + src];
  };
  for (std::size_t i = 0; i < cells / 8; ++i) set_cell(rng() % cells, 0, true);
  for (std::size_t i = 0; i < cells / 8; ++i) set_cell(rng() % cells, rng() % cells, false);
  return fm;
}

/// Bilinear lookup written out from the grid-coordinate rule, rounded to f32.
inline std::vector<float> oracle_feature(const DenseFeatureMap& fm, double x, double y) {
  auto grid = [](double p, int image, int grid) {
    double g = (p + 0.5) * grid / image - 0.5;
    if (g < 0) g = 0;
    if (g > grid - 1) g = grid - 1;
    return g;
  };
  const double gx = grid(x, fm.image_w, fm.grid_w), gy = grid(y, fm.image_h, fm.grid_h);
  const int x0 = static_cast<int>(gx), y0 = static_cast<int>(gy);
  const int x1 = x0 + 1 < fm.grid_w ? x0 + 1 : x0, y1 = y0 + 1 < fm.grid_h ? y0 + 1 : y0;
  const double fx = gx - x0, fy = gy - y0;
  std::vector<float> out(fm.channels);
  for (int c = 0; c < fm.channels; ++c) {
    const double top = fm.at(c, y0, x0) * (1 - fx) + fm.at(c, y0, x1) * fx;
    const double bottom = fm.at(c, y1, x0) * (1 - fx) + fm.at(c, y1, x1) * fx;
    out[c] = static_cast<float>(top * (1 - fy) + bottom * fy);
  }
  return out;
}

struct OracleMatch {
  int gx = -1;
  int gy = -1;
  long double similarity = 0;
  Point2d center;
};

/// Exhaustive scan: every non-zero target cell scored in long double, first maximum kept.
inline OracleMatch oracle_match(const std::vector<float>& v, const DenseFeatureMap& tgt) {
  OracleMatch best;
  bool have = false;
  long double nv = 0;
  for (float f : v) nv += static_cast<long double>(f) * f;
  for (int gy = 0; gy < tgt.grid_h; ++gy) {
    for (int gx = 0; gx < tgt.grid_w; ++gx) {
      long double dot = 0, nt = 0;
      for (int c = 0; c < tgt.channels; ++c) {
        dot += static_cast<long double>(v[c]) * tgt.at(c, gy, gx);
        nt += static_cast<long double>(tgt.at(c, gy, gx)) * tgt.at(c, gy, gx);
      }
      if (nt == 0) continue;
      const long double s = dot / std::sqrt(nv * nt);
      if (!have || s > best.similarity) {
        best = {gx, gy, s, {}};
        have = true;
      }
    }
  }
  if (have) {
    best.center = {(best.gx + 0.5) * tgt.image_w / tgt.grid_w - 0.5, (best.gy + 0.5) * tgt.image_h / tgt.grid_h - 0.5};
  }
  return best;
}

/// DTM from its definition: the nearest above-threshold pixel of an outside
/// point always lies on the contour, so scanning the whole region is exact.
inline double oracle_dtm(const std::vector<Pixel>& points, const GroundTruthMask& mask, int threshold) {
  long double total = 0;
  for (const auto& p : points) {
    if (mask.at(p.x, p.y) > threshold) continue;
    long best = -1;
    for (int y = 0; y < mask.height; ++y) {
      for (int x = 0; x < mask.width; ++x) {
        if (mask.at(x, y) <= threshold) continue;
        const long d = static_cast<long>(x - p.x) * (x - p.x) + static_cast<long>(y - p.y) * (y - p.y);
        if (best < 0 || d < best) best = d;
      }
    }
    total += std::sqrt(static_cast<long double>(best));
  }
  const long double diag = std::sqrt(static_cast<long double>(mask.width) * mask.width +
                                     static_cast<long double>(mask.height) * mask.height);
  return static_cast<double>(total / points.size() / diag);
}

/// Random blob mask: a few rectangles of random values over a zero background.
inline GroundTruthMask random_mask(std::mt19937_64& rng, int max_side) {
  const int w = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_side));
  const int h = 1 + static_cast<int>(rng() % static_cast<std::uint64_t>(max_side));
  GroundTruthMask m(w, h, 0);
  const int blobs = 1 + static_cast<int>(rng() % 4);
  for (int b = 0; b < blobs; ++b) {
    const int x0 = static_cast<int>(rng() % w), y0 = static_cast<int>(rng() % h);
    const int x1 = x0 + 1 + static_cast<int>(rng() % (w - x0)), y1 = y0 + 1 + static_cast<int>(rng() % (h - y0));
    const auto v = static_cast<std::uint8_t>(rng() % 256);
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) m.at(x, y) = v;
    }
  }
  // Sprinkle noise so contours are irregular.
  for (int i = 0; i < w * h / 10; ++i) m.at(static_cast<int>(rng() % w), static_cast<int>(rng() % h)) = static_cast<std::uint8_t>(rng() % 256);
  return m;
}

inline std::vector<Pixel> random_points(std::mt19937_64& rng, const Size& s, std::size_t n) {
  std::vector<Pixel> pts(n);
  for (auto& p : pts) p = {static_cast<int>(rng() % s.width), static_cast<int>(rng() % s.height)};
  return pts;
}

/// Exhaustive argmin of |t - p| in long double; ties prefer the higher score
/// (absent lowest), then the earlier index.
inline std::size_t oracle_select(const std::vector<GraspCandidate>& cands, const Eigen::Vector3d& p) {
  std::size_t best = 0;
  long double best_d = -1;
  for (std::size_t i = 0; i < cands.size(); ++i) {
    long double d = 0;
    for (int k = 0; k < 3; ++k) {
      const long double diff = static_cast<long double>(cands[i].translation[k]) - p[k];
      d += diff * diff;
    }
    const auto score = [](const GraspCandidate& c) { return c.score ? static_cast<long double>(*c.score) : -1e300L; };
    if (best_d < 0 || d < best_d || (d == best_d && score(cands[i]) > score(cands[best]))) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

/// Value on the 1/1024 lattice in [-1, 1]; sums and products stay exact in double.
inline double dyadic(std::mt19937_64& rng) { return (static_cast<double>(rng() % 2049) - 1024.0) / 1024.0; }

/// Candidates on the dyadic lattice; some translations are repeated with other scores to force ties.
inline std::vector<GraspCandidate> random_candidates(std::mt19937_64& rng, std::size_t n) {
  std::vector<GraspCandidate> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& c = out[i];
    if (i > 0 && rng() % 6 == 0) {
      c.translation = out[rng() % i].translation;
    } else {
      c.translation = {dyadic(rng), dyadic(rng), dyadic(rng)};
    }
    c.width = static_cast<double>(rng() % 100) / 1000.0;
    if (rng() % 4) c.score = static_cast<double>(rng() % 10) / 10.0;
  }
  return out;
}

/// The 24 proper rotations that permute axes with sign changes.
inline std::vector<Eigen::Matrix3d> signed_permutation_rotations() {
  std::vector<Eigen::Matrix3d> out;
  const int perms[6][3] = {{0, 1, 2}, {0, 2, 1}, {1, 0, 2}, {1, 2, 0}, {2, 0, 1}, {2, 1, 0}};
  for (const auto& perm : perms) {
    for (int signs = 0; signs < 8; ++signs) {
      Eigen::Matrix3d r = Eigen::Matrix3d::Zero();
      for (int row = 0; row < 3; ++row) r(row, perm[row]) = (signs >> row) & 1 ? -1.0 : 1.0;
      if (r.determinant() > 0) out.push_back(r);
    }
  }
  return out;
}

}  // namespace afft::testing
