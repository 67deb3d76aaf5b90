#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>

#include "../support.hpp"
#include "afft/correspondence.hpp"
#include "afft/error.hpp"
#include "afft/pipeline.hpp"

using namespace afft;

namespace {

DenseFeatureMap one_hot_map(int gw, int gh, int iw, int ih) {
  DenseFeatureMap fm{gw * gh, gh, gw, ih, iw, {}};
  fm.data.assign(static_cast<std::size_t>(fm.channels) * gw * gh, 0.0f);
  for (int i = 0; i < gw * gh; ++i) fm.data[static_cast<std::size_t>(i) * gw * gh + i] = 1.0f;
  return fm;
}

/// Per-pixel RGB features of the transformed image; not dihedral-aware beyond the image itself.
class RgbExtractor final : public FeatureExtractor {
 public:
  std::string name() const override { return "rgb"; }
  DenseFeatureMap extract(const RasterImage& original, Dihedral d) const override {
    ++calls;
    const RasterImage img = transform_image(original, d);
    DenseFeatureMap fm{3, img.height, img.width, img.height, img.width, {}};
    const std::size_t cells = static_cast<std::size_t>(img.width) * img.height;
    fm.data.resize(3 * cells);
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        for (int c = 0; c < 3; ++c) fm.data[c * cells + static_cast<std::size_t>(y) * img.width + x] = img.at(x, y, c);
      }
    }
    return fm;
  }
  mutable std::atomic<int> calls{0};
};

AffordanceRecord source(const std::string& id, const RasterImage& crop, std::vector<Point2d> pts) {
  AffordanceRecord rec;
  rec.id = id;
  rec.category = "cup";
  rec.crop = crop;
  rec.contact_points.points = std::move(pts);
  return rec;
}

}  // namespace

TEST_CASE("feature_at examples") {
  std::mt19937_64 rng(1);
  DenseFeatureMap same{2, 3, 4, 3, 4, {}};
  same.data.resize(24);
  for (auto& v : same.data) v = static_cast<float>(rng() % 100);
  for (int y = 0; y < 3; ++y) {
    for (int x = 0; x < 4; ++x) {
      const auto f = feature_at(same, {double(x), double(y)});
      CHECK(f[0] == same.at(0, y, x));
      CHECK(f[1] == same.at(1, y, x));
    }
  }

  const DenseFeatureMap single{3, 1, 1, 9, 7, {1.5f, -2.0f, 4.0f}};
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 7; ++x) CHECK(feature_at(single, {double(x), double(y)}) == single.data);
  }

  const DenseFeatureMap quad{1, 2, 2, 4, 4, {1, 2, 3, 10}};
  CHECK(feature_at(quad, {1.5, 1.5})[0] == doctest::Approx(4.0));

  CHECK_THROWS_WITH_AS(feature_at(quad, {4, 0}), doctest::Contains("OutOfBounds"), Error);
  CHECK_THROWS_WITH_AS(feature_at(quad, {0, -0.5}), doctest::Contains("OutOfBounds"), Error);
}

TEST_CASE("feature_at agrees with the bilinear oracle") {
  std::mt19937_64 rng(2);
  for (int t = 0; t < 200; ++t) {
    const auto fm = testing::random_feature_map(rng, 12);
    const double x = std::uniform_real_distribution<double>(0, fm.image_w - 1)(rng);
    const double y = std::uniform_real_distribution<double>(0, fm.image_h - 1)(rng);
    CHECK(feature_at(fm, {x, y}) == testing::oracle_feature(fm, x, y));
  }
}

TEST_CASE("match_point equals the exhaustive scan") {
  std::mt19937_64 rng(3);
  int compared = 0;
  for (int t = 0; t < 300; ++t) {
    const auto src = testing::random_feature_map(rng, 16);
    auto tgt = testing::random_feature_map(rng, 16, src.channels);
    const Pixel p{static_cast<int>(rng() % src.image_w), static_cast<int>(rng() % src.image_h)};
    const auto v = testing::oracle_feature(src, p.x, p.y);
    const auto want = testing::oracle_match(v, tgt);
    bool zero = true;
    for (float f : v) zero = zero && f == 0.0f;
    if (zero || want.gx < 0) {
      CHECK_THROWS_WITH_AS(match_point(src, to_point(p), tgt), doctest::Contains("ZeroFeature"), Error);
      continue;
    }
    const auto got = match_point(src, to_point(p), tgt);
    CHECK(got.target_point == want.center);
    CHECK(std::abs(got.similarity - static_cast<double>(want.similarity)) < 1e-9);
    ++compared;
  }
  CHECK(compared > 250);
}

TEST_CASE("match_point tie and error rules") {
  DenseFeatureMap constant{2, 3, 3, 6, 6, {}};
  constant.data.assign(18, 1.0f);
  const auto r = match_point(constant, {4, 4}, constant);
  CHECK(r.target_point == cell_center(constant, 0, 0));
  CHECK(r.target_point == Point2d{0.5, 0.5});
  CHECK(r.similarity == doctest::Approx(1.0));

  DenseFeatureMap other{3, 3, 3, 6, 6, {}};
  other.data.assign(27, 1.0f);
  CHECK_THROWS_WITH_AS(match_point(constant, {0, 0}, other), doctest::Contains("DimensionMismatch"), Error);

  DenseFeatureMap zero = constant;
  zero.data.assign(18, 0.0f);
  CHECK_THROWS_WITH_AS(match_point(zero, {0, 0}, constant), doctest::Contains("ZeroFeature"), Error);
}

TEST_CASE("self-correspondence with injective features") {
  for (auto [gw, gh, iw, ih] : {std::array{5, 4, 5, 4}, std::array{6, 3, 18, 7}, std::array{1, 7, 2, 21}}) {
    const auto fm = one_hot_map(gw, gh, iw, ih);
    for (int gy = 0; gy < gh; ++gy) {
      for (int gx = 0; gx < gw; ++gx) {
        const Point2d c = cell_center(fm, gy, gx);
        const auto r = match_point(fm, c, fm);
        CHECK(r.target_point == c);
        CHECK(r.similarity == 1.0);
      }
    }
  }
}

TEST_CASE("argmax is invariant to positive scaling of the target") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 50; ++t) {
    const auto src = testing::random_feature_map(rng, 10, 6);
    auto tgt = testing::random_feature_map(rng, 10, 6);
    tgt.data[0] = 1.0f;  // at least one non-zero cell
    auto scaled = tgt;
    for (auto& v : scaled.data) v *= 2.5f;
    const Point2d p{0, 0};
    const auto v = testing::oracle_feature(src, p.x, p.y);
    if (std::all_of(v.begin(), v.end(), [](float f) { return f == 0.0f; })) continue;
    CHECK(match_point(src, p, tgt).target_point == match_point(src, p, scaled).target_point);
  }
}

TEST_CASE("dihedral coordinate maps") {
  const Size s{5, 3};
  CHECK(apply(Dihedral::R90, Pixel{4, 0}, s) == Pixel{2, 4});
  CHECK(apply(Dihedral::R90, Point2d{1, 2}, s) == Point2d{0, 1});
  CHECK(apply(Dihedral::R180, Pixel{0, 0}, s) == Pixel{4, 2});
  CHECK(apply(Dihedral::R270, Pixel{0, 0}, s) == Pixel{0, 4});
  CHECK(apply(Dihedral::FR0, Pixel{0, 1}, s) == Pixel{4, 1});
  CHECK(transformed_size(s, Dihedral::R90) == Size{3, 5});
  CHECK(transformed_size(s, Dihedral::FR180) == s);

  for (const Size size : {Size{5, 3}, Size{1, 4}, Size{7, 7}, Size{2, 9}}) {
    for (const auto d : kAllTransforms) {
      CHECK(parse_dihedral(to_string(d)) == d);
      const Size ts = transformed_size(size, d);
      for (int y = 0; y < size.height; ++y) {
        for (int x = 0; x < size.width; ++x) {
          const Pixel q = apply(d, Pixel{x, y}, size);
          CHECK(ts.contains(q));
          CHECK(to_pixel(apply_inverse(d, to_point(q), size)) == Pixel{x, y});
          CHECK(apply(inverse(d), q, ts) == Pixel{x, y});
        }
      }
    }
  }
  CHECK_THROWS_AS(parse_dihedral("r45"), Error);
}

TEST_CASE("image transforms follow the coordinate maps") {
  std::mt19937_64 rng(5);
  const auto img = testing::random_image(rng, 7, 4, 3);
  for (const auto d : kAllTransforms) {
    const auto t = transform_image(img, d);
    CHECK(t.size() == transformed_size(img.size(), d));
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const Pixel q = apply(d, Pixel{x, y}, img.size());
        for (int c = 0; c < 3; ++c) CHECK(t.at(q.x, q.y, c) == img.at(x, y, c));
      }
    }
    CHECK(transform_image(t, inverse(d)) == img);
  }
  // Flipped codes mirror first, then rotate.
  CHECK(transform_image(img, Dihedral::FR90) == transform_image(transform_image(img, Dihedral::FR0), Dihedral::R90));

  GroundTruthMask m(3, 2);
  m.values = {1, 2, 3, 4, 5, 6};
  CHECK(transform_mask(m, Dihedral::R90).values == std::vector<std::uint8_t>{4, 1, 5, 2, 6, 3});
}

TEST_CASE("toygrid features are dihedral-invariant per pixel") {
  std::mt19937_64 rng(6);
  const auto img = testing::random_image(rng, 13, 9, 3);
  const ToyGridExtractor fx;
  const auto base = fx.extract(img, Dihedral::R0);
  CHECK(base.grid_w == 13);
  CHECK(base.grid_h == 9);
  CHECK(fx.extract(img, Dihedral::R0).data == base.data);
  for (const auto d : kAllTransforms) {
    const auto fm = fx.extract(img, d);
    CHECK(fm.image_size() == transformed_size(img.size(), d));
    for (int y = 0; y < img.height; ++y) {
      for (int x = 0; x < img.width; ++x) {
        const Pixel q = apply(d, Pixel{x, y}, img.size());
        bool same = true;
        for (int c = 0; c < fm.channels; ++c) same = same && fm.at(c, q.y, q.x) == base.at(c, y, x);
        CHECK(same);
      }
    }
  }
}

TEST_CASE("match_with_transforms") {
  std::mt19937_64 rng(7);
  const ToyGridExtractor fx;
  const auto src = testing::random_image(rng, 21, 15, 3);

  SUBCASE("identical target keeps r0") {
    const auto tgt_fm = fx.extract(src, Dihedral::R0);
    for (const Pixel p : {Pixel{3, 4}, Pixel{10, 7}, Pixel{20, 14}}) {
      const auto r = match_with_transforms(src, p, tgt_fm, fx);
      CHECK(r.transform == Dihedral::R0);
      CHECK(r.target_point == to_point(p));
      CHECK(r.similarity == doctest::Approx(1.0));
    }
  }
  SUBCASE("transformed targets recover the mapped point") {
    for (const auto d : kAllTransforms) {
      const auto tgt = transform_image(src, d);
      const auto tgt_fm = fx.extract(tgt, Dihedral::R0);
      for (int t = 0; t < 5; ++t) {
        const Pixel p{2 + static_cast<int>(rng() % 17), 2 + static_cast<int>(rng() % 11)};
        const auto want = apply(d, to_point(p), src.size());
        const auto r = match_with_transforms(src, p, tgt_fm, fx);
        CHECK(std::abs(r.target_point.x - want.x) <= 1.0);
        CHECK(std::abs(r.target_point.y - want.y) <= 1.0);
      }
    }
  }
  SUBCASE("without transforms only r0 is searched") {
    const RgbExtractor rgb;
    (void)match_with_transforms(src, {1, 1}, rgb.extract(src, Dihedral::R0), rgb, false);
    CHECK(rgb.calls == 2);
  }
  SUBCASE("source point outside") {
    CHECK_THROWS_WITH_AS(match_with_transforms(src, {21, 0}, fx.extract(src, Dihedral::R0), fx),
                         doctest::Contains("OutOfBounds"), Error);
  }
}

TEST_CASE("transfer with one source and one point") {
  std::mt19937_64 rng(8);
  const ToyGridExtractor fx;
  const auto crop = testing::random_image(rng, 24, 18, 3);
  const auto rec = source("only", crop, {{9, 6}});
  const auto tgt_fm = fx.extract(crop, Dihedral::R0);
  TransferConfig cfg;
  const auto r = transfer_affordance({&rec}, crop, tgt_fm, fx, cfg);
  const auto m = match_with_transforms(crop, {9, 6}, tgt_fm, fx);
  CHECK(r.centroid == to_pixel(m.target_point));
  CHECK(r.centroid == Pixel{9, 6});
  CHECK(r.source_id == "only");
  CHECK(r.points.size() == 5);
  for (const auto& p : r.points) CHECK(std::hypot(p.x - 9, p.y - 6) <= 4.0 + 1e-9);

  cfg.averaging_mode = AveragingMode::AverageThenMap;
  const auto r2 = transfer_affordance({&rec}, crop, tgt_fm, fx, cfg);
  CHECK(r2.centroid == r.centroid);
  CHECK(r2.points == r.points);
  CHECK(r2.mean_similarity == r.mean_similarity);
}

TEST_CASE("transfer picks the source with the higher mean similarity") {
  // Target is uniformly red; each source's contact colour sets its similarity.
  const RasterImage tgt(6, 6, 3, 0);
  RasterImage red = tgt;
  for (int y = 0; y < 6; ++y) {
    for (int x = 0; x < 6; ++x) red.at(x, y, 0) = 255;
  }
  RasterImage a(4, 4, 3, 0), b(4, 4, 3, 0);
  a.at(1, 1, 0) = 90, a.at(1, 1, 1) = 44;  // cos ~0.90
  b.at(2, 2, 0) = 40, b.at(2, 2, 1) = 92;  // cos ~0.40
  const auto ra = source("first", a, {{1, 1}});
  const auto rb = source("second", b, {{2, 2}});
  const RgbExtractor fx;
  const auto fm = fx.extract(red, Dihedral::R0);
  for (const auto& order : {std::vector{&rb, &ra}, std::vector{&ra, &rb}}) {
    const auto r = transfer_affordance(order, red, fm, fx, {});
    CHECK(r.source_id == "first");
    CHECK(r.mean_similarity == doctest::Approx(90 / std::hypot(90, 44)));
    REQUIRE(r.per_source.size() == 2);
  }
  // Equal scores keep the earlier source.
  const auto twin = source("twin", a, {{1, 1}});
  CHECK(transfer_affordance({&twin, &ra}, red, fm, fx, {}).source_id == "twin");

  // A source with all-zero features fails on its own; the other still wins.
  const auto dark = source("dark", RasterImage(4, 4, 3, 0), {{0, 0}});
  CHECK(transfer_affordance({&dark, &rb}, red, fm, fx, {}).source_id == "second");
  CHECK_THROWS_WITH_AS(transfer_affordance({&dark}, red, fm, fx, {}), doctest::Contains("AllSourcesFailed"), Error);
  CHECK_THROWS_WITH_AS(transfer_affordance({&ra}, RasterImage(5, 6, 3), fm, fx, {}), doctest::Contains("ShapeRejected"),
                       Error);
  CHECK_THROWS_AS(transfer_affordance({}, red, fm, fx, {}), Error);
}

TEST_CASE("transfer over fixture crops matches the per-source oracle") {
  testing::TempDir dir("corr");
  FixtureOptions opt;
  opt.categories = {"cup", "mug", "bowl", "bottle", "knife"};
  opt.objects_per_category = 1;
  const auto corpus = generate_fixtures(dir.path(), opt);
  const auto manifest = load_manifest(corpus.manifest_identical);
  std::vector<AffordanceRecord> recs;
  for (const auto& obj : corpus.objects) {
    const auto& entry = manifest.at(obj.video_id + "_same");
    recs.push_back(source(obj.video_id, read_image(entry.image), {to_point(obj.contact)}));
  }
  REQUIRE(recs.size() == 5);
  std::vector<const AffordanceRecord*> sources;
  for (const auto& r : recs) sources.push_back(&r);

  const ToyGridExtractor fx;
  for (const auto& [id, entry] : load_manifest(corpus.manifest_transformed)) {
    const auto tgt = read_image(entry.image);
    const auto tgt_fm = fx.extract(tgt, Dihedral::R0);
    const auto got = transfer_affordance(sources, tgt, tgt_fm, fx, {});

    std::size_t best = 0;
    double best_sim = -2;
    for (std::size_t s = 0; s < recs.size(); ++s) {
      double sum = 0;
      for (const auto& p : recs[s].contact_points.points) {
        sum += match_with_transforms(recs[s].crop, to_pixel(p), tgt_fm, fx).similarity;
      }
      const double mean = sum / static_cast<double>(recs[s].contact_points.points.size());
      if (mean > best_sim) best_sim = mean, best = s;
    }
    CHECK(got.source_id == recs[best].id);
    CHECK(got.mean_similarity == best_sim);
  }
}

TEST_CASE("parallel transfer is deterministic") {
  std::mt19937_64 rng(9);
  const ToyGridExtractor fx;
  std::vector<AffordanceRecord> recs;
  for (int i = 0; i < 4; ++i) {
    recs.push_back(source("s" + std::to_string(i), testing::random_image(rng, 16, 12, 3), {{3, 3}, {8, 5}, {12, 10}}));
  }
  std::vector<const AffordanceRecord*> sources;
  for (const auto& r : recs) sources.push_back(&r);
  const auto tgt = testing::random_image(rng, 20, 14, 3);
  const auto fm = fx.extract(tgt, Dihedral::R0);
  const auto a = transfer_affordance(sources, tgt, fm, fx, {}, 1);
  const auto b = transfer_affordance(sources, tgt, fm, fx, {}, 4);
  CHECK(a.source_id == b.source_id);
  CHECK(a.points == b.points);
  CHECK(a.mean_similarity == b.mean_similarity);
}

TEST_CASE("feature map files") {
  testing::TempDir dir("corr");
  std::mt19937_64 rng(10);
  const auto img = testing::random_image(rng, 8, 6, 3);
  const FileFeatureExtractor fx(dir.path());
  CHECK_THROWS_WITH_AS(fx.extract(img, Dihedral::R90), doctest::Contains("MissingFeatureFile"), Error);

  DenseFeatureMap fm{2, 2, 3, 8, 6, std::vector<float>(12, 0.5f)};  // describes the 6x8 r90 image
  write_tensor(fm.to_tensor(), fx.tensor_path(img, Dihedral::R90));
  auto sidecar = fx.tensor_path(img, Dihedral::R90);
  sidecar.replace_extension(".json");
  std::ofstream(sidecar) << R"({"image_h":8,"image_w":6,"extractor":"test"})";
  const auto back = fx.extract(img, Dihedral::R90);
  CHECK(back.data == fm.data);
  CHECK(back.image_size() == Size{6, 8});

  std::ofstream(sidecar) << R"({"image_h":6,"image_w":8,"extractor":"test"})";
  CHECK_THROWS_WITH_AS(fx.extract(img, Dihedral::R90), doctest::Contains("ShapeRejected"), Error);

  CHECK_THROWS_AS(DenseFeatureMap::from_tensor(Tensor({4}, {1, 2, 3, 4}), 2, 2), Error);
  CHECK_THROWS_AS(DenseFeatureMap::from_tensor(Tensor({1, 4, 4}, std::vector<float>(16, 1)), 2, 2), Error);
  CHECK_THROWS_AS(make_extractor("dift"), Error);
  CHECK(make_extractor("toygrid")->name() == "toygrid");
}

TEST_CASE("caching extractor") {
  auto inner = std::make_shared<RgbExtractor>();
  const CachingExtractor fx(inner);
  std::mt19937_64 rng(11);
  const auto img = testing::random_image(rng, 5, 4, 3);
  const auto a = fx.extract(img, Dihedral::R270);
  const auto b = fx.extract(img, Dihedral::R270);
  CHECK(a.data == b.data);
  CHECK(a.data == inner->extract(img, Dihedral::R270).data);
  CHECK(inner->calls == 2);
  (void)fx.extract(img, Dihedral::R0);
  CHECK(inner->calls == 3);
}

TEST_CASE("averaging mode names") {
  CHECK(parse_averaging_mode("map-then-average") == AveragingMode::MapThenAverage);
  CHECK(parse_averaging_mode(to_string(AveragingMode::AverageThenMap)) == AveragingMode::AverageThenMap);
  CHECK_THROWS_AS(parse_averaging_mode("mean"), Error);
  CHECK(TransferConfig{}.averaging_mode == AveragingMode::MapThenAverage);
}
