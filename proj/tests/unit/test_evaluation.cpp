#include <doctest.h>

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "../planted.hpp"
#include "../support.hpp"
#include "afft/error.hpp"
#include "afft/evaluation.hpp"

using namespace afft;

namespace {

GroundTruthMask square_mask(int size, int x0, int x1, std::uint8_t v = 255) {
  GroundTruthMask m(size, size, 0);
  for (int y = x0; y < x1; ++y) {
    for (int x = x0; x < x1; ++x) m.at(x, y) = v;
  }
  return m;
}

}  // namespace

TEST_CASE("SR examples") {
  GroundTruthMask m(10, 1, 0);
  m.at(0, 0) = 200, m.at(1, 0) = 200, m.at(2, 0) = 122, m.at(3, 0) = 123;
  const std::vector<Pixel> on{{0, 0}, {1, 0}, {0, 0}, {1, 0}, {0, 0}};
  CHECK(metric_sr(on, m) == 1.0);
  const std::vector<Pixel> mixed{{0, 0}, {1, 0}, {5, 0}, {6, 0}, {7, 0}};
  CHECK(metric_sr(mixed, m) == 0.4);
  CHECK(metric_sr(std::vector<Pixel>{{2, 0}}, m) == 0.0);
  CHECK(metric_sr(std::vector<Pixel>{{3, 0}}, m) == 1.0);
  CHECK(metric_sr(std::vector<Pixel>{{0, 0}}, m, 255) == 0.0);
  CHECK_THROWS_WITH_AS(metric_sr(std::vector<Pixel>{}, m), doctest::Contains("EmptyPrediction"), Error);
  CHECK_THROWS_WITH_AS(metric_sr(std::vector<Pixel>{{10, 0}}, m), doctest::Contains("OutOfBounds"), Error);
}

TEST_CASE("NSS examples") {
  GroundTruthMask m(4, 1, 0);
  m.at(0, 0) = 255, m.at(1, 0) = 102;
  CHECK(metric_nss(std::vector<Pixel>{{0, 0}, {0, 0}}, m) == 1.0);
  CHECK(metric_nss(std::vector<Pixel>{{2, 0}, {3, 0}}, m) == 0.0);
  CHECK(metric_nss(std::vector<Pixel>{{0, 0}, {1, 0}}, m) == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(metric_nss(std::vector<Pixel>{{0, 0}}, GroundTruthMask(4, 4, 0)) == 0.0);
  CHECK_THROWS_AS(metric_nss(std::vector<Pixel>{}, m), Error);
}

TEST_CASE("DTM examples") {
  const auto m = square_mask(100, 40, 60);
  const std::vector<Pixel> p{{20, 50}};
  CHECK(metric_dtm(p, m) == doctest::Approx(20.0 / std::sqrt(20000.0)).epsilon(1e-12));
  CHECK(std::abs(metric_dtm(p, m) - 0.14142) < 1e-5);
  CHECK(metric_dtm(std::vector<Pixel>{{45, 45}, {59, 40}}, m) == 0.0);
  CHECK_THROWS_WITH_AS(metric_dtm(std::vector<Pixel>{{1, 1}}, GroundTruthMask(8, 8, 122)), doctest::Contains("EmptyMaskRegion"), Error);

  // Border pixels of a region touching the image edge are contour pixels.
  GroundTruthMask edge(5, 5, 0);
  for (int y = 0; y < 5; ++y) edge.at(0, y) = 255;
  CHECK(mask_contour(edge, 122).size() == 5);
  CHECK(mask_contour(square_mask(10, 2, 6), 122).size() == 12);
}

TEST_CASE("DTM equals the exhaustive oracle") {
  std::mt19937_64 rng(17);
  int checked = 0;
  for (int t = 0; t < 150; ++t) {
    const auto m = testing::random_mask(rng, 48);
    const int thr = static_cast<int>(rng() % 200);
    const auto pts = testing::random_points(rng, m.size(), 1 + rng() % 5);
    if (mask_contour(m, thr).empty()) {
      CHECK_THROWS_AS(metric_dtm(pts, m, thr), Error);
      continue;
    }
    CHECK(std::abs(metric_dtm(pts, m, thr) - testing::oracle_dtm(pts, m, thr)) <= 1e-9);
    ++checked;
  }
  CHECK(checked > 100);
}

TEST_CASE("metric ranges") {
  std::mt19937_64 rng(18);
  for (int t = 0; t < 100; ++t) {
    const auto m = testing::random_mask(rng, 32);
    const auto pts = testing::random_points(rng, m.size(), 5);
    const double sr = metric_sr(pts, m), nss = metric_nss(pts, m);
    CHECK((sr >= 0 && sr <= 1));
    CHECK((nss >= 0 && nss <= 1));
    if (!mask_contour(m, 122).empty()) {
      const double dtm = metric_dtm(pts, m);
      CHECK((dtm >= 0 && dtm <= 1));
    }
  }
}

TEST_CASE("translation equivariance") {
  std::mt19937_64 rng(19);
  for (int t = 0; t < 30; ++t) {
    GroundTruthMask m(40, 40, 0);
    for (int y = 10; y < 25; ++y) {
      for (int x = 10; x < 25; ++x) {
        if (rng() % 3) m.at(x, y) = static_cast<std::uint8_t>(rng() % 256);
      }
    }
    std::vector<Pixel> pts;
    for (int i = 0; i < 5; ++i) pts.push_back({5 + static_cast<int>(rng() % 25), 5 + static_cast<int>(rng() % 25)});
    const int dx = static_cast<int>(rng() % 6), dy = static_cast<int>(rng() % 6);
    GroundTruthMask moved(40, 40, 0);
    for (int y = 0; y + dy < 40; ++y) {
      for (int x = 0; x + dx < 40; ++x) moved.at(x + dx, y + dy) = m.at(x, y);
    }
    auto moved_pts = pts;
    for (auto& p : moved_pts) p.x += dx, p.y += dy;
    CHECK(metric_sr(pts, m) == metric_sr(moved_pts, moved));
    CHECK(metric_nss(pts, m) == metric_nss(moved_pts, moved));
    if (!mask_contour(m, 122).empty()) CHECK(metric_dtm(pts, m) == doctest::Approx(metric_dtm(moved_pts, moved)).epsilon(1e-12));
  }
}

TEST_CASE("NSS ratio is invariant to positive scaling") {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(0, 1);
  for (int t = 0; t < 50; ++t) {
    std::vector<double> values(12 * 9);
    for (auto& v : values) v = u(rng);
    auto scaled = values;
    const double k = 0.01 + 100 * u(rng);
    for (auto& v : scaled) v *= k;
    const auto pts = testing::random_points(rng, {12, 9}, 5);
    CHECK(detail::nss_ratio(pts, values, 12) == doctest::Approx(detail::nss_ratio(pts, scaled, 12)).epsilon(1e-12));
  }
  CHECK(detail::nss_ratio(std::vector<Pixel>{{0, 0}}, std::vector<double>(4, 0.0), 2) == 0.0);
}

TEST_CASE("planted dataset matches hand-computed values") {
  testing::TempDir dir("eval");
  const auto manifest = load_manifest(testing::write_planted_dataset(dir.path()));
  const auto preds = testing::planted_predictions();
  const auto report = evaluate_dataset(preds, manifest);
  REQUIRE(report.images.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    const auto& want = testing::planted_images()[i];
    const auto& got = report.images[i];
    CAPTURE(want.id);
    CHECK(got.image_id == want.id);
    CHECK(got.sr == doctest::Approx(want.sr).epsilon(1e-12));
    CHECK(got.nss == doctest::Approx(want.nss).epsilon(1e-12));
    CHECK(got.dtm == doctest::Approx(want.dtm).epsilon(1e-12));
  }
  CHECK(report.overall.images == 10);
  CHECK(report.overall.sr_percent == doctest::Approx(46.5));
  CHECK(report.per_category.at("cup").sr_percent == doctest::Approx(190.0 / 3));
  CHECK(report.per_category.at("knife").sr_percent == doctest::Approx(50.0));
  CHECK(report.per_category.at("bowl").sr_percent == doctest::Approx(125.0 / 3));
  CHECK(report.per_category.at("axe").sr_percent == 0.0);
  REQUIRE(report.unseen);
  CHECK(report.unseen->images == 1);
  CHECK(report.seen->sr_percent == doctest::Approx(465.0 / 9));
  CHECK(report.per_category.at("knife").dtm == doctest::Approx((0.125 + 0.0625) / 3));

  const auto j = nlohmann::json::parse(report.to_json());
  CHECK(j["overall"]["sr"].get<double>() == doctest::Approx(46.5));
  CHECK(j["images"].size() == 10);
  CHECK(j["threshold"] == 122);
  CHECK(report.to_csv().find("[overall],10,46.5000") != std::string::npos);
  CHECK(report.to_table().find("46.5") != std::string::npos);
}

TEST_CASE("aggregation is uniform over images") {
  testing::TempDir dir("eval");
  write_mask(square_mask(8, 0, 4), dir / "a.png");
  write_mask(square_mask(8, 0, 4), dir / "b.png");
  const std::map<std::string, ManifestEntry> manifest{{"a", {"a", dir / "a.png", dir / "a.png", "cup", true}},
                                                      {"b", {"b", dir / "b.png", dir / "b.png", "bowl", true}}};
  const std::vector<Prediction> preds{{"a", "m", {{1, 1}}}, {"b", "m", {{7, 7}}}};
  const auto single = evaluate_dataset({preds[0]}, {{"a", manifest.at("a")}});
  CHECK(single.overall.sr_percent == 100.0);
  const auto r = evaluate_dataset(preds, manifest);
  CHECK(r.per_category.at("cup").sr_percent == 100.0);
  CHECK(r.per_category.at("bowl").sr_percent == 0.0);
  CHECK(r.overall.sr_percent == 50.0);
  CHECK_FALSE(r.unseen.has_value());
}

TEST_CASE("missing masks and predictions") {
  testing::TempDir dir("eval");
  const auto manifest = load_manifest(testing::write_planted_dataset(dir.path()));
  auto preds = testing::planted_predictions();
  preds.erase(preds.begin() + 3);
  preds.push_back({"ghost", "planted", {{0, 0}}});
  CHECK_THROWS_WITH_AS(evaluate_dataset(preds, manifest), doctest::Contains("MissingMask"), Error);
  preds.pop_back();
  CHECK_THROWS_WITH_AS(evaluate_dataset(preds, manifest), doctest::Contains("MissingPrediction"), Error);
  preds.push_back({"ghost", "planted", {{0, 0}}});

  EvalOptions opt;
  opt.allow_partial = true;
  const auto r = evaluate_dataset(preds, manifest, opt);
  CHECK(r.images.size() == 9);
  CHECK(r.missing_masks == std::vector<std::string>{"ghost"});
  CHECK(r.missing_predictions == std::vector<std::string>{"p3"});

  auto dup = testing::planted_predictions();
  dup.push_back(dup.front());
  CHECK_THROWS_AS(evaluate_dataset(dup, manifest), Error);
}

TEST_CASE("method filter") {
  testing::TempDir dir("eval");
  const auto manifest = load_manifest(testing::write_planted_dataset(dir.path()));
  auto preds = testing::planted_predictions("a");
  for (auto p : testing::planted_predictions("b")) {
    p.points = {{8, 8}};
    preds.push_back(p);
  }
  EvalOptions opt;
  opt.method = "b";
  CHECK(evaluate_dataset(preds, manifest, opt).overall.sr_percent == doctest::Approx(100.0));
  opt.method = "a";
  CHECK(evaluate_dataset(preds, manifest, opt).overall.sr_percent == doctest::Approx(46.5));
}

TEST_CASE("threshold curve") {
  testing::TempDir dir("eval");
  const auto manifest = load_manifest(testing::write_planted_dataset(dir.path()));
  const auto preds = testing::planted_predictions();
  std::vector<int> thresholds;
  for (int t = 0; t <= 255; ++t) thresholds.push_back(t);
  const auto curve = sr_threshold_curve(preds, manifest, thresholds);
  REQUIRE(curve.size() == 256);
  for (std::size_t i = 0; i < curve.size(); ++i) {
    const int t = curve[i].first;
    double sum = 0;
    for (const auto& img : testing::planted_images()) {
      const auto m = testing::planted_mask(img);
      int hits = 0;
      for (const auto& p : img.points) hits += m.at(p) > t;
      sum += static_cast<double>(hits) / static_cast<double>(img.points.size());
    }
    CHECK(curve[i].second == doctest::Approx(10.0 * sum).epsilon(1e-12));
    if (i) CHECK(curve[i].second <= curve[i - 1].second);
  }
  CHECK(curve[122].second == doctest::Approx(46.5));
  CHECK(curve[255].second == 0.0);
  CHECK_THROWS_AS(sr_threshold_curve(preds, manifest, {256}), Error);
}

TEST_CASE("threshold ranges") {
  CHECK(parse_threshold_range("0:255:8").front() == 0);
  CHECK(parse_threshold_range("0:255:8").back() == 255);
  CHECK(parse_threshold_range("0:16:8") == std::vector<int>{0, 8, 16});
  CHECK(parse_threshold_range("122:122:1") == std::vector<int>{122});
  CHECK_THROWS_AS(parse_threshold_range("0:10"), Error);
  CHECK_THROWS_AS(parse_threshold_range("10:0:1"), Error);
  CHECK_THROWS_AS(parse_threshold_range("0:10:0"), Error);
}

TEST_CASE("manifest and prediction files") {
  testing::TempDir dir("eval");
  const auto path = testing::write_planted_dataset(dir.path());
  const auto manifest = load_manifest(path);
  REQUIRE(manifest.size() == 10);
  CHECK(manifest.at("p7").category == "axe");
  CHECK_FALSE(manifest.at("p7").seen);
  CHECK(std::filesystem::equivalent(manifest.at("p2").mask, dir.path() / "masks" / "p2.png"));
  const auto raw = nlohmann::json::parse(read_text(path));
  CHECK(raw["p2"]["mask"] == "masks/p2.png");

  {
    std::ofstream out(dir / "preds.jsonl");
    for (const auto& p : testing::planted_predictions()) out << prediction_line(p) << "\n";
    out << "\n";
  }
  const auto preds = load_predictions(dir / "preds.jsonl");
  REQUIRE(preds.size() == 10);
  CHECK(preds[1].points == testing::planted_images()[1].points);
  CHECK(preds[1].method == "planted");
  CHECK(prediction_line({"x", "m", {{1, 2}}}) == R"({"image_id":"x","method":"m","points":[[1,2]]})");

  std::ofstream(dir / "six.jsonl") << R"({"image_id":"x","method":"m","points":[[0,0],[0,0],[0,0],[0,0],[0,0],[0,0]]})" << "\n";
  CHECK_THROWS_AS(load_predictions(dir / "six.jsonl"), Error);
  std::ofstream(dir / "bad.jsonl") << "{oops\n";
  CHECK_THROWS_WITH_AS(load_predictions(dir / "bad.jsonl"), doctest::Contains("ParseFailure"), Error);
  std::ofstream(dir / "bad.json") << "[1,2";
  CHECK_THROWS_WITH_AS(load_manifest(dir / "bad.json"), doctest::Contains("ParseFailure"), Error);
}

TEST_CASE("overlay rendering") {
  std::mt19937_64 rng(21);
  const auto img = testing::random_image(rng, 30, 20, 3);
  const auto plain = render_overlay(img, std::vector<Pixel>{{10, 10}});
  CHECK(plain.channels == 3);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 30; ++x) {
      const bool disc = (x - 10) * (x - 10) + (y - 10) * (y - 10) <= 25;
      if (disc) {
        CHECK(plain.at(x, y, 1) == 255);
        CHECK(plain.at(x, y, 0) == 0);
      } else {
        CHECK(plain.at(x, y, 0) == img.at(x, y, 0));
      }
    }
  }

  GroundTruthMask m(30, 20, 0);
  for (int x = 20; x < 30; ++x) m.at(x, 3) = 1;
  const auto blended = render_overlay(img, {}, m);
  for (int y = 0; y < 20; ++y) {
    for (int x = 0; x < 30; ++x) {
      bool same = true;
      for (int c = 0; c < 3; ++c) same = same && blended.at(x, y, c) == img.at(x, y, c);
      if (m.at(x, y) == 0) {
        CHECK(same);
      } else {
        CHECK(blended.at(x, y, 0) == std::lround(0.6 * img.at(x, y, 0) + 0.4 * 255));
        CHECK(blended.at(x, y, 1) == std::lround(0.6 * img.at(x, y, 1)));
      }
    }
  }

  testing::TempDir dir("eval");
  write_image(render_overlay(img, std::vector<Pixel>{{1, 1}}, m), dir / "a.png");
  write_image(render_overlay(img, std::vector<Pixel>{{1, 1}}, m), dir / "b.png");
  CHECK(read_file_bytes(dir / "a.png") == read_file_bytes(dir / "b.png"));
  CHECK_THROWS_AS(render_overlay(img, std::vector<Pixel>{{30, 0}}), Error);
  CHECK(render_overlay(RasterImage(4, 4, 1, 7), {}).at(3, 3, 2) == 7);
}

TEST_CASE("heatmap top points") {
  Tensor h({3, 4}, {0, 5, 1, 5, 9, 0, 0, 2, 5, 0, 0, 0});
  CHECK(heatmap_top_points(h, 3) == std::vector<Pixel>{{0, 1}, {1, 0}, {3, 0}});
  CHECK(heatmap_top_points(h).size() == 5);
  CHECK(heatmap_top_points(Tensor({1, 1, 2}, {1, 2}), 5) == std::vector<Pixel>{{1, 0}, {0, 0}});
  CHECK_THROWS_AS(heatmap_top_points(Tensor({2, 1, 2}, {1, 2, 3, 4})), Error);
}
