#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <map>
#include <nlohmann/json.hpp>

#include <Eigen/Geometry>

#include "afft/error.hpp"
#include "afft/grasp.hpp"
#include "afft/pipeline.hpp"
#include "afft/random.hpp"

namespace fs = std::filesystem;

namespace afft {

namespace {

constexpr int kFrameW = 160;
constexpr int kFrameH = 120;

using Rgb = std::array<std::uint8_t, 3>;

int rand_between(Rng& rng, int lo, int hi) { return lo + static_cast<int>(uniform_index(rng, static_cast<std::uint64_t>(hi - lo + 1))); }

std::uint8_t clamp_u8(double v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L)); }

void put(RasterImage& img, int x, int y, const Rgb& c) {
  if (x < 0 || y < 0 || x >= img.width || y >= img.height) return;
  for (int k = 0; k < 3; ++k) img.at(x, y, k) = c[static_cast<std::size_t>(k)];
}

/// Colours with red never above green stay clear of the skin rule.
Rgb non_skin_colour(Rng& rng, int lo, int hi) {
  const int g = rand_between(rng, lo, hi);
  const int r = rand_between(rng, lo / 2, g);
  const int b = rand_between(rng, lo, hi);
  return {static_cast<std::uint8_t>(r), static_cast<std::uint8_t>(g), static_cast<std::uint8_t>(b)};
}

RasterImage textured_world(Rng& rng, int w, int h) {
  RasterImage world(w, h, 3);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) put(world, x, y, {70, 84, 96});
  }
  for (int n = 0; n < 160; ++n) {
    const int rw = rand_between(rng, 3, 14), rh = rand_between(rng, 3, 14);
    const int rx = rand_between(rng, -4, w - 1), ry = rand_between(rng, -4, h - 1);
    const Rgb c = non_skin_colour(rng, 20, 150);
    for (int y = ry; y < ry + rh; ++y) {
      for (int x = rx; x < rx + rw; ++x) put(world, x, y, c);
    }
  }
  return world;
}

enum class HandleSide { Right, Bottom };

struct ObjectModel {
  int w = 0, h = 0;
  HandleSide side = HandleSide::Right;
  int handle_offset = 0;  // handle centre along the side
  Rgb body{}, handle{}, marker{};
  int marker_x = 0, marker_y = 0;
  int stripe_period = 14;

  Pixel hand_anchor() const {  // hand ellipse centre at contact, object-local
    return side == HandleSide::Right ? Pixel{w - 2, handle_offset} : Pixel{handle_offset, h - 2};
  }
  std::pair<int, int> hand_radii() const { return side == HandleSide::Right ? std::pair{8, 6} : std::pair{6, 8}; }
};

ObjectModel make_object(Rng& rng, int index) {
  ObjectModel m;
  m.w = rand_between(rng, 40, 48);
  m.h = rand_between(rng, 32, 40);
  m.side = index % 2 == 0 ? HandleSide::Right : HandleSide::Bottom;
  m.handle_offset = (m.side == HandleSide::Right ? m.h : m.w) / 2 + rand_between(rng, -4, 4);
  m.body = non_skin_colour(rng, 90, 230);
  m.handle = non_skin_colour(rng, 10, 80);
  m.marker = {20, static_cast<std::uint8_t>(rand_between(rng, 150, 250)), static_cast<std::uint8_t>(rand_between(rng, 0, 255))};
  m.marker_x = m.w / 4 + rand_between(rng, 0, 4);
  m.marker_y = m.h / 3 + rand_between(rng, 0, 3);
  m.stripe_period = rand_between(rng, 10, 16);
  return m;
}

void draw_object(RasterImage& img, const ObjectModel& m, int ox, int oy) {
  for (int v = 0; v < m.h; ++v) {
    for (int u = 0; u < m.w; ++u) {
      bool body = false, handle = false;
      if (m.side == HandleSide::Right) {
        body = u >= 1 && u < m.w - 10 && v >= 2 && v < m.h - 2;
        handle = u >= m.w - 10 && std::abs(v - m.handle_offset) <= 4;
      } else {
        body = u >= 2 && u < m.w - 2 && v >= 1 && v < m.h - 10;
        handle = v >= m.h - 10 && std::abs(u - m.handle_offset) <= 4;
      }
      Rgb c;
      if (handle) {
        c = m.handle;
      } else if (body) {
        const double shade = 0.65 + 0.35 * u / m.w;
        const bool stripe = (u + 2 * v) % m.stripe_period < 3;
        for (std::size_t k = 0; k < 3; ++k) c[k] = clamp_u8(m.body[k] * shade * (stripe ? 0.55 : 1.0));
        const int dx = u - m.marker_x, dy = v - m.marker_y;
        if (dx * dx + dy * dy <= 9) c = m.marker;
      } else {
        continue;
      }
      put(img, ox + u, oy + v, c);
    }
  }
}

std::vector<Pixel> ellipse_pixels(Pixel c, int rx, int ry) {
  std::vector<Pixel> out;
  for (int dy = -ry; dy <= ry; ++dy) {
    for (int dx = -rx; dx <= rx; ++dx) {
      if (double(dx * dx) / (rx * rx) + double(dy * dy) / (ry * ry) <= 1.0) out.push_back({c.x + dx, c.y + dy});
    }
  }
  return out;
}

/// Centroid of the hand pixels that fall inside a w x h object box, object-local, rounded.
Pixel contact_truth(const ObjectModel& m) {
  const auto [rx, ry] = m.hand_radii();
  double sx = 0, sy = 0;
  int n = 0;
  for (const Pixel& p : ellipse_pixels(m.hand_anchor(), rx, ry)) {
    if (p.x >= 0 && p.y >= 0 && p.x < m.w && p.y < m.h) {
      sx += p.x;
      sy += p.y;
      ++n;
    }
  }
  return {round_pixel(sx / n), round_pixel(sy / n)};
}

GroundTruthMask contact_mask(int w, int h, Pixel c) {
  GroundTruthMask m(w, h, 0);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double r = std::hypot(x - c.x, y - c.y);
      m.at(x, y) = r <= 10.0 ? 255 : clamp_u8(255.0 * std::max(0.0, 20.0 - r) / 10.0);
    }
  }
  return m;
}

std::string frame_name(int t) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%06d.png", t);
  return buf;
}

nlohmann::json rect_json(const std::optional<Rect>& r) {
  if (!r) return nullptr;
  return nlohmann::json::array({r->x, r->y, r->w, r->h});
}

struct VideoPlan {
  std::string video_id;
  std::string category;
  bool contact = true;
  bool featureless = false;
};

/// Renders one interaction video; returns the ground truth of the object it shows.
FixtureObject write_video(const fs::path& dir, const VideoPlan& plan, Rng& rng, int index, int frames) {
  const int world_w = kFrameW + 2 * (frames - 1) + 8;
  const int world_h = kFrameH + (frames - 1) + 8;
  RasterImage world = plan.featureless ? RasterImage(world_w, world_h, 3, 128) : textured_world(rng, world_w, world_h);
  const ObjectModel obj = make_object(rng, index);
  const int wx = 70 + rand_between(rng, 0, 4), wy = 40 + rand_between(rng, 0, 4);
  if (!plan.featureless) draw_object(world, obj, wx, wy);

  const int j = frames * 7 / 12;
  const auto [rx, ry] = obj.hand_radii();
  const Pixel approach = obj.side == HandleSide::Right ? Pixel{36, 44} : Pixel{36, 34};
  auto object_at = [&](int t) { return Rect{wx - 2 * t, wy - t, obj.w, obj.h}; };
  auto hand_at = [&](int t) {
    const Rect ob = object_at(std::max(t, j));
    Pixel c{ob.x + obj.hand_anchor().x, ob.y + obj.hand_anchor().y};
    if (t < j) {
      const double a = double(j - t) / j;
      c.x += round_pixel(approach.x * a);
      c.y += round_pixel(approach.y * a);
    }
    return c;
  };
  const Rect frame_rect{0, 0, kFrameW, kFrameH};
  auto hand_box = [&](int t) {
    const Pixel c = hand_at(t);
    return intersect(Rect{c.x - rx, c.y - ry, 2 * rx + 1, 2 * ry + 1}, frame_rect);
  };

  int clear = -1;
  for (int t = j - 3; t >= 0; --t) {
    if (intersect(hand_box(t), object_at(t)).empty()) {
      clear = t;
      break;
    }
  }
  if (clear < 0) fail(ErrorCode::InvalidInput, "fixture layout leaves no unobstructed frame");

  fs::create_directories(dir / "frames");
  fs::create_directories(dir / "skin");
  std::string detections;
  for (int t = 0; t < frames; ++t) {
    RasterImage frame(kFrameW, kFrameH, 3);
    for (int y = 0; y < kFrameH; ++y) {
      for (int x = 0; x < kFrameW; ++x) {
        for (int k = 0; k < 3; ++k) frame.at(x, y, k) = world.at(x + 2 * t, y + t, k);
      }
    }
    GroundTruthMask skin(kFrameW, kFrameH, 0);
    for (const Pixel& p : ellipse_pixels(hand_at(t), rx, ry)) {
      if (!frame_rect.contains(p)) continue;
      skin.at(p.x, p.y) = 255;
      if (!plan.featureless) {
        const double s = 0.92 + 0.08 * std::cos(0.4 * (p.x + p.y));
        put(frame, p.x, p.y, {clamp_u8(224 * s), clamp_u8(172 * s), clamp_u8(140 * s)});
      }
    }
    const bool obstructed = !intersect(hand_box(t), object_at(t)).empty();
    if (!plan.featureless && !obstructed && t != clear) frame = box_blur(box_blur(frame));
    write_image(frame, dir / "frames" / frame_name(t));
    write_mask(skin, dir / "skin" / frame_name(t));

    nlohmann::json det{{"frame", t},
                       {"hand_bbox", rect_json(hand_box(t))},
                       {"object_bbox", rect_json(object_at(t))},
                       {"contact", plan.contact && t >= j}};
    detections += det.dump() + "\n";
  }
  write_text_atomic(dir / "detections.jsonl", detections);
  write_text_atomic(dir / "meta.json", nlohmann::json{{"video_id", plan.video_id}, {"category", plan.category}}.dump() + "\n");

  FixtureObject truth;
  truth.video_id = plan.video_id;
  truth.category = plan.category;
  truth.contact = contact_truth(obj);
  truth.clear_frame = clear;
  truth.contact_frame = j;
  return truth;
}

/// The unoccluded object exactly as it appears in an extracted crop.
RasterImage object_view(Rng& rng, int index, int frames, Pixel* contact) {
  const int world_w = kFrameW + 2 * (frames - 1) + 8;
  const int world_h = kFrameH + (frames - 1) + 8;
  RasterImage world = textured_world(rng, world_w, world_h);
  const ObjectModel obj = make_object(rng, index);
  const int wx = 70 + rand_between(rng, 0, 4), wy = 40 + rand_between(rng, 0, 4);
  draw_object(world, obj, wx, wy);
  *contact = contact_truth(obj);
  return crop_image(world, Rect{wx, wy, obj.w, obj.h});
}

void write_grasp_scene(const fs::path& dir, Rng& rng) {
  fs::create_directories(dir);
  CameraIntrinsics intr{200.0, 200.0, 80.0, 60.0, 0.001};
  write_text_atomic(dir / "intrinsics.json",
                    nlohmann::json{{"fx", intr.fx}, {"fy", intr.fy}, {"cx", intr.cx}, {"cy", intr.cy},
                                   {"depth_scale", intr.depth_scale}}
                            .dump(2) +
                        "\n");
  DepthImage depth;
  depth.width = kFrameW;
  depth.height = kFrameH;
  depth.values.assign(static_cast<std::size_t>(kFrameW) * kFrameH, 650);
  for (int y = 40; y < 90; ++y) {
    for (int x = 60; x < 120; ++x) depth.values[static_cast<std::size_t>(y) * kFrameW + x] = 560;
  }
  for (int n = 0; n < 60; ++n) {
    depth.values[uniform_index(rng, depth.values.size())] = 0;  // sensor dropouts
  }
  write_depth(depth, dir / "depth.png");

  const Pixel contact{96, 70};
  write_text_atomic(dir / "contact.json", nlohmann::json{{"pixel", {contact.x, contact.y}}}.dump() + "\n");

  nlohmann::json grasps = nlohmann::json::array();
  auto add = [&](const Eigen::Vector3d& t) {
    Eigen::Vector3d axis(uniform_unit(rng) - 0.5, uniform_unit(rng) - 0.5, uniform_unit(rng) - 0.5);
    if (axis.norm() < 1e-6) axis = Eigen::Vector3d::UnitZ();
    const Eigen::Matrix3d r = Eigen::AngleAxisd(uniform_unit(rng) * 3.0, axis.normalized()).toRotationMatrix();
    nlohmann::json rj = nlohmann::json::array();
    for (int i = 0; i < 3; ++i) rj.push_back({r(i, 0), r(i, 1), r(i, 2)});
    grasps.push_back({{"R", rj},
                      {"t", {t.x(), t.y(), t.z()}},
                      {"width", 0.02 + 0.06 * uniform_unit(rng)},
                      {"score", uniform_unit(rng)}});
  };
  for (int n = 0; n < 29; ++n) {
    add({(uniform_unit(rng) - 0.5) * 0.4, (uniform_unit(rng) - 0.5) * 0.3, 0.45 + 0.25 * uniform_unit(rng)});
  }
  const Eigen::Vector3d near = deproject_pixel(contact.x, contact.y, 560, intr).xyz + Eigen::Vector3d(0.004, -0.003, 0.002);
  add(near);
  write_text_atomic(dir / "candidates.json", nlohmann::json{{"grasps", grasps}}.dump(1) + "\n");
}

}  // namespace

RasterImage box_blur(const RasterImage& img) {
  RasterImage out(img.width, img.height, img.channels);
  for (int y = 0; y < img.height; ++y) {
    for (int x = 0; x < img.width; ++x) {
      for (int c = 0; c < img.channels; ++c) {
        int sum = 0;
        for (int dy = -1; dy <= 1; ++dy) {
          for (int dx = -1; dx <= 1; ++dx) {
            sum += img.at(std::clamp(x + dx, 0, img.width - 1), std::clamp(y + dy, 0, img.height - 1), c);
          }
        }
        out.at(x, y, c) = static_cast<std::uint8_t>((sum + 4) / 9);
      }
    }
  }
  return out;
}

FixtureCorpus generate_fixtures(const fs::path& out, const FixtureOptions& opt) {
  if (opt.frames < 12) fail(ErrorCode::InvalidInput, "fixtures need at least 12 frames");
  FixtureCorpus corpus;
  corpus.root = out;
  corpus.videos = out / "videos";
  corpus.faulty_videos = out / "videos_faulty";
  corpus.grasp = out / "grasp";
  const fs::path eval = out / "eval";
  fs::create_directories(eval / "images");
  fs::create_directories(eval / "masks");

  std::map<std::string, ManifestEntry> identical, transformed, all;
  int index = 0;
  for (const auto& category : opt.categories) {
    for (int n = 0; n < opt.objects_per_category; ++n, ++index) {
      char id[64];
      std::snprintf(id, sizeof id, "%s_%02d", category.c_str(), n);
      // Each object's video and its evaluation view share one seed, so both show the same scene.
      const std::uint64_t seed = opt.seed * 1000003ULL + static_cast<std::uint64_t>(index);
      Rng video_rng(seed);
      const FixtureObject truth = write_video(corpus.videos / id, {id, category, true, false}, video_rng, index, opt.frames);
      corpus.objects.push_back(truth);

      Rng view_rng(seed);
      Pixel contact;
      const RasterImage view = object_view(view_rng, index, opt.frames, &contact);
      const GroundTruthMask mask = contact_mask(view.width, view.height, contact);

      const std::string same = std::string(id) + "_same";
      write_image(view, eval / "images" / (same + ".png"));
      write_mask(mask, eval / "masks" / (same + ".png"));
      identical[same] = all[same] = {same, (eval / "images") / (same + ".png"), (eval / "masks") / (same + ".png"), category, true};

      const Dihedral d = kAllTransforms[static_cast<std::size_t>(1 + index % 7)];
      const std::string turned = std::string(id) + "_" + std::string(to_string(d));
      write_image(transform_image(view, d), eval / "images" / (turned + ".png"));
      write_mask(transform_mask(mask, d), eval / "masks" / (turned + ".png"));
      transformed[turned] = all[turned] = {turned, (eval / "images") / (turned + ".png"),
                                           (eval / "masks") / (turned + ".png"), category, true};
    }
  }

  // Objects from categories the memory never saw.
  for (const std::string category : {"axe", "hammer"}) {
    Rng rng(opt.seed * 7919ULL + std::hash<std::string>{}(category) % 100000ULL);
    Pixel contact;
    const RasterImage view = object_view(rng, index++, opt.frames, &contact);
    const std::string id = category + "_00_same";
    write_image(view, eval / "images" / (id + ".png"));
    write_mask(contact_mask(view.width, view.height, contact), eval / "masks" / (id + ".png"));
    all[id] = {id, (eval / "images") / (id + ".png"), (eval / "masks") / (id + ".png"), category, false};
  }

  corpus.manifest_identical = eval / "manifest_identical.json";
  corpus.manifest_transformed = eval / "manifest_transformed.json";
  corpus.manifest_all = eval / "manifest.json";
  write_manifest(identical, corpus.manifest_identical);
  write_manifest(transformed, corpus.manifest_transformed);
  write_manifest(all, corpus.manifest_all);

  Rng faulty_rng(opt.seed + 17);
  write_video(corpus.faulty_videos / "nocontact", {"nocontact", "cup", false, false}, faulty_rng, 0, opt.frames);
  write_video(corpus.faulty_videos / "featureless", {"featureless", "cup", true, true}, faulty_rng, 1, opt.frames);

  Rng grasp_rng(opt.seed + 29);
  write_grasp_scene(corpus.grasp, grasp_rng);
  return corpus;
}

}  // namespace afft
