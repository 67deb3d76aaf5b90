#include "afft/grasp.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

#include <nlohmann/json.hpp>

#include "afft/error.hpp"

namespace afft {

void validate_rotation(const Eigen::Matrix3d& r) {
  if (!r.allFinite()) fail(ErrorCode::NonOrthonormalRotation, "rotation has non-finite entries");
  const double ortho = (r.transpose() * r - Eigen::Matrix3d::Identity()).cwiseAbs().maxCoeff();
  const double det = r.determinant();
  if (ortho > kOrthonormalTolerance || std::abs(det - 1.0) > kOrthonormalTolerance) {
    fail(ErrorCode::NonOrthonormalRotation,
         "max |R^T R - I| = " + std::to_string(ortho) + ", det = " + std::to_string(det));
  }
}

ContactPoint3D deproject_pixel(double u, double v, double depth_raw, const CameraIntrinsics& intr) {
  intr.validate();
  if (!(depth_raw > 0)) fail(ErrorCode::ZeroDepth, "depth at (" + std::to_string(u) + ", " + std::to_string(v) + ")");
  const double z = depth_raw * intr.depth_scale;
  return {Eigen::Vector3d((u - intr.cx) * z / intr.fx, (v - intr.cy) * z / intr.fy, z)};
}

Eigen::Vector2d project_point(const Eigen::Vector3d& xyz, const CameraIntrinsics& intr) {
  if (!(xyz.z() > 0)) fail(ErrorCode::ZeroDepth, "point behind or on the camera plane");
  return {intr.fx * xyz.x() / xyz.z() + intr.cx, intr.fy * xyz.y() / xyz.z() + intr.cy};
}

double sample_depth(const DepthImage& depth, int u, int v) {
  if (u < 0 || v < 0 || u >= depth.width || v >= depth.height) fail(ErrorCode::OutOfBounds, "contact pixel outside depth image");
  std::vector<std::uint16_t> vals;
  for (int dy = -2; dy <= 2; ++dy) {
    for (int dx = -2; dx <= 2; ++dx) {
      const int x = u + dx, y = v + dy;
      if (x < 0 || y < 0 || x >= depth.width || y >= depth.height) continue;
      if (const auto d = depth.at(x, y); d != 0) vals.push_back(d);
    }
  }
  if (vals.empty()) fail(ErrorCode::ZeroDepth, "no valid depth in the 5x5 window");
  std::sort(vals.begin(), vals.end());
  const std::size_t n = vals.size();
  return n % 2 == 1 ? vals[n / 2] : 0.5 * (static_cast<double>(vals[n / 2 - 1]) + vals[n / 2]);
}

std::size_t select_grasp_index(const std::vector<GraspCandidate>& candidates, const ContactPoint3D& p) {
  if (candidates.empty()) fail(ErrorCode::EmptyCandidateSet, "no grasp candidates");
  constexpr double kNoScore = -std::numeric_limits<double>::infinity();
  std::size_t best = 0;
  double best_d = (candidates[0].translation - p.xyz).norm();
  for (std::size_t i = 1; i < candidates.size(); ++i) {
    const double d = (candidates[i].translation - p.xyz).norm();
    if (d < best_d || (d == best_d && candidates[i].score.value_or(kNoScore) > candidates[best].score.value_or(kNoScore))) {
      best = i;
      best_d = d;
    }
  }
  return best;
}

const GraspCandidate& select_grasp(const std::vector<GraspCandidate>& candidates, const ContactPoint3D& p) {
  return candidates[select_grasp_index(candidates, p)];
}

std::size_t select_grasp_within(const std::vector<GraspCandidate>& candidates, const ContactPoint3D& p,
                                double max_distance) {
  const std::size_t i = select_grasp_index(candidates, p);
  const double d = (candidates[i].translation - p.xyz).norm();
  if (d > max_distance) {
    fail(ErrorCode::NoGraspInRange,
         "nearest grasp is " + std::to_string(d) + " m away (limit " + std::to_string(max_distance) + " m)");
  }
  return i;
}

std::vector<GraspCandidate> parse_grasp_candidates(const std::string& json_text) {
  std::vector<GraspCandidate> out;
  try {
    const auto j = nlohmann::json::parse(json_text);
    for (const auto& g : j.at("grasps")) {
      GraspCandidate c;
      const auto& r = g.at("R");
      if (r.size() != 3) throw std::invalid_argument("R must be 3x3");
      for (int i = 0; i < 3; ++i) {
        if (r[static_cast<std::size_t>(i)].size() != 3) throw std::invalid_argument("R must be 3x3");
        for (int k = 0; k < 3; ++k) c.rotation(i, k) = r[static_cast<std::size_t>(i)][static_cast<std::size_t>(k)].get<double>();
      }
      const auto& t = g.at("t");
      if (t.size() != 3) throw std::invalid_argument("t must have 3 entries");
      c.translation = {t[0].get<double>(), t[1].get<double>(), t[2].get<double>()};
      c.width = g.at("width").get<double>();
      if (g.contains("score") && !g["score"].is_null()) c.score = g["score"].get<double>();
      if (!(c.width >= 0) || !c.translation.allFinite()) throw std::invalid_argument("width must be >= 0, t finite");
      out.push_back(c);
    }
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::ParseFailure, e.what());
  } catch (const std::invalid_argument& e) {
    fail(ErrorCode::ParseFailure, e.what());
  }
  for (const auto& c : out) validate_rotation(c.rotation);
  return out;
}

std::vector<GraspCandidate> load_grasp_candidates(const std::filesystem::path& path) {
  return parse_grasp_candidates(read_text(path));
}

}  // namespace afft
