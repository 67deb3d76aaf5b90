#pragma once

// Lifts a 2D contact pixel to 3D and picks the grasp candidate whose
// translation is nearest to it.

#include <Eigen/Core>

#include <filesystem>
#include <optional>
#include <vector>

#include "afft/tensor_io.hpp"

namespace afft {

struct GraspCandidate {
  Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();
  double width = 0.0;
  std::optional<double> score;
};

struct ContactPoint3D {
  Eigen::Vector3d xyz = Eigen::Vector3d::Zero();
};

inline constexpr double kOrthonormalTolerance = 1e-4;

/// Throws NonOrthonormalRotation unless R^T R ~ I and det R ~ +1 (tolerance 1e-4).
void validate_rotation(const Eigen::Matrix3d& r);

ContactPoint3D deproject_pixel(double u, double v, double depth_raw, const CameraIntrinsics& intr);

/// Inverse of deproject_pixel: (u, v) of a camera-frame point.
Eigen::Vector2d project_point(const Eigen::Vector3d& xyz, const CameraIntrinsics& intr);

/// Median of the non-zero raw depths in the 5x5 window around (u, v); ZeroDepth if none.
double sample_depth(const DepthImage& depth, int u, int v);

/// Minimizes |t - p|; ties prefer the higher score (absent scores rank lowest), then the earlier index.
std::size_t select_grasp_index(const std::vector<GraspCandidate>& candidates, const ContactPoint3D& p);
const GraspCandidate& select_grasp(const std::vector<GraspCandidate>& candidates, const ContactPoint3D& p);

/// select_grasp with a distance cutoff; NoGraspInRange when the nearest candidate is farther than max_distance.
std::size_t select_grasp_within(const std::vector<GraspCandidate>& candidates, const ContactPoint3D& p,
                                double max_distance);

/// {"grasps":[{"R":[[..],[..],[..]],"t":[x,y,z],"width":w,"score":s}]}
std::vector<GraspCandidate> load_grasp_candidates(const std::filesystem::path& path);
std::vector<GraspCandidate> parse_grasp_candidates(const std::string& json_text);

}  // namespace afft
