#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace crossgaze::geometry {

// Camera frame: y up, x toward the subject's left, and (0,0,-1) is the
// direction pointing straight into the camera.

struct GazeVector {
  double x = 0.0;
  double y = 0.0;
  double z = -1.0;

  double norm() const;
  GazeVector normalized() const;
};

/// yaw is positive toward the subject's left, pitch positive upward (radians).
struct SphericalGaze {
  double yaw = 0.0;
  double pitch = 0.0;
};

GazeVector spherical_to_vector(SphericalGaze s);
/// Inverse of spherical_to_vector. Expects a unit vector; at the poles yaw is 0.
SphericalGaze vector_to_spherical(const GazeVector& g);

/// Angle between the two directions in degrees, in [0, 180]. Inputs need not
/// be unit length. Throws std::invalid_argument for a zero-length input.
double angular_error(const GazeVector& pred, const GazeVector& truth);

enum class Subset { all, front180, front_facing };

std::string_view subset_name(Subset s);
/// Accepts "all", "front180", "front_facing"; throws std::invalid_argument otherwise.
Subset parse_subset(std::string_view name);

/// Whether the gaze lies strictly within the subset's cone around (0,0,-1).
bool in_subset(const GazeVector& gaze, Subset subset);

struct SubsetError {
  double mean_degrees = 0.0;
  std::size_t count = 0;
};

/// Mean angular error over the samples whose ground truth falls in `subset`.
/// Throws std::invalid_argument on length mismatch and DataError when no
/// sample is included.
SubsetError mean_angular_error(std::span<const GazeVector> preds, std::span<const GazeVector> truths,
                               Subset subset);

}  // namespace crossgaze::geometry
