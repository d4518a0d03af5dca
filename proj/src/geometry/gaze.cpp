#include "crossgaze/geometry/gaze.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>
#include <tuple>

#include "crossgaze/tensor/errors.hpp"

namespace crossgaze::geometry {

namespace {
constexpr double kDegreesPerRadian = 180.0 / std::numbers::pi;
constexpr GazeVector kCameraAxis{0.0, 0.0, -1.0};
}  // namespace

double GazeVector::norm() const { return std::sqrt(x * x + y * y + z * z); }

GazeVector GazeVector::normalized() const {
  const double n = norm();
  if (!(n > 0.0)) throw std::invalid_argument("cannot normalize a zero-length gaze vector");
  return {x / n, y / n, z / n};
}

GazeVector spherical_to_vector(SphericalGaze s) {
  const double c = std::cos(s.pitch);
  return {c * std::sin(s.yaw), std::sin(s.pitch), -c * std::cos(s.yaw)};
}

SphericalGaze vector_to_spherical(const GazeVector& g) {
  const double horizontal = std::hypot(g.x, g.z);
  const double yaw = horizontal == 0.0 ? 0.0 : std::atan2(g.x, -g.z);
  return {yaw, std::atan2(g.y, horizontal)};
}

double angular_error(const GazeVector& first, const GazeVector& second) {
  if (!(first.norm() > 0.0) || !(second.norm() > 0.0)) {
    throw std::invalid_argument("angular_error: zero-length gaze vector");
  }
  // Fixed operand order keeps the result bitwise symmetric even when the
  // compiler contracts products into fused multiply-adds.
  const bool swap = std::tie(second.x, second.y, second.z) < std::tie(first.x, first.y, first.z);
  const GazeVector& pred = swap ? second : first;
  const GazeVector& truth = swap ? first : second;
  // atan2(|a x b|, a.b) is the arccos of the normalized dot product, without
  // its loss of precision near 0 and 180 degrees. Always within [0, pi].
  const double cx = pred.y * truth.z - pred.z * truth.y;
  const double cy = pred.z * truth.x - pred.x * truth.z;
  const double cz = pred.x * truth.y - pred.y * truth.x;
  const double dot = pred.x * truth.x + pred.y * truth.y + pred.z * truth.z;
  return std::atan2(std::sqrt(cx * cx + cy * cy + cz * cz), dot) * kDegreesPerRadian;
}

std::string_view subset_name(Subset s) {
  switch (s) {
    case Subset::all:
      return "all";
    case Subset::front180:
      return "front180";
    case Subset::front_facing:
      return "front_facing";
  }
  return "?";
}

Subset parse_subset(std::string_view name) {
  for (Subset s : {Subset::all, Subset::front180, Subset::front_facing}) {
    if (subset_name(s) == name) return s;
  }
  throw std::invalid_argument("unknown subset '" + std::string(name) + "' (expected all, front180, front_facing)");
}

bool in_subset(const GazeVector& gaze, Subset subset) {
  switch (subset) {
    case Subset::all:
      return true;
    case Subset::front180:
      return angular_error(gaze, kCameraAxis) < 90.0;
    case Subset::front_facing:
      return angular_error(gaze, kCameraAxis) < 20.0;
  }
  return false;
}

SubsetError mean_angular_error(std::span<const GazeVector> preds, std::span<const GazeVector> truths,
                               Subset subset) {
  if (preds.size() != truths.size()) {
    throw std::invalid_argument("mean_angular_error: " + std::to_string(preds.size()) + " predictions vs " +
                                std::to_string(truths.size()) + " labels");
  }
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (!in_subset(truths[i], subset)) continue;
    total += angular_error(preds[i], truths[i]);
    ++count;
  }
  if (count == 0) {
    throw DataError("no samples in subset " + std::string(subset_name(subset)) + " (count 0)");
  }
  return {total / static_cast<double>(count), count};
}

}  // namespace crossgaze::geometry
