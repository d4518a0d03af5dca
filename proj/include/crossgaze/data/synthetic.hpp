#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "crossgaze/data/dataset.hpp"
#include "crossgaze/geometry/gaze.hpp"
#include "crossgaze/tensor/rng.hpp"
#include "crossgaze/tensor/tensor.hpp"

namespace crossgaze::data {

// Generator geometry, in pixels of a 64x64 image.
inline constexpr std::size_t kRenderSize = 64;
inline constexpr double kYawMaxDegrees = 100.0;
inline constexpr double kPitchMaxDegrees = 50.0;
inline constexpr double kIrisShiftPixels = 14.0;  // iris offset at the yaw/pitch extremes
inline constexpr double kEyeCenter = 32.0;
inline constexpr double kIrisRadius = 9.0;
inline constexpr double kPupilRadius = 4.0;
inline constexpr double kJitterSigma = 0.5;
inline constexpr double kPixelNoiseSigma = 0.02;
inline constexpr double kOcclusionProbability = 0.15;
/// Scale of each eye inside the face image, and where the eyes sit.
inline constexpr double kFaceEyeScale = 0.25;
inline constexpr double kFaceLeftEyeX = 20.0;
inline constexpr double kFaceRightEyeX = 44.0;
inline constexpr double kFaceEyeY = 26.0;

struct RenderOptions {
  /// Iris jitter and additive pixel noise; off gives exact geometry.
  bool noise = true;
  double occlusion_probability = kOcclusionProbability;
};

/// Images in [0,1], each [3,64,64].
struct RawSample {
  Tensor<float> face;
  Tensor<float> left_eye;
  Tensor<float> right_eye;
  geometry::GazeVector gaze;
  bool face_occluded = false;
};

/// Throws std::invalid_argument when |yaw| > 100 deg or |pitch| > 50 deg.
RawSample render_sample(geometry::SphericalGaze gaze, Rng& rng, const RenderOptions& options = {});

/// Generator stream for record `index` of a split; independent of generation order.
std::uint64_t sample_seed(std::uint64_t seed, Split split, std::size_t index);

/// Writes `count` samples and then manifest.txt under `out_dir`. On failure,
/// files created by this call are removed and the error is rethrown.
DatasetManifest generate_synthetic_dataset(const std::filesystem::path& out_dir, std::size_t count,
                                           std::uint64_t seed, Split split, const RenderOptions& options = {});

}  // namespace crossgaze::data
