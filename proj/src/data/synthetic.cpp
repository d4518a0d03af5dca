#include "crossgaze/data/synthetic.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <stdexcept>
#include <system_error>

#include "crossgaze/tensor/errors.hpp"
#include "crossgaze/tensor/gzt.hpp"

namespace crossgaze::data {

namespace {

using Color = std::array<double, 3>;

constexpr Color kSkin{0.82, 0.64, 0.52};
constexpr Color kSclera{0.93, 0.92, 0.90};
constexpr Color kIris{0.30, 0.22, 0.15};
constexpr Color kPupil{0.05, 0.05, 0.05};
constexpr Color kBackground{0.35, 0.38, 0.42};
constexpr Color kOccluder{0.50, 0.50, 0.50};
constexpr double kScleraRx = 26.0;
constexpr double kScleraRy = 18.0;
constexpr int kSupersample = 4;
constexpr double kDegree = std::numbers::pi / 180.0;

// Iris center in eye-crop pixel coordinates.
struct EyeState {
  double iris_x;
  double iris_y;
};

EyeState eye_state(geometry::SphericalGaze gaze, double jitter_x, double jitter_y) {
  const double yaw = gaze.yaw / (kYawMaxDegrees * kDegree);
  const double pitch = gaze.pitch / (kPitchMaxDegrees * kDegree);
  return {kEyeCenter + kIrisShiftPixels * yaw + jitter_x, kEyeCenter - kIrisShiftPixels * pitch + jitter_y};
}

// Color of the eye at crop coordinates (u, v); false where the eye shows skin.
bool eye_color(double u, double v, const EyeState& eye, Color& out) {
  const double du = u - eye.iris_x, dv = v - eye.iris_y;
  const double r2 = du * du + dv * dv;
  if (r2 <= kPupilRadius * kPupilRadius) {
    out = kPupil;
    return true;
  }
  if (r2 <= kIrisRadius * kIrisRadius) {
    out = kIris;
    return true;
  }
  const double eu = (u - kEyeCenter) / kScleraRx, ev = (v - kEyeCenter) / kScleraRy;
  if (eu * eu + ev * ev <= 1.0) {
    out = kSclera;
    return true;
  }
  return false;
}

template <typename ColorAt>
Tensor<float> render_image(ColorAt&& color_at) {
  const std::size_t n = kRenderSize;
  Tensor<float> image({3, n, n});
  auto data = image.data();
  const double step = 1.0 / kSupersample;
  for (std::size_t y = 0; y < n; ++y) {
    for (std::size_t x = 0; x < n; ++x) {
      Color acc{0.0, 0.0, 0.0};
      for (int sy = 0; sy < kSupersample; ++sy) {
        for (int sx = 0; sx < kSupersample; ++sx) {
          const Color c = color_at(double(x) + (sx + 0.5) * step, double(y) + (sy + 0.5) * step);
          for (int ch = 0; ch < 3; ++ch) acc[ch] += c[ch];
        }
      }
      for (std::size_t ch = 0; ch < 3; ++ch) {
        data[(ch * n + y) * n + x] = static_cast<float>(acc[ch] / (kSupersample * kSupersample));
      }
    }
  }
  return image;
}

bool inside_triangle(double px, double py, double ax, double ay, double bx, double by, double cx, double cy) {
  auto side = [&](double x0, double y0, double x1, double y1) { return (x1 - x0) * (py - y0) - (y1 - y0) * (px - x0); };
  const double d1 = side(ax, ay, bx, by), d2 = side(bx, by, cx, cy), d3 = side(cx, cy, ax, ay);
  const bool neg = d1 < 0 || d2 < 0 || d3 < 0, pos = d1 > 0 || d2 > 0 || d3 > 0;
  return !(neg && pos);
}

void add_noise(Tensor<float>& image, Rng& rng) {
  for (auto& v : image.data()) {
    const double noisy = v + kPixelNoiseSigma * rng.normal();
    v = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
  }
}

}  // namespace

RawSample render_sample(geometry::SphericalGaze gaze, Rng& rng, const RenderOptions& options) {
  if (!(std::abs(gaze.yaw) <= kYawMaxDegrees * kDegree) || !(std::abs(gaze.pitch) <= kPitchMaxDegrees * kDegree)) {
    throw std::invalid_argument("gaze (yaw " + std::to_string(gaze.yaw / kDegree) + ", pitch " +
                                std::to_string(gaze.pitch / kDegree) + " deg) outside the generator range");
  }
  double jitter[4] = {0.0, 0.0, 0.0, 0.0};
  if (options.noise) {
    for (double& j : jitter) j = kJitterSigma * rng.normal();
  }
  const EyeState left = eye_state(gaze, jitter[0], jitter[1]);
  const EyeState right = eye_state(gaze, jitter[2], jitter[3]);
  const bool occluded = rng.uniform() < options.occlusion_probability;
  const bool occlude_left = rng.uniform() < 0.5;

  RawSample out;
  out.gaze = geometry::spherical_to_vector(gaze);
  out.face_occluded = occluded;
  for (const auto* eye : {&left, &right}) {
    Tensor<float> crop = render_image([eye](double u, double v) {
      Color c;
      return eye_color(u, v, *eye, c) ? c : kSkin;
    });
    (eye == &left ? out.left_eye : out.right_eye) = std::move(crop);
  }

  const double yaw = gaze.yaw / (kYawMaxDegrees * kDegree);
  const double half_box = 0.5 * kRenderSize * kFaceEyeScale;
  out.face = render_image([&](double x, double y) -> Color {
    for (int e = 0; e < 2; ++e) {
      const double cx = e == 0 ? kFaceLeftEyeX : kFaceRightEyeX;
      if (std::abs(x - cx) >= half_box + 1.0 || std::abs(y - kFaceEyeY) >= half_box + 1.0) continue;
      if (occluded && (e == 0) == occlude_left) return kOccluder;
      if (std::abs(x - cx) >= half_box || std::abs(y - kFaceEyeY) >= half_box) continue;
      Color c;
      const double u = kEyeCenter + (x - cx) / kFaceEyeScale;
      const double v = kEyeCenter + (y - kFaceEyeY) / kFaceEyeScale;
      if (eye_color(u, v, e == 0 ? left : right, c)) return c;
    }
    const double ox = (x - 32.0) / 24.0, oy = (y - 36.0) / 28.0;
    if (ox * ox + oy * oy > 1.0) return kBackground;
    const double shade = 1.0 + 0.15 * yaw * (x - 32.0) / 26.0;
    double tone = shade;
    const double tip = 32.0 + 4.0 * yaw;
    if (inside_triangle(x, y, tip, 30.0, tip - 4.0, 46.0, tip + 4.0, 46.0)) tone *= 0.85;
    return {std::min(1.0, kSkin[0] * tone), std::min(1.0, kSkin[1] * tone), std::min(1.0, kSkin[2] * tone)};
  });

  if (options.noise) {
    add_noise(out.face, rng);
    add_noise(out.left_eye, rng);
    add_noise(out.right_eye, rng);
  }
  return out;
}

std::uint64_t sample_seed(std::uint64_t seed, Split split, std::size_t index) {
  return hash_combine(hash_combine(seed, split == Split::train ? 1 : 2), index);
}

DatasetManifest generate_synthetic_dataset(const std::filesystem::path& out_dir, std::size_t count,
                                           std::uint64_t seed, Split split, const RenderOptions& options) {
  namespace fs = std::filesystem;
  if (count == 0) throw std::invalid_argument("sample count must be at least 1");

  std::vector<fs::path> created_files;
  std::vector<fs::path> created_dirs;
  const fs::path samples_dir = out_dir / "samples";
  try {
    for (const fs::path& dir : {out_dir, samples_dir}) {
      if (!fs::exists(dir)) {
        fs::create_directories(dir);
        created_dirs.push_back(dir);
      }
    }
    DatasetManifest manifest;
    manifest.root = out_dir;
    manifest.split = split;
    manifest.records.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      Rng rng(sample_seed(seed, split, i));
      const geometry::SphericalGaze angles{rng.uniform(-kYawMaxDegrees, kYawMaxDegrees) * kDegree,
                                           rng.uniform(-kPitchMaxDegrees, kPitchMaxDegrees) * kDegree};
      const RawSample sample = render_sample(angles, rng, options);
      char stem[32];
      std::snprintf(stem, sizeof stem, "samples/%06zu", i);
      Record rec{std::string(stem) + ".face.gzt", std::string(stem) + ".leye.gzt", std::string(stem) + ".reye.gzt",
                 sample.gaze};
      const std::pair<const std::string*, const Tensor<float>*> files[] = {
          {&rec.face_path, &sample.face}, {&rec.left_eye_path, &sample.left_eye}, {&rec.right_eye_path, &sample.right_eye}};
      for (const auto& [rel, image] : files) {
        created_files.push_back(out_dir / *rel);
        save_gzt(created_files.back(), *image);
      }
      manifest.records.push_back(std::move(rec));
    }
    created_files.push_back(out_dir / kManifestName);
    write_manifest(manifest);
    return manifest;
  } catch (...) {
    std::error_code ec;
    for (const auto& f : created_files) fs::remove(f, ec);
    for (auto it = created_dirs.rbegin(); it != created_dirs.rend(); ++it) fs::remove_all(*it, ec);
    throw;
  }
}

}  // namespace crossgaze::data
