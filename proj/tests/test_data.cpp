#include <unistd.h>

#include <cmath>
#include <cstring>
#include <map>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "crossgaze/data/dataset.hpp"
#include "crossgaze/data/synthetic.hpp"
#include "crossgaze/tensor/errors.hpp"
#include "crossgaze/tensor/gzt.hpp"
#include "doctest.h"

using namespace crossgaze;
using namespace crossgaze::data;
namespace fs = std::filesystem;

namespace {

constexpr double kDeg = std::numbers::pi / 180.0;

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("crossgaze_data_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

// Centroid of the pupil in channel 0, using pixel centers. The pupil is always
// surrounded by iris, so an edge pixel's value is linear in pupil coverage.
std::pair<double, double> pupil_centroid(const Tensor<float>& image) {
  const std::size_t n = image.dim(1);
  double sx = 0, sy = 0, sw = 0;
  for (std::size_t y = 0; y < n; ++y)
    for (std::size_t x = 0; x < n; ++x) {
      const double v = image[y * n + x];
      const double w = std::clamp((0.30 - v) / (0.30 - 0.05), 0.0, 1.0);
      sx += w * (x + 0.5);
      sy += w * (y + 0.5);
      sw += w;
    }
  return {sx / sw, sy / sw};
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

std::map<std::string, std::string> tree_contents(const fs::path& root) {
  std::map<std::string, std::string> out;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (entry.is_regular_file()) out[fs::relative(entry.path(), root).string()] = read_file(entry.path());
  }
  return out;
}

// Fraction of the uniform (yaw, pitch) rectangle within `limit` of the camera
// axis: the region cos(pitch)cos(yaw) > cos(limit), integrated over pitch.
double analytic_front_fraction(double limit_deg) {
  const double c = std::cos(limit_deg * kDeg);
  const int steps = 200000;
  const double lo = -limit_deg * kDeg, hi = limit_deg * kDeg, h = (hi - lo) / steps;
  double area = 0.0;
  for (int i = 0; i < steps; ++i) {
    const double pitch = lo + (i + 0.5) * h;
    const double ratio = c / std::cos(pitch);
    if (ratio < 1.0) area += 2.0 * std::acos(ratio) * h;
  }
  return area / ((2 * kYawMaxDegrees * kDeg) * (2 * kPitchMaxDegrees * kDeg));
}

}  // namespace

TEST_CASE("render_sample places the iris by the gaze angles") {
  const RenderOptions clean{false, 0.0};
  Rng rng(1);
  SUBCASE("straight ahead: iris centered in both crops") {
    const RawSample s = render_sample({0, 0}, rng, clean);
    for (const auto* eye : {&s.left_eye, &s.right_eye}) {
      CHECK(eye->shape() == Shape{3, 64, 64});
      const auto [cx, cy] = pupil_centroid(*eye);
      CHECK(cx == doctest::Approx(32.0).epsilon(1e-3));
      CHECK(cy == doctest::Approx(32.0).epsilon(1e-3));
    }
  }
  SUBCASE("extreme yaw shifts the iris by +14 px horizontally") {
    const RawSample s = render_sample({kYawMaxDegrees * kDeg, 0}, rng, clean);
    const auto [cx, cy] = pupil_centroid(s.left_eye);
    CHECK(cx == doctest::Approx(32.0 + 14.0).epsilon(1e-3));
    CHECK(cy == doctest::Approx(32.0).epsilon(1e-3));
  }
  SUBCASE("extreme pitch shifts the iris up by 14 px") {
    const RawSample s = render_sample({0, kPitchMaxDegrees * kDeg}, rng, clean);
    const auto [cx, cy] = pupil_centroid(s.right_eye);
    CHECK(cx == doctest::Approx(32.0).epsilon(1e-3));
    CHECK(cy == doctest::Approx(32.0 - 14.0).epsilon(1e-3));
  }
  SUBCASE("offset is linear in the angles") {
    const RawSample s = render_sample({-0.5 * kYawMaxDegrees * kDeg, -0.25 * kPitchMaxDegrees * kDeg}, rng, clean);
    const auto [cx, cy] = pupil_centroid(s.left_eye);
    CHECK(cx == doctest::Approx(32.0 - 7.0).epsilon(1e-3));
    CHECK(cy == doctest::Approx(32.0 + 3.5).epsilon(1e-3));
  }
  SUBCASE("out-of-range angles are rejected") {
    CHECK_THROWS_AS(render_sample({101 * kDeg, 0}, rng), std::invalid_argument);
    CHECK_THROWS_AS(render_sample({0, -51 * kDeg}, rng), std::invalid_argument);
  }
}

TEST_CASE("render_sample is deterministic and bounded") {
  Rng a(99), b(99);
  const RawSample s1 = render_sample({0.3, -0.2}, a);
  const RawSample s2 = render_sample({0.3, -0.2}, b);
  for (auto [x, y] : {std::pair{&s1.face, &s2.face}, {&s1.left_eye, &s2.left_eye}, {&s1.right_eye, &s2.right_eye}}) {
    REQUIRE(x->numel() == y->numel());
    CHECK(std::memcmp(x->data().data(), y->data().data(), x->numel() * sizeof(float)) == 0);
    for (float v : x->data()) {
      CHECK(v >= 0.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK(std::abs(s1.gaze.norm() - 1.0) < 1e-12);
}

TEST_CASE("occlusion affects the face image only") {
  Rng a(5), b(5);
  const RawSample open = render_sample({0.2, 0.1}, a, RenderOptions{false, 0.0});
  const RawSample hidden = render_sample({0.2, 0.1}, b, RenderOptions{false, 1.0});
  CHECK_FALSE(open.face_occluded);
  CHECK(hidden.face_occluded);
  CHECK(std::memcmp(open.left_eye.data().data(), hidden.left_eye.data().data(), open.left_eye.numel() * 4) == 0);
  CHECK(std::memcmp(open.right_eye.data().data(), hidden.right_eye.data().data(), open.right_eye.numel() * 4) == 0);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < open.face.numel(); ++i) changed += open.face[i] != hidden.face[i];
  CHECK(changed > 200);
  CHECK(changed < 3 * 20 * 20);
}

TEST_CASE("generate, load, and determinism") {
  TempDir d1("gen1"), d2("gen2"), d3("gen3");
  const DatasetManifest m = generate_synthetic_dataset(d1.path, 10, 7, Split::train);
  CHECK(m.records.size() == 10);
  CHECK(fs::exists(d1.path / "samples" / "000009.reye.gzt"));

  const DatasetManifest loaded = load_manifest(d1.path);
  CHECK(loaded.split == Split::train);
  REQUIRE(loaded.records.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(loaded.records[i].face_path == m.records[i].face_path);
    CHECK(loaded.records[i].left_eye_path == m.records[i].left_eye_path);
    CHECK(std::abs(loaded.records[i].gaze.x - m.records[i].gaze.x) < 1e-8);
    CHECK(std::abs(loaded.records[i].gaze.z - m.records[i].gaze.z) < 1e-8);
  }
  // A second write of the loaded manifest reproduces the file exactly.
  CHECK(format_manifest(loaded) == read_file(d1.path / kManifestName));

  generate_synthetic_dataset(d2.path, 10, 7, Split::train);
  CHECK(tree_contents(d1.path) == tree_contents(d2.path));

  generate_synthetic_dataset(d3.path, 10, 7, Split::test);
  CHECK(read_file(d1.path / "samples/000000.face.gzt") != read_file(d3.path / "samples/000000.face.gzt"));

  CHECK(load_gzt<float>(d1.path / "samples/000004.leye.gzt").shape() == Shape{3, 64, 64});

  CHECK_THROWS_AS(generate_synthetic_dataset(d3.path / "x", 0, 1, Split::train), std::invalid_argument);
}

TEST_CASE("label distribution matches the sampling region") {
  TempDir d("dist");
  const std::size_t n = 1500;
  const DatasetManifest m = generate_synthetic_dataset(d.path, n, 42, Split::train);
  std::size_t front = 0;
  for (const Record& r : m.records) {
    CHECK(std::abs(r.gaze.norm() - 1.0) < 1e-6);
    front += geometry::in_subset(r.gaze, geometry::Subset::front_facing);
    CHECK(geometry::in_subset(r.gaze, geometry::Subset::all));
  }
  const double p = analytic_front_fraction(20.0);
  const double sigma = std::sqrt(n * p * (1 - p));
  CHECK(p == doctest::Approx(0.0628).epsilon(0.02));
  CHECK(std::abs(double(front) - n * p) < 3.0 * sigma);
}

TEST_CASE("load_manifest errors") {
  TempDir d("errors");
  generate_synthetic_dataset(d.path, 2, 3, Split::test);
  const std::string good = read_file(d.path / kManifestName);
  const std::string first_record = good.substr(good.find('\n') + 1, good.find('\n', good.find('\n') + 1) - good.find('\n'));

  auto message = [&](const std::string& text) -> std::string {
    write_file(d.path / kManifestName, text);
    try {
      load_manifest(d.path);
    } catch (const DataError& e) {
      return e.what();
    }
    return "";
  };

  CHECK_THROWS_AS(load_manifest(d.path / "nowhere"), DataError);
  CHECK(message("#split=test\n" + first_record + "a\tb\tc\n").find("line 3") != std::string::npos);
  CHECK(message("#split=test\nsamples/000000.face.gzt\tsamples/000000.leye.gzt\tsamples/000000.reye.gzt\t1\t1\t0\n")
            .find("record 0") != std::string::npos);
  CHECK(message("#split=test\nsamples/000000.face.gzt\tsamples/000000.leye.gzt\tsamples/000000.reye.gzt\t1\tzero\t0\n")
            .find("line 2") != std::string::npos);
  CHECK(message("").find("no records") != std::string::npos);
  CHECK(message("#split=test\n").find("no records") != std::string::npos);
  CHECK(message("#split=test\nmissing.gzt\tsamples/000000.leye.gzt\tsamples/000000.reye.gzt\t0\t0\t-1\n")
            .find("missing.gzt") != std::string::npos);
  CHECK(message("#split=holdout\n" + first_record).find("line 1") != std::string::npos);
  write_file(d.path / kManifestName, good);
  CHECK(load_manifest(d.path).records.size() == 2);
}

TEST_CASE("generation removes partial output on failure") {
  TempDir d("partial");
  fs::create_directories(d.path / "samples" / "000003.face.gzt");  // blocks the fourth write
  CHECK_THROWS(generate_synthetic_dataset(d.path, 6, 1, Split::train));
  CHECK_FALSE(fs::exists(d.path / kManifestName));
  std::size_t files = 0;
  for (const auto& e : fs::recursive_directory_iterator(d.path)) files += e.is_regular_file();
  CHECK(files == 0);

  TempDir fresh("partial_fresh");
  fs::create_directories(fresh.path.parent_path());
  write_file(fresh.path, "not a directory");
  CHECK_THROWS(generate_synthetic_dataset(fresh.path / "out", 2, 1, Split::train));
  fs::remove(fresh.path);
}

TEST_CASE("preprocessing") {
  SUBCASE("64x64 binary image maps to -1/1") {
    Tensor<float> raw({3, 64, 64});
    for (std::size_t i = 0; i < raw.numel(); ++i) raw[i] = float(i % 3 == 0);
    const Tensor<float> out = preprocess_image(raw);
    CHECK(out.shape() == Shape{3, 64, 64});
    for (std::size_t i = 0; i < out.numel(); ++i) CHECK(out[i] == (i % 3 == 0 ? 1.0f : -1.0f));
  }
  SUBCASE("constant 128x128 stays constant") {
    const Tensor<float> out = preprocess_image(Tensor<float>::full({3, 128, 128}, 0.25f));
    CHECK(out.shape() == Shape{3, 64, 64});
    for (float v : out.data()) CHECK(v == -0.5f);
  }
  SUBCASE("2x downscale of a linear ramp equals the pairwise average") {
    // v(x, y) = 0.003 x + 0.001 y + 0.1; each output pixel sits halfway
    // between source pixels 2i and 2i+1, so bilinear = average = ramp at 2i+0.5.
    Tensor<float> raw({3, 128, 128});
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 128; ++y)
        for (std::size_t x = 0; x < 128; ++x) raw[(c * 128 + y) * 128 + x] = float(0.003 * x + 0.001 * y + 0.1 * c);
    const Tensor<float> out = resize_bilinear(raw, 64, 64);
    double worst = 0.0;
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t y = 0; y < 64; ++y)
        for (std::size_t x = 0; x < 64; ++x) {
          const double a = raw[(c * 128 + 2 * y) * 128 + 2 * x], b = raw[(c * 128 + 2 * y) * 128 + 2 * x + 1];
          const double e = raw[(c * 128 + 2 * y + 1) * 128 + 2 * x], f = raw[(c * 128 + 2 * y + 1) * 128 + 2 * x + 1];
          worst = std::max(worst, std::abs(out[(c * 64 + y) * 64 + x] - 0.25 * (a + b + e + f)));
        }
    CHECK(worst < 1e-6);
  }
  SUBCASE("upscale from a small image keeps the range") {
    Tensor<float> raw({3, 8, 8});
    for (std::size_t i = 0; i < raw.numel(); ++i) raw[i] = float(i % 7) / 6.0f;
    const Tensor<float> out = preprocess_image(raw);
    CHECK(out.shape() == Shape{3, 64, 64});
    for (float v : out.data()) {
      CHECK(v >= -1.0f);
      CHECK(v <= 1.0f);
    }
  }
  CHECK_THROWS_AS(preprocess_image(Tensor<float>({1, 64, 64})), DataError);
  CHECK_THROWS_AS(preprocess_image(Tensor<float>({3, 7, 64})), DataError);
  CHECK_THROWS_AS(preprocess_image(Tensor<float>({64, 64})), DataError);
}

TEST_CASE("batches") {
  SUBCASE("sizes and partition") {
    const auto batches = batch_indices(10, 4, 17);
    REQUIRE(batches.size() == 3);
    CHECK(batches[0].size() == 4);
    CHECK(batches[1].size() == 4);
    CHECK(batches[2].size() == 2);
    std::multiset<std::size_t> seen;
    for (const auto& b : batches) seen.insert(b.begin(), b.end());
    CHECK(seen == std::multiset<std::size_t>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});
  }
  SUBCASE("seeded order is reproducible; unseeded is manifest order") {
    CHECK(batch_indices(50, 8, 3) == batch_indices(50, 8, 3));
    CHECK(batch_indices(50, 8, 3) != batch_indices(50, 8, 4));
    const auto plain = batch_indices(5, 2, std::nullopt);
    CHECK(plain == std::vector<std::vector<std::size_t>>{{0, 1}, {2, 3}, {4}});
  }
  CHECK_THROWS_AS(batch_indices(3, 0, std::nullopt), std::invalid_argument);

  SUBCASE("iterator gathers preprocessed samples") {
    TempDir d("batches");
    const DatasetManifest m = generate_synthetic_dataset(d.path, 5, 11, Split::train);
    const InMemoryDataset ds = InMemoryDataset::load(load_manifest(d.path));
    REQUIRE(ds.size() == 5);
    BatchIterator it(ds, 2, std::nullopt);
    CHECK(it.batch_count() == 3);
    InMemoryDataset::Batch batch;
    std::size_t seen = 0;
    while (it.next(batch)) {
      CHECK(batch.left_eye.shape()[1] == 3);
      CHECK(batch.left_eye.shape()[2] == 64);
      CHECK(batch.left_eye.shape()[3] == 64);
      for (std::size_t i = 0; i < batch.indices.size(); ++i) {
        const std::size_t idx = batch.indices[i];
        const Tensor<float> raw = load_gzt<float>(d.path / m.records[idx].face_path);
        CHECK(batch.face[i * 3 * 64 * 64 + 100] == 2.0f * raw[100] - 1.0f);
        CHECK(double(batch.gaze[i * 3 + 1]) == doctest::Approx(m.records[idx].gaze.y).epsilon(1e-6));
      }
      seen += batch.indices.size();
    }
    CHECK(seen == 5);
  }
}
