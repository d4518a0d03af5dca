#include "crossgaze/data/dataset.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "crossgaze/tensor/errors.hpp"
#include "crossgaze/tensor/gzt.hpp"
#include "crossgaze/tensor/rng.hpp"

namespace crossgaze::data {

namespace fs = std::filesystem;

std::string_view split_name(Split split) { return split == Split::train ? "train" : "test"; }

Split parse_split(std::string_view name) {
  if (name == "train") return Split::train;
  if (name == "test") return Split::test;
  throw std::invalid_argument("unknown split '" + std::string(name) + "' (expected train or test)");
}

namespace {

void append_number(std::string& out, double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 9);
  out.append(buf, res.ptr);
}

std::vector<std::string_view> split_tabs(std::string_view line) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t tab = line.find('\t', start);
    fields.push_back(line.substr(start, tab == std::string_view::npos ? std::string_view::npos : tab - start));
    if (tab == std::string_view::npos) break;
    start = tab + 1;
  }
  return fields;
}

bool parse_double(std::string_view text, double& out) {
  if (text.empty()) return false;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), out);
  return res.ec == std::errc() && res.ptr == text.data() + text.size() && std::isfinite(out);
}

}  // namespace

std::string format_manifest(const DatasetManifest& manifest) {
  std::string out = "#split=" + std::string(split_name(manifest.split)) + "\n";
  for (const Record& r : manifest.records) {
    out += r.face_path + '\t' + r.left_eye_path + '\t' + r.right_eye_path;
    for (double v : {r.gaze.x, r.gaze.y, r.gaze.z}) {
      out += '\t';
      append_number(out, v);
    }
    out += '\n';
  }
  return out;
}

void write_manifest(const DatasetManifest& manifest) {
  const fs::path path = manifest.root / kManifestName;
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  const std::string text = format_manifest(manifest);
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  out.flush();
  if (!out) throw DataError("cannot write " + path.string());
}

DatasetManifest load_manifest(const fs::path& dir) {
  const fs::path path = dir / kManifestName;
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("manifest not found: " + path.string());

  DatasetManifest manifest;
  manifest.root = dir;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string where = path.string() + " line " + std::to_string(line_no);
    if (line[0] == '#') {
      constexpr std::string_view key = "#split=";
      if (line.compare(0, key.size(), key) == 0) {
        try {
          manifest.split = parse_split(std::string_view(line).substr(key.size()));
        } catch (const std::invalid_argument& e) {
          throw DataError(where + ": " + e.what());
        }
      }
      continue;
    }
    const auto fields = split_tabs(line);
    if (fields.size() != 6) {
      throw DataError(where + ": expected 6 tab-separated fields, found " + std::to_string(fields.size()));
    }
    Record rec{std::string(fields[0]), std::string(fields[1]), std::string(fields[2]), {}};
    double g[3];
    for (int i = 0; i < 3; ++i) {
      if (!parse_double(fields[3 + i], g[i])) {
        throw DataError(where + ": gaze component '" + std::string(fields[3 + i]) + "' is not a number");
      }
    }
    rec.gaze = {g[0], g[1], g[2]};
    const std::size_t index = manifest.records.size();
    if (std::abs(rec.gaze.norm() - 1.0) > 1e-4) {
      throw DataError(where + ": record " + std::to_string(index) + " (" + rec.face_path +
                      ") has non-unit gaze, norm " + std::to_string(rec.gaze.norm()));
    }
    for (const std::string* rel : {&rec.face_path, &rec.left_eye_path, &rec.right_eye_path}) {
      if (rel->empty() || !fs::is_regular_file(dir / *rel)) {
        throw DataError(where + ": record " + std::to_string(index) + " references missing file '" + *rel + "'");
      }
    }
    manifest.records.push_back(std::move(rec));
  }
  if (manifest.records.empty()) throw DataError(path.string() + ": no records");
  return manifest;
}

Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w) {
  if (image.rank() != 3) throw ShapeError("resize_bilinear expects [C,H,W], got " + shape_string(image.shape()));
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out({c, out_h, out_w});
  const double sy = double(h) / double(out_h), sx = double(w) / double(out_w);
  struct Tap {
    std::size_t i0, i1;
    double t;
  };
  auto taps = [](std::size_t n_out, std::size_t n_in, double scale) {
    std::vector<Tap> t(n_out);
    for (std::size_t i = 0; i < n_out; ++i) {
      const double src = std::clamp((double(i) + 0.5) * scale - 0.5, 0.0, double(n_in - 1));
      const std::size_t i0 = static_cast<std::size_t>(std::floor(src));
      t[i] = {i0, std::min(i0 + 1, n_in - 1), src - double(i0)};
    }
    return t;
  };
  const auto ty = taps(out_h, h, sy), tx = taps(out_w, w, sx);
  const auto src = image.data();
  auto dst = out.data();
  for (std::size_t ch = 0; ch < c; ++ch) {
    const float* plane = src.data() + ch * h * w;
    for (std::size_t y = 0; y < out_h; ++y) {
      const float* r0 = plane + ty[y].i0 * w;
      const float* r1 = plane + ty[y].i1 * w;
      for (std::size_t x = 0; x < out_w; ++x) {
        const double top = r0[tx[x].i0] + tx[x].t * (double(r0[tx[x].i1]) - r0[tx[x].i0]);
        const double bottom = r1[tx[x].i0] + tx[x].t * (double(r1[tx[x].i1]) - r1[tx[x].i0]);
        dst[(ch * out_h + y) * out_w + x] = static_cast<float>(top + ty[y].t * (bottom - top));
      }
    }
  }
  return out;
}

Tensor<float> preprocess_image(const Tensor<float>& raw) {
  if (raw.rank() != 3 || raw.dim(0) != 3) {
    throw DataError("expected a 3-channel [3,H,W] image, got " + shape_string(raw.shape()));
  }
  if (raw.dim(1) < 8 || raw.dim(2) < 8) throw DataError("image smaller than 8x8: " + shape_string(raw.shape()));
  Tensor<float> out = (raw.dim(1) == kInputSize && raw.dim(2) == kInputSize)
                          ? raw.clone()
                          : resize_bilinear(raw, kInputSize, kInputSize);
  for (auto& v : out.data()) v = 2.0f * v - 1.0f;
  return out;
}

namespace {
constexpr std::size_t kImageFloats = 3 * kInputSize * kInputSize;
}

void InMemoryDataset::push_back(const Tensor<float>& face, const Tensor<float>& left, const Tensor<float>& right,
                                geometry::GazeVector gaze) {
  const Shape expect{3, kInputSize, kInputSize};
  for (const Tensor<float>* t : {&face, &left, &right}) {
    if (t->shape() != expect) throw ShapeError("dataset image must be [3x64x64], got " + shape_string(t->shape()));
  }
  faces_.insert(faces_.end(), face.data().begin(), face.data().end());
  lefts_.insert(lefts_.end(), left.data().begin(), left.data().end());
  rights_.insert(rights_.end(), right.data().begin(), right.data().end());
  gaze_.push_back(gaze);
}

InMemoryDataset InMemoryDataset::load(const DatasetManifest& manifest) {
  InMemoryDataset ds;
  const std::size_t n = manifest.records.size();
  ds.faces_.reserve(n * kImageFloats);
  ds.lefts_.reserve(n * kImageFloats);
  ds.rights_.reserve(n * kImageFloats);
  for (const Record& r : manifest.records) {
    auto load = [&](const std::string& rel) {
      try {
        return preprocess_image(load_gzt<float>(manifest.root / rel));
      } catch (const DataError& e) {
        throw DataError(std::string(e.what()) + " (" + (manifest.root / rel).string() + ")");
      }
    };
    ds.push_back(load(r.face_path), load(r.left_eye_path), load(r.right_eye_path), r.gaze.normalized());
  }
  return ds;
}

InMemoryDataset::Batch InMemoryDataset::gather(std::span<const std::size_t> indices) const {
  const std::size_t b = indices.size();
  if (b == 0) throw std::invalid_argument("empty batch");
  Batch out{Tensor<float>({b, 3, kInputSize, kInputSize}), Tensor<float>({b, 3, kInputSize, kInputSize}),
            Tensor<float>({b, 3, kInputSize, kInputSize}), Tensor<float>({b, 3}),
            std::vector<std::size_t>(indices.begin(), indices.end())};
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t idx = indices[i];
    if (idx >= size()) throw std::out_of_range("sample index " + std::to_string(idx) + " out of range");
    std::memcpy(out.face.data().data() + i * kImageFloats, faces_.data() + idx * kImageFloats, kImageFloats * 4);
    std::memcpy(out.left_eye.data().data() + i * kImageFloats, lefts_.data() + idx * kImageFloats, kImageFloats * 4);
    std::memcpy(out.right_eye.data().data() + i * kImageFloats, rights_.data() + idx * kImageFloats,
                kImageFloats * 4);
    out.gaze[i * 3 + 0] = static_cast<float>(gaze_[idx].x);
    out.gaze[i * 3 + 1] = static_cast<float>(gaze_[idx].y);
    out.gaze[i * 3 + 2] = static_cast<float>(gaze_[idx].z);
  }
  return out;
}

std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::optional<std::uint64_t> shuffle_seed) {
  if (batch_size == 0) throw std::invalid_argument("batch size must be at least 1");
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  if (shuffle_seed) {
    Rng rng(*shuffle_seed);
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  }
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch_size) {
    const std::size_t end = std::min(n, start + batch_size);
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start),
                         order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

BatchIterator::BatchIterator(const InMemoryDataset& dataset, std::size_t batch_size,
                             std::optional<std::uint64_t> shuffle_seed)
    : dataset_(&dataset), batches_(batch_indices(dataset.size(), batch_size, shuffle_seed)) {}

bool BatchIterator::next(InMemoryDataset::Batch& out) {
  if (cursor_ >= batches_.size()) return false;
  out = dataset_->gather(batches_[cursor_++]);
  return true;
}

}  // namespace crossgaze::data
