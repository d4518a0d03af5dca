#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "crossgaze/geometry/gaze.hpp"
#include "crossgaze/tensor/tensor.hpp"

namespace crossgaze::data {

enum class Split { train, test };

std::string_view split_name(Split split);
Split parse_split(std::string_view name);

/// Paths are relative to the manifest root.
struct Record {
  std::string face_path;
  std::string left_eye_path;
  std::string right_eye_path;
  geometry::GazeVector gaze;

  bool operator==(const Record&) const = default;
};

struct DatasetManifest {
  std::filesystem::path root;
  Split split = Split::train;
  std::vector<Record> records;
};

inline constexpr const char* kManifestName = "manifest.txt";

/// Serializes the manifest file text: a "#split=<name>" line, then one
/// tab-separated record per line with gaze at 9 significant digits.
std::string format_manifest(const DatasetManifest& manifest);
void write_manifest(const DatasetManifest& manifest);

/// Parses <dir>/manifest.txt. Throws DataError for a missing file, a
/// malformed line (with its line number), a non-unit gaze (naming the
/// record), a referenced file that does not exist, or no records.
DatasetManifest load_manifest(const std::filesystem::path& dir);

inline constexpr std::size_t kInputSize = 64;

/// Bilinear resize of [C,H,W] with half-pixel centers and edge clamping.
Tensor<float> resize_bilinear(const Tensor<float>& image, std::size_t out_h, std::size_t out_w);

/// [3,H,W] in [0,1] with H,W >= 8 -> [3,64,64] in [-1,1]. Throws DataError
/// for a non-3-channel or too-small image.
Tensor<float> preprocess_image(const Tensor<float>& raw);

/// Preprocessed images held contiguously, [N,3,64,64] each, labels [N,3].
class InMemoryDataset {
 public:
  static InMemoryDataset load(const DatasetManifest& manifest);

  std::size_t size() const { return gaze_.size(); }
  const std::vector<geometry::GazeVector>& gaze() const { return gaze_; }

  struct Batch {
    Tensor<float> face;
    Tensor<float> left_eye;
    Tensor<float> right_eye;
    Tensor<float> gaze;
    std::vector<std::size_t> indices;
  };
  Batch gather(std::span<const std::size_t> indices) const;

  /// Appends one preprocessed sample; used when building datasets in memory.
  void push_back(const Tensor<float>& face, const Tensor<float>& left, const Tensor<float>& right,
                 geometry::GazeVector gaze);

 private:
  std::vector<float> faces_, lefts_, rights_;
  std::vector<geometry::GazeVector> gaze_;
};

/// Index batches over [0, n): manifest order without a seed, otherwise a
/// seeded Fisher-Yates permutation. The last partial batch is kept.
std::vector<std::vector<std::size_t>> batch_indices(std::size_t n, std::size_t batch_size,
                                                    std::optional<std::uint64_t> shuffle_seed);

class BatchIterator {
 public:
  BatchIterator(const InMemoryDataset& dataset, std::size_t batch_size, std::optional<std::uint64_t> shuffle_seed);
  bool next(InMemoryDataset::Batch& out);
  std::size_t batch_count() const { return batches_.size(); }

 private:
  const InMemoryDataset* dataset_;
  std::vector<std::vector<std::size_t>> batches_;
  std::size_t cursor_ = 0;
};

}  // namespace crossgaze::data
