#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossgaze/data/dataset.hpp"
#include "crossgaze/geometry/gaze.hpp"
#include "crossgaze/model/crossgaze.hpp"

namespace crossgaze::train {

/// mean over rows of 1 - pred.truth / max(|pred|, 1e-8). pred and truth are
/// [B,3]; truth rows are expected to be unit length.
template <typename T>
Tensor<T> gaze_loss(const Tensor<T>& pred, const Tensor<T>& truth);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments per parameter path, and the number of steps taken.
template <typename T>
struct AdamState {
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>> m;
  std::map<std::string, Tensor<T>> v;

  /// Zero moments for every parameter of the store.
  static AdamState zeros_like(const nn::ParamStore<T>& params);
  bool operator==(const AdamState& other) const;
};

template <typename T>
using GradMap = std::map<std::string, Tensor<T>>;

/// Current gradients of every parameter, zeros where none was accumulated.
template <typename T>
GradMap<T> collect_gradients(const nn::ParamStore<T>& params);

/// One bias-corrected Adam update. Missing moments start at zero. Throws
/// ShapeError naming the path when grads or moments disagree with the params.
template <typename T>
void adam_step(nn::ParamStore<T>& params, const GradMap<T>& grads, AdamState<T>& state, const AdamConfig& config);

struct TrainConfig {
  std::size_t epochs = 1;
  std::size_t batch_size = 32;
  AdamConfig adam;
  /// Required; there is no environment-derived default.
  std::optional<std::uint64_t> seed;
  std::vector<geometry::Subset> eval_subsets{geometry::Subset::front180, geometry::Subset::front_facing};

  /// Throws std::invalid_argument on a missing seed, zero epochs or batch size,
  /// or a negative or non-finite rate.
  void validate() const;
};

/// A model variant together with its parameters and running statistics.
struct Model {
  model::CrossGazeConfig config;
  nn::ParamStore<float> params;

  static Model create(const model::CrossGazeConfig& config);
};

struct EpochResult {
  double mean_loss = 0.0;
  std::vector<double> batch_losses;
};

/// One pass over `data` in the order fixed by hash(seed, epoch_index). Throws
/// DataError on an empty dataset and NumericalError when a loss or parameter
/// stops being finite.
EpochResult train_epoch(Model& model, AdamState<float>& adam, const data::InMemoryDataset& data,
                        const TrainConfig& config, std::uint64_t epoch_index);

/// Eval-mode predictions in dataset order, one raw vector per sample.
std::vector<geometry::GazeVector> predict(Model& model, const data::InMemoryDataset& data,
                                          std::size_t batch_size = 64);

struct SubsetMetric {
  geometry::Subset subset = geometry::Subset::all;
  std::size_t count = 0;
  /// Absent when no sample falls in the subset.
  std::optional<double> mean_degrees;
};

std::vector<SubsetMetric> evaluate_predictions(const std::vector<geometry::GazeVector>& predictions,
                                               const std::vector<geometry::GazeVector>& truth,
                                               const std::vector<geometry::Subset>& subsets);
std::vector<SubsetMetric> evaluate(Model& model, const data::InMemoryDataset& data,
                                   const std::vector<geometry::Subset>& subsets);

/// Throws NumericalError naming the first parameter or buffer holding NaN/Inf.
void check_finite(const nn::ParamStore<float>& params);

}  // namespace crossgaze::train
