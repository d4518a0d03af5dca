#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "crossgaze/tensor/tensor.hpp"

namespace crossgaze {

struct GradCheckOptions {
  double eps = 1e-5;
  /// Coordinates probed per input tensor; 0 probes every coordinate. Larger
  /// tensors are sampled with a fixed-seed generator.
  std::size_t max_coords_per_tensor = 0;
  std::uint64_t sample_seed = 0;
};

/// Compares reverse-mode gradients of a scalar function against central finite
/// differences. `f` must read `inputs` (which are perturbed in place and
/// restored) and return a scalar. Returns
///   max over probed coordinates of |analytic - numeric| / max(1, |analytic|).
double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                  GradCheckOptions options = {});

/// Single-input convenience form.
double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double eps = 1e-5);

}  // namespace crossgaze
