#include "crossgaze/tensor/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace crossgaze {

double grad_check(const std::function<Tensor<double>()>& f, std::vector<Tensor<double>> inputs,
                  GradCheckOptions options) {
  std::vector<bool> saved_flags;
  for (auto& t : inputs) {
    saved_flags.push_back(t.requires_grad());
    t.set_requires_grad(true);
    t.zero_grad();
  }

  std::vector<std::vector<double>> analytic;
  {
    Tape<double> tape;
    Tape<double>::Scope scope(tape);
    const Tensor<double> loss = f();
    tape.backward(loss);
    for (auto& t : inputs) {
      analytic.emplace_back(t.has_grad() ? std::vector<double>(t.grad().begin(), t.grad().end())
                                         : std::vector<double>(t.numel(), 0.0));
    }
    tape.clear();
  }

  std::mt19937_64 rng(options.sample_seed);
  double worst = 0.0;
  for (std::size_t ti = 0; ti < inputs.size(); ++ti) {
    Tensor<double>& t = inputs[ti];
    std::vector<std::size_t> coords(t.numel());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (options.max_coords_per_tensor != 0 && coords.size() > options.max_coords_per_tensor) {
      for (std::size_t i = 0; i < options.max_coords_per_tensor; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng() % (coords.size() - i));
        std::swap(coords[i], coords[j]);
      }
      coords.resize(options.max_coords_per_tensor);
    }
    for (std::size_t c : coords) {
      const double original = t[c];
      t[c] = original + options.eps;
      const double plus = f().item();
      t[c] = original - options.eps;
      const double minus = f().item();
      t[c] = original;
      const double numeric = (plus - minus) / (2.0 * options.eps);
      const double a = analytic[ti][c];
      worst = std::max(worst, std::abs(a - numeric) / std::max(1.0, std::abs(a)));
    }
  }

  for (std::size_t i = 0; i < inputs.size(); ++i) {
    inputs[i].zero_grad();
    inputs[i].set_requires_grad(saved_flags[i]);
  }
  return worst;
}

double grad_check(const std::function<Tensor<double>(const Tensor<double>&)>& f, const Tensor<double>& x,
                  double eps) {
  return grad_check([&] { return f(x); }, {x}, GradCheckOptions{eps, 0, 0});
}

}  // namespace crossgaze
