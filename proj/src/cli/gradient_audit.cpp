#include "crossgaze/cli/gradient_audit.hpp"

#include <cmath>
#include <functional>

#include "crossgaze/cli/report.hpp"
#include "crossgaze/nn/layers.hpp"
#include "crossgaze/tensor/grad_check.hpp"
#include "crossgaze/tensor/rng.hpp"
#include "crossgaze/train/training.hpp"

namespace crossgaze::cli {
namespace {

using nn::LayerScope;
using nn::ParamBuilder;
using nn::ParamStore;

Tensor<double> random_tensor(Shape shape, Rng& rng) {
  std::vector<double> values(shape_numel(shape));
  for (auto& v : values) v = rng.uniform(-1.0, 1.0);
  return Tensor<double>(std::move(shape), std::move(values));
}

void randomize(ParamStore<double>& store, Rng& rng) {
  for (auto& [path, t] : store.parameters()) {
    for (auto& v : t.data()) v = rng.uniform(-0.5, 0.5);
  }
}

// sum(y * r) with a fixed random r, so no gradient cancels by symmetry.
Tensor<double> probe(const Tensor<double>& y) {
  Rng rng(99);
  return sum(mul(y, random_tensor(y.shape(), rng)));
}

double audit(ParamStore<double>& store, const std::vector<Tensor<double>>& data,
             const std::function<Tensor<double>()>& forward) {
  std::vector<Tensor<double>> inputs = data;
  for (auto& [path, t] : store.parameters()) inputs.push_back(t);
  GradCheckOptions options;
  options.eps = 1e-6;
  options.max_coords_per_tensor = 24;
  options.sample_seed = 3;
  return grad_check([&] { return probe(forward()); }, inputs, options);
}

}  // namespace

std::vector<BlockAudit> run_gradient_audit() {
  std::vector<BlockAudit> out;
  Rng rng(2024);
  auto block = [&](const std::string& name, auto declare, auto forward_with) {
    ParamStore<double> store;
    ParamBuilder<double> builder(store, 1);
    declare(builder);
    randomize(store, rng);
    LayerScope<double> scope(store, true, name);
    auto [data, forward] = forward_with(scope);
    out.push_back({name, audit(store, data, forward)});
  };
  using Forward = std::function<Tensor<double>()>;
  using Inputs = std::vector<Tensor<double>>;

  block(
      "linear", [](auto& b) { nn::declare_linear(b, "linear", 5, 4); },
      [&](const LayerScope<double>& s) {
        Tensor<double> x = random_tensor({3, 2, 5}, rng);
        return std::pair<Inputs, Forward>{{x}, [s, x] { return nn::linear(s, x); }};
      });
  block(
      "conv_block", [](auto& b) { nn::declare_conv_block(b, "conv_block", nn::ConvSpec{2, 3, 3, 1}); },
      [&](const LayerScope<double>& s) {
        Tensor<double> x = random_tensor({3, 2, 5, 5}, rng);
        return std::pair<Inputs, Forward>{{x}, [s, x] { return nn::conv_block(s, x); }};
      });
  block(
      "residual_block", [](auto& b) { nn::declare_residual_block(b, "residual_block", 2, 4, 2); },
      [&](const LayerScope<double>& s) {
        Tensor<double> x = random_tensor({3, 2, 6, 6}, rng);
        return std::pair<Inputs, Forward>{{x}, [s, x] { return nn::residual_block(s, x, 2); }};
      });
  block(
      "multi_branch_block", [](auto& b) { nn::declare_multi_branch_block(b, "multi_branch_block", 8); },
      [&](const LayerScope<double>& s) {
        Tensor<double> x = random_tensor({2, 8, 5, 5}, rng);
        return std::pair<Inputs, Forward>{{x}, [s, x] { return nn::multi_branch_block(s, x); }};
      });
  block(
      "layer_norm", [](auto& b) { nn::declare_layer_norm(b, "layer_norm", 6); },
      [&](const LayerScope<double>& s) {
        Tensor<double> x = random_tensor({3, 4, 6}, rng);
        return std::pair<Inputs, Forward>{{x}, [s, x] { return nn::layer_norm(s, x); }};
      });
  const nn::AttentionConfig attention(8, 2);
  block(
      "cross_attention", [&](auto& b) { nn::declare_cross_attention(b, "cross_attention", attention); },
      [&](const LayerScope<double>& s) {
        Tensor<double> q = random_tensor({2, 3, 8}, rng);
        Tensor<double> kv = random_tensor({2, 4, 8}, rng);
        return std::pair<Inputs, Forward>{{q, kv},
                                          [s, q, kv, attention] { return nn::cross_attention(s, q, kv, attention); }};
      });
  block(
      "fcn_fusion", [](auto& b) { nn::declare_fcn_fusion(b, "fcn_fusion", 6); },
      [&](const LayerScope<double>& s) {
        Tensor<double> face = random_tensor({3, 6}, rng);
        Tensor<double> eyes = random_tensor({3, 6}, rng);
        return std::pair<Inputs, Forward>{{face, eyes}, [s, face, eyes] { return nn::fcn_fusion(s, face, eyes); }};
      });
  block(
      "mlp_head", [](auto& b) { nn::declare_mlp_head(b, "mlp_head", 8); },
      [&](const LayerScope<double>& s) {
        Tensor<double> x = random_tensor({4, 8}, rng);
        return std::pair<Inputs, Forward>{{x}, [s, x] { return nn::mlp_head(s, x); }};
      });

  Tensor<double> pred = random_tensor({5, 3}, rng);
  std::vector<double> unit;
  for (std::size_t i = 0; i < 5; ++i) {
    const double a = rng.uniform(-1.0, 1.0), b = rng.uniform(-1.0, 1.0), c = rng.uniform(0.2, 1.0);
    const double n = std::sqrt(a * a + b * b + c * c);
    unit.insert(unit.end(), {a / n, b / n, c / n});
  }
  const Tensor<double> truth({5, 3}, std::move(unit));
  GradCheckOptions options;
  options.eps = 1e-6;
  out.push_back({"gaze_loss", grad_check([&] { return train::gaze_loss(pred, truth); }, {pred}, options)});
  return out;
}

std::string format_gradient_audit(const std::vector<BlockAudit>& audits) {
  std::string out;
  for (const auto& a : audits) out += a.name + "\t" + format_number(a.max_rel_err) + "\n";
  return out;
}

}  // namespace crossgaze::cli
