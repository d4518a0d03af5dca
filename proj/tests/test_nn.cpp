#include <algorithm>
#include <cmath>
#include <random>

#include "crossgaze/nn/layers.hpp"
#include "crossgaze/tensor/grad_check.hpp"
#include "doctest.h"

using namespace crossgaze;
using namespace crossgaze::nn;

namespace {

template <typename T>
Tensor<T> random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<T> values(shape_numel(shape));
  for (auto& v : values) v = static_cast<T>(dist(rng));
  return Tensor<T>(std::move(shape), std::move(values));
}

template <typename T>
void randomize(ParamStore<T>& store, std::mt19937_64& rng, double lo = -0.5, double hi = 0.5) {
  std::uniform_real_distribution<double> dist(lo, hi);
  for (auto& [path, t] : store.parameters())
    for (auto& v : t.data()) v = static_cast<T>(dist(rng));
}

template <typename T>
void fill(Tensor<T>& t, T value) {
  std::fill(t.data().begin(), t.data().end(), value);
}

// Scalar probe sum(y * r) with a fixed random r, so no gradient cancels by symmetry.
Tensor<double> probe(const Tensor<double>& y, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return sum(mul(y, random_tensor<double>(y.shape(), rng)));
}

std::vector<Tensor<double>> all_params(ParamStore<double>& store) {
  std::vector<Tensor<double>> out;
  for (auto& [path, t] : store.parameters()) out.push_back(t);
  return out;
}

double check_block(ParamStore<double>& store, const Tensor<double>& x,
                   const std::function<Tensor<double>()>& forward) {
  std::vector<Tensor<double>> inputs = all_params(store);
  inputs.push_back(x);
  GradCheckOptions opts;
  opts.eps = 1e-6;
  opts.max_coords_per_tensor = 24;
  opts.sample_seed = 3;
  return grad_check([&] { return probe(forward(), 99); }, inputs, opts);
}

bool all_finite(const Tensor<float>& t) {
  return std::all_of(t.data().begin(), t.data().end(), [](float v) { return std::isfinite(v); });
}

// Per-head, per-token loop in double; independent of the reshape/permute path.
std::vector<double> naive_attention_context(const Tensor<double>& q, const Tensor<double>& kv,
                                            const ParamStore<double>& store, const std::string& prefix,
                                            std::size_t heads) {
  const auto& wq = store.parameter(prefix + ".wq");
  const auto& wk = store.parameter(prefix + ".wk");
  const auto& wv = store.parameter(prefix + ".wv");
  const auto& wo = store.parameter(prefix + ".wo");
  const std::size_t B = q.dim(0), Tq = q.dim(1), Tk = kv.dim(1), d = q.dim(2), hd = d / heads;
  auto project = [d](const Tensor<double>& x, std::size_t b, std::size_t t, const Tensor<double>& w) {
    std::vector<double> out(d, 0.0);
    for (std::size_t j = 0; j < d; ++j)
      for (std::size_t i = 0; i < d; ++i) out[j] += x[(b * x.dim(1) + t) * d + i] * w[i * d + j];
    return out;
  };
  std::vector<double> result(B * Tq * d, 0.0);
  for (std::size_t b = 0; b < B; ++b) {
    std::vector<std::vector<double>> K, V;
    for (std::size_t t = 0; t < Tk; ++t) {
      K.push_back(project(kv, b, t, wk));
      V.push_back(project(kv, b, t, wv));
    }
    for (std::size_t t = 0; t < Tq; ++t) {
      const std::vector<double> Q = project(q, b, t, wq);
      std::vector<double> concat(d, 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> logits(Tk);
        for (std::size_t k = 0; k < Tk; ++k) {
          double dot = 0.0;
          for (std::size_t i = 0; i < hd; ++i) dot += Q[h * hd + i] * K[k][h * hd + i];
          logits[k] = dot / std::sqrt(double(hd));
        }
        const double peak = *std::max_element(logits.begin(), logits.end());
        double z = 0.0;
        for (auto& l : logits) z += (l = std::exp(l - peak));
        for (std::size_t k = 0; k < Tk; ++k)
          for (std::size_t i = 0; i < hd; ++i) concat[h * hd + i] += logits[k] / z * V[k][h * hd + i];
      }
      for (std::size_t j = 0; j < d; ++j) {
        double acc = 0.0;
        for (std::size_t i = 0; i < d; ++i) acc += concat[i] * wo[i * d + j];
        result[(b * Tq + t) * d + j] = acc;
      }
    }
  }
  return result;
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  REQUIRE(a.size() == b.size());
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace

TEST_CASE("param store enumerates paths lexicographically and rejects duplicates") {
  ParamStore<float> store;
  ParamBuilder<float> b(store, 1);
  b.parameter("zeta.w", {2}, Init::zeros);
  b.parameter("alpha.w", {3}, Init::ones);
  b.parameter("mid.b", {4, 2}, Init::fan_in_uniform, 4);
  b.buffer("alpha.running_var", {3}, 1.0f);
  std::vector<std::string> names;
  for (const auto& [path, t] : store.parameters()) names.push_back(path);
  CHECK(names == std::vector<std::string>{"alpha.w", "mid.b", "zeta.w"});
  CHECK(store.parameter_count() == 2 + 3 + 8);
  CHECK(store.parameter("alpha.w").requires_grad());
  CHECK_FALSE(store.buffer("alpha.running_var").requires_grad());
  CHECK_THROWS_AS(b.parameter("alpha.w", {1}, Init::zeros), std::invalid_argument);
  CHECK_THROWS_AS(b.buffer("mid.b", {1}, 0.0f), std::invalid_argument);
  CHECK_THROWS_AS(store.parameter("missing"), std::out_of_range);
}

TEST_CASE("initial values depend on seed and path, not declaration order") {
  ParamStore<double> s1, s2, s3;
  ParamBuilder<double> b1(s1, 7), b2(s2, 7), b3(s3, 8);
  b1.parameter("a", {16}, Init::fan_in_uniform, 16);
  b1.parameter("b", {16}, Init::fan_in_uniform, 16);
  b2.parameter("b", {16}, Init::fan_in_uniform, 16);
  b2.parameter("a", {16}, Init::fan_in_uniform, 16);
  b3.parameter("a", {16}, Init::fan_in_uniform, 16);
  CHECK(s1.parameter("a").data()[5] == s2.parameter("a").data()[5]);
  CHECK(s1.parameter("b").data()[0] == s2.parameter("b").data()[0]);
  CHECK(s1.parameter("a").data()[0] != s1.parameter("b").data()[0]);
  CHECK(s1.parameter("a").data()[0] != s3.parameter("a").data()[0]);
  for (double v : s1.parameter("a").data()) CHECK(std::abs(v) <= 0.25);
}

TEST_CASE("linear") {
  SUBCASE("identity weight and zero bias") {
    ParamStore<double> store;
    ParamBuilder<double> b(store, 0);
    declare_linear(b, "fc", 3, 3);
    auto& w = store.parameter("fc.w");
    fill(w, 0.0);
    for (std::size_t i = 0; i < 3; ++i) w[i * 3 + i] = 1.0;
    fill(store.parameter("fc.b"), 0.0);
    Tensor<double> x({2, 3}, {1, -2, 3, 0.5, 4, -6});
    Tensor<double> y = linear(LayerScope<double>(store, false, "fc"), x);
    CHECK(std::vector<double>(y.data().begin(), y.data().end()) ==
          std::vector<double>(x.data().begin(), x.data().end()));
  }
  SUBCASE("hand example") {
    ParamStore<double> store;
    ParamBuilder<double> b(store, 0);
    declare_linear(b, "fc", 2, 1);
    fill(store.parameter("fc.w"), 1.0);
    fill(store.parameter("fc.b"), 0.5);
    Tensor<double> y = linear(LayerScope<double>(store, false, "fc"), Tensor<double>({1, 2}, {1, 1}));
    CHECK(y.shape() == Shape{1, 1});
    CHECK(y[0] == 2.5);
  }
  SUBCASE("random case against a loop oracle") {
    std::mt19937_64 rng(11);
    ParamStore<double> store;
    ParamBuilder<double> b(store, 5);
    declare_linear(b, "fc", 7, 4);
    Tensor<double> x = random_tensor<double>({5, 7}, rng);
    Tensor<double> y = linear(LayerScope<double>(store, false, "fc"), x);
    const auto& w = store.parameter("fc.w");
    const auto& bias = store.parameter("fc.b");
    std::vector<double> expect(5 * 4);
    for (std::size_t r = 0; r < 5; ++r)
      for (std::size_t c = 0; c < 4; ++c) {
        double acc = bias[c];
        for (std::size_t k = 0; k < 7; ++k) acc += x[r * 7 + k] * w[k * 4 + c];
        expect[r * 4 + c] = acc;
      }
    CHECK(max_abs_diff(y.data(), expect) < 1e-12);
  }
  SUBCASE("dimension mismatch") {
    ParamStore<double> store;
    ParamBuilder<double> b(store, 0);
    declare_linear(b, "fc", 3, 2);
    CHECK_THROWS_AS(linear(LayerScope<double>(store, false, "fc"), Tensor<double>({2, 4})), ShapeError);
  }
}

TEST_CASE("conv_block") {
  std::mt19937_64 rng(21);
  ParamStore<double> store;
  ParamBuilder<double> b(store, 3);
  declare_conv_block(b, "blk", ConvSpec{2, 3, 3, 1});
  LayerScope<double> train(store, true, "blk");

  SUBCASE("zero weights yield relu(shift) everywhere") {
    fill(store.parameter("blk.conv.w"), 0.0);
    auto& shift = store.parameter("blk.norm.shift");
    shift[0] = 0.7;
    shift[1] = -0.4;
    shift[2] = 0.0;
    Tensor<double> y = conv_block(train, random_tensor<double>({2, 2, 5, 5}, rng));
    const double expect[3] = {0.7, 0.0, 0.0};
    for (std::size_t i = 0; i < y.numel(); ++i) CHECK(y[i] == doctest::Approx(expect[(i / 25) % 3]).epsilon(1e-12));
  }
  SUBCASE("identical images give identical outputs") {
    Tensor<double> one = random_tensor<double>({1, 2, 6, 6}, rng);
    Tensor<double> x = concat<double>({one, one, one}, 0);
    Tensor<double> y = conv_block(train, x);
    const std::size_t per = y.numel() / 3;
    for (std::size_t i = 0; i < per; ++i) {
      CHECK(y[i] == y[per + i]);
      CHECK(y[i] == y[2 * per + i]);
    }
  }
  SUBCASE("stride 2 halves spatial dims") {
    Tensor<double> y = conv_block(train, random_tensor<double>({2, 2, 8, 8}, rng), 2);
    CHECK(y.shape() == Shape{2, 3, 4, 4});
  }
  SUBCASE("eval mode uses running statistics") {
    Tensor<double> x = random_tensor<double>({3, 2, 5, 5}, rng);
    conv_block(train, x);
    CHECK(store.buffer("blk.norm.running_mean")[0] != 0.0);
    const auto before = std::vector<double>(store.buffer("blk.norm.running_mean").data().begin(),
                                            store.buffer("blk.norm.running_mean").data().end());
    conv_block(LayerScope<double>(store, false, "blk"), x);
    CHECK(max_abs_diff(store.buffer("blk.norm.running_mean").data(), before) == 0.0);
  }
  SUBCASE("grad_check") {
    randomize(store, rng);
    Tensor<double> x = random_tensor<double>({3, 2, 5, 5}, rng);
    CHECK(check_block(store, x, [&] { return conv_block(train, x); }) < 1e-5);
  }
}

TEST_CASE("residual_block") {
  std::mt19937_64 rng(31);
  SUBCASE("zero residual branch with identity skip is relu(x)") {
    ParamStore<double> store;
    ParamBuilder<double> b(store, 1);
    declare_residual_block(b, "res", 3, 3, 1);
    CHECK_FALSE(store.has_parameter("res.proj.w"));
    randomize(store, rng);
    fill(store.parameter("res.conv2.w"), 0.0);
    fill(store.parameter("res.conv1.conv.w"), 0.0);
    Tensor<double> x = random_tensor<double>({2, 3, 4, 4}, rng);
    Tensor<double> y = residual_block(LayerScope<double>(store, true, "res"), x, 1);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
  }
  SUBCASE("freshly declared block is relu(x)") {
    ParamStore<double> store;
    ParamBuilder<double> b(store, 1);
    declare_residual_block(b, "res", 3, 3, 1);
    Tensor<double> x = random_tensor<double>({2, 3, 4, 4}, rng);
    Tensor<double> y = residual_block(LayerScope<double>(store, true, "res"), x, 1);
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
  }
  SUBCASE("stride 2 with channel change uses a projection and halves dims") {
    ParamStore<double> store;
    ParamBuilder<double> b(store, 1);
    declare_residual_block(b, "res", 2, 4, 2);
    CHECK(store.has_parameter("res.proj.w"));
    Tensor<double> y = residual_block(LayerScope<double>(store, true, "res"), random_tensor<double>({2, 2, 8, 8}, rng), 2);
    CHECK(y.shape() == Shape{2, 4, 4, 4});
  }
  SUBCASE("grad_check, identity and projected skips") {
    for (auto [in, out, stride] : {std::tuple{3, 3, 1}, std::tuple{2, 4, 2}}) {
      ParamStore<double> store;
      ParamBuilder<double> b(store, 2);
      declare_residual_block(b, "res", in, out, stride);
      randomize(store, rng);
      Tensor<double> x = random_tensor<double>({3, std::size_t(in), 6, 6}, rng);
      LayerScope<double> s(store, true, "res");
      CHECK(check_block(store, x, [&] { return residual_block(s, x, stride); }) < 1e-5);
    }
  }
}

TEST_CASE("multi_branch_block") {
  std::mt19937_64 rng(41);
  ParamStore<double> store;
  ParamBuilder<double> b(store, 4);
  declare_multi_branch_block(b, "mix", 8);
  LayerScope<double> s(store, true, "mix");
  CHECK(multi_branch_width(8) == 2);
  CHECK(store.parameter("mix.project.w").shape() == Shape{8, 6, 1, 1});

  SUBCASE("all branch weights zero gives relu(x)") {
    randomize(store, rng);
    for (auto& [path, t] : store.parameters()) {
      if (path.find(".w") != std::string::npos) fill(t, 0.0);
    }
    Tensor<double> x = random_tensor<double>({2, 8, 4, 4}, rng);
    Tensor<double> y = multi_branch_block(s, x);
    CHECK(y.shape() == x.shape());
    for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y[i] == std::max(0.0, x[i]));
  }
  SUBCASE("output channel count equals input channel count") {
    randomize(store, rng);
    Tensor<double> y = multi_branch_block(s, random_tensor<double>({2, 8, 5, 5}, rng));
    CHECK(y.shape() == Shape{2, 8, 5, 5});
  }
  SUBCASE("grad_check") {
    randomize(store, rng);
    Tensor<double> x = random_tensor<double>({2, 8, 4, 4}, rng);
    CHECK(check_block(store, x, [&] { return multi_branch_block(s, x); }) < 1e-5);
  }
}

TEST_CASE("layer_norm block") {
  ParamStore<double> store;
  ParamBuilder<double> b(store, 0);
  declare_layer_norm(b, "ln", 2);
  LayerScope<double> s(store, false, "ln");
  SUBCASE("constant vector maps to the shift") {
    Tensor<double> y = layer_norm(s, Tensor<double>({1, 2}, {4.0, 4.0}));
    CHECK(y[0] == 0.0);
    CHECK(y[1] == 0.0);
  }
  SUBCASE("[1,3] maps to about [-1,1]") {
    Tensor<double> y = layer_norm(s, Tensor<double>({1, 2}, {1.0, 3.0}));
    CHECK(y[0] == doctest::Approx(-1.0).epsilon(1e-3));
    CHECK(y[1] == doctest::Approx(1.0).epsilon(1e-3));
  }
  SUBCASE("grad_check") {
    ParamStore<double> big;
    ParamBuilder<double> bb(big, 0);
    declare_layer_norm(bb, "ln", 6);
    std::mt19937_64 rng(51);
    randomize(big, rng, 0.5, 1.5);
    Tensor<double> x = random_tensor<double>({3, 4, 6}, rng);
    LayerScope<double> bs(big, false, "ln");
    CHECK(check_block(big, x, [&] { return layer_norm(bs, x); }) < 1e-5);
  }
}

TEST_CASE("attention config validation") {
  CHECK_THROWS_AS(AttentionConfig(10, 4), std::invalid_argument);
  CHECK_THROWS_AS(AttentionConfig(8, 0), std::invalid_argument);
  AttentionConfig cfg(128, 4);
  CHECK(cfg.head_dim() == 32);
}

TEST_CASE("cross_attention") {
  std::mt19937_64 rng(61);
  const AttentionConfig cfg(8, 2);
  ParamStore<double> store;
  ParamBuilder<double> b(store, 9);
  declare_cross_attention(b, "xattn", cfg);
  LayerScope<double> s(store, false, "xattn");
  const Tensor<double> q = random_tensor<double>({2, 5, 8}, rng);

  SUBCASE("a single key gives Wo(Wv kv) for every query token") {
    Tensor<double> kv = random_tensor<double>({2, 1, 8}, rng);
    Tensor<double> ctx = attention_context(s, q, kv, cfg);
    Tensor<double> direct = matmul(matmul(kv, store.parameter("xattn.wv")), store.parameter("xattn.wo"));
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t j = 0; j < 8; ++j) CHECK(ctx[(bi * 5 + t) * 8 + j] == doctest::Approx(direct[bi * 8 + j]).epsilon(1e-12));
  }
  SUBCASE("identical key tokens match the single-key case") {
    Tensor<double> one = random_tensor<double>({2, 1, 8}, rng);
    Tensor<double> many = concat<double>({one, one, one, one}, 1);
    Tensor<double> a = cross_attention(s, q, one, cfg);
    Tensor<double> c = cross_attention(s, q, many, cfg);
    CHECK(max_abs_diff(a.data(), c.data()) < 1e-12);
  }
  SUBCASE("matches a naive per-head loop") {
    Tensor<double> kv = random_tensor<double>({2, 7, 8}, rng);
    Tensor<double> ctx = attention_context(s, q, kv, cfg);
    CHECK(max_abs_diff(ctx.data(), naive_attention_context(q, kv, store, "xattn", 2)) < 1e-5);
    Tensor<double> out = cross_attention(s, q, kv, cfg);
    CHECK(out.shape() == q.shape());
  }
  SUBCASE("invariant under permutation of key/value tokens") {
    Tensor<double> kv = random_tensor<double>({2, 6, 8}, rng);
    std::vector<std::size_t> perm{4, 0, 5, 2, 1, 3};
    Tensor<double> shuffled({2, 6, 8});
    for (std::size_t bi = 0; bi < 2; ++bi)
      for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t j = 0; j < 8; ++j) shuffled[(bi * 6 + t) * 8 + j] = kv[(bi * 6 + perm[t]) * 8 + j];
    Tensor<double> a = cross_attention(s, q, kv, cfg);
    Tensor<double> c = cross_attention(s, q, shuffled, cfg);
    CHECK(max_abs_diff(a.data(), c.data()) < 1e-6);
  }
  SUBCASE("logits scale with one over sqrt(head_dim)") {
    // Tie a d=8 single-head layer to a d=4 single-head layer by duplicating
    // tokens and using block-diagonal projections: the raw dot product
    // doubles, so scaled logits grow by 2 / sqrt(2) = sqrt(2).
    const AttentionConfig small(4, 1), wide(8, 1);
    ParamStore<double> s4, s8;
    ParamBuilder<double> b4(s4, 1), b8(s8, 1);
    declare_cross_attention(b4, "a", small);
    declare_cross_attention(b8, "a", wide);
    for (const char* name : {"a.wq", "a.wk"}) {
      auto& w8 = s8.parameter(name);
      fill(w8, 0.0);
      const auto& w4 = s4.parameter(name);
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 4; ++j) w8[i * 8 + j] = w8[(i + 4) * 8 + j + 4] = w4[i * 4 + j];
    }
    Tensor<double> q4 = random_tensor<double>({1, 3, 4}, rng), k4 = random_tensor<double>({1, 5, 4}, rng);
    Tensor<double> q8 = concat<double>({q4, q4}, 2), k8 = concat<double>({k4, k4}, 2);
    Tensor<double> l4 = attention_logits(LayerScope<double>(s4, false, "a"), q4, k4, small);
    Tensor<double> l8 = attention_logits(LayerScope<double>(s8, false, "a"), q8, k8, wide);
    REQUIRE(l4.shape() == Shape{1, 1, 3, 5});
    for (std::size_t i = 0; i < l4.numel(); ++i) CHECK(l8[i] == doctest::Approx(std::sqrt(2.0) * l4[i]).epsilon(1e-12));
  }
  SUBCASE("rejects mismatched token shapes") {
    CHECK_THROWS_AS(cross_attention(s, q, random_tensor<double>({2, 3, 6}, rng), cfg), ShapeError);
    CHECK_THROWS_AS(cross_attention(s, q, random_tensor<double>({1, 3, 8}, rng), cfg), ShapeError);
  }
  SUBCASE("grad_check") {
    randomize(store, rng);
    Tensor<double> kv = random_tensor<double>({2, 4, 8}, rng);
    Tensor<double> qq = q.clone();
    CHECK(check_block(store, qq, [&] { return cross_attention(s, qq, kv, cfg); }) < 1e-5);
    CHECK(check_block(store, kv, [&] { return cross_attention(s, qq, kv, cfg); }) < 1e-5);
  }
}

TEST_CASE("fcn_fusion") {
  std::mt19937_64 rng(71);
  ParamStore<double> store;
  ParamBuilder<double> b(store, 2);
  declare_fcn_fusion(b, "fuse", 6);
  LayerScope<double> s(store, false, "fuse");
  Tensor<double> face = random_tensor<double>({3, 6}, rng), eyes = random_tensor<double>({3, 6}, rng);
  SUBCASE("zero weights and biases give zero") {
    for (auto& [path, t] : store.parameters()) fill(t, 0.0);
    Tensor<double> y = fcn_fusion(s, face, eyes);
    CHECK(y.shape() == Shape{3, 6});
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("rejects mismatched inputs") {
    CHECK_THROWS_AS(fcn_fusion(s, face, random_tensor<double>({3, 5}, rng)), ShapeError);
  }
  SUBCASE("grad_check") {
    Tensor<double> eyes2 = eyes.clone();
    CHECK(check_block(store, face, [&] { return fcn_fusion(s, face, eyes2); }) < 1e-5);
    CHECK(check_block(store, eyes2, [&] { return fcn_fusion(s, face, eyes2); }) < 1e-5);
  }
}

TEST_CASE("mlp_head") {
  std::mt19937_64 rng(81);
  ParamStore<double> store;
  ParamBuilder<double> b(store, 2);
  declare_mlp_head(b, "head", 8);
  LayerScope<double> s(store, false, "head");
  CHECK(store.parameter("head.fc1.w").shape() == Shape{8, 4});
  Tensor<double> x = random_tensor<double>({5, 8}, rng);
  SUBCASE("zero weights give the zero vector") {
    for (auto& [path, t] : store.parameters()) fill(t, 0.0);
    Tensor<double> y = mlp_head(s, x);
    CHECK(y.shape() == Shape{5, 3});
    for (double v : y.data()) CHECK(v == 0.0);
  }
  SUBCASE("grad_check") { CHECK(check_block(store, x, [&] { return mlp_head(s, x); }) < 1e-5); }
}

TEST_CASE("every block maps inputs in [-10, 10] to finite outputs") {
  std::mt19937_64 rng(91);
  ParamStore<float> store;
  ParamBuilder<float> b(store, 5);
  const AttentionConfig cfg(16, 4);
  declare_linear(b, "lin", 16, 16);
  declare_conv_block(b, "cb", ConvSpec{4, 8, 3, 1});
  declare_residual_block(b, "res", 4, 8, 2);
  declare_multi_branch_block(b, "mix", 4);
  declare_layer_norm(b, "ln", 16);
  declare_cross_attention(b, "xattn", cfg);
  declare_fcn_fusion(b, "fuse", 16);
  declare_mlp_head(b, "head", 16);
  randomize(store, rng, -1.0, 1.0);
  for (int trial = 0; trial < 5; ++trial) {
    for (bool training : {true, false}) {
      LayerScope<float> root(store, training);
      Tensor<float> img = random_tensor<float>({2, 4, 8, 8}, rng, -10, 10);
      Tensor<float> vec = random_tensor<float>({3, 16}, rng, -10, 10);
      Tensor<float> tok = random_tensor<float>({3, 5, 16}, rng, -10, 10);
      Tensor<float> kv = random_tensor<float>({3, 7, 16}, rng, -10, 10);
      CHECK(all_finite(linear(root.child("lin"), vec)));
      CHECK(all_finite(conv_block(root.child("cb"), img)));
      CHECK(all_finite(residual_block(root.child("res"), img, 2)));
      CHECK(all_finite(multi_branch_block(root.child("mix"), img)));
      CHECK(all_finite(layer_norm(root.child("ln"), tok)));
      CHECK(all_finite(cross_attention(root.child("xattn"), tok, kv, cfg)));
      CHECK(all_finite(fcn_fusion(root.child("fuse"), vec, vec)));
      CHECK(all_finite(mlp_head(root.child("head"), vec)));
    }
  }
}
