#include "crossgaze/model/crossgaze.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>
#include <stdexcept>

#include "crossgaze/tensor/errors.hpp"

namespace crossgaze::model {

using nn::ConvSpec;
using nn::LayerScope;
using nn::ParamBuilder;
using nn::ParamStore;

namespace {
constexpr std::size_t kEyeStrides[kStages] = {2, 2, 2, 1};

std::string stage(std::size_t i) { return "stage" + std::to_string(i); }

std::string join_widths(const std::vector<std::size_t>& w) {
  std::string out;
  for (std::size_t i = 0; i < w.size(); ++i) out += (i ? "," : "") + std::to_string(w[i]);
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& text) {
  std::uint64_t v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size()) {
    throw std::invalid_argument("config field " + key + ": '" + text + "' is not an unsigned integer");
  }
  return v;
}

std::vector<std::size_t> parse_widths(const std::string& key, const std::string& text) {
  std::vector<std::size_t> out;
  std::size_t start = 0;
  while (start <= text.size()) {
    const std::size_t comma = std::min(text.find(',', start), text.size());
    out.push_back(parse_uint(key, text.substr(start, comma - start)));
    start = comma + 1;
  }
  return out;
}
}  // namespace

std::string_view fusion_name(Fusion f) {
  switch (f) {
    case Fusion::none:
      return "none";
    case Fusion::fcn:
      return "fcn";
    case Fusion::xattn:
      return "xattn";
  }
  return "?";
}

Fusion parse_fusion(std::string_view name) {
  for (Fusion f : {Fusion::none, Fusion::fcn, Fusion::xattn}) {
    if (fusion_name(f) == name) return f;
  }
  throw std::invalid_argument("unknown fusion '" + std::string(name) + "' (expected none, fcn, xattn)");
}

void CrossGazeConfig::validate() const {
  auto check_widths = [&](const std::vector<std::size_t>& w, const char* which) {
    if (w.size() != kStages) {
      throw std::invalid_argument(std::string(which) + " needs " + std::to_string(kStages) + " stage widths");
    }
    for (std::size_t v : w) {
      if (v == 0) throw std::invalid_argument(std::string(which) + " widths must be positive");
    }
    if (w.back() != feature_dim) {
      throw std::invalid_argument(std::string(which) + " final width " + std::to_string(w.back()) +
                                  " must equal feature_dim " + std::to_string(feature_dim));
    }
  };
  if (feature_dim == 0) throw std::invalid_argument("feature_dim must be positive");
  check_widths(face_widths, "face encoder");
  if (uses_eyes()) check_widths(eye_widths, "eye encoder");
  if (fusion == Fusion::xattn) attention();
}

std::string CrossGazeConfig::to_text() const {
  std::ostringstream out;
  out << "fusion=" << fusion_name(fusion) << '\n'
      << "feature_dim=" << feature_dim << '\n'
      << "heads=" << heads << '\n'
      << "face_widths=" << join_widths(face_widths) << '\n'
      << "eye_widths=" << join_widths(eye_widths) << '\n'
      << "pooled_query=" << (pooled_query ? 1 : 0) << '\n'
      << "seed=" << seed << '\n';
  return out.str();
}

CrossGazeConfig CrossGazeConfig::from_fields(const std::map<std::string, std::string>& fields) {
  auto get = [&](const std::string& key) -> const std::string& {
    auto it = fields.find(key);
    if (it == fields.end()) throw std::invalid_argument("config field " + key + " missing");
    return it->second;
  };
  CrossGazeConfig c;
  c.fusion = parse_fusion(get("fusion"));
  c.feature_dim = parse_uint("feature_dim", get("feature_dim"));
  c.heads = parse_uint("heads", get("heads"));
  c.face_widths = parse_widths("face_widths", get("face_widths"));
  c.eye_widths = parse_widths("eye_widths", get("eye_widths"));
  c.pooled_query = parse_uint("pooled_query", get("pooled_query")) != 0;
  c.seed = parse_uint("seed", get("seed"));
  c.validate();
  return c;
}

template <typename T>
ParamStore<T> init_parameters(const CrossGazeConfig& config) {
  config.validate();
  ParamStore<T> store;
  ParamBuilder<T> b(store, config.seed);
  const std::size_t d = config.feature_dim;

  const auto& fw = config.face_widths;
  nn::declare_conv_block(b, "face_enc.stem", ConvSpec{3, fw[0], 3, 2});
  for (std::size_t i = 0; i < kStages; ++i) {
    const std::string p = "face_enc." + stage(i);
    nn::declare_multi_branch_block(b, p + ".mix", fw[i]);
    if (i + 1 < kStages) nn::declare_conv_block(b, p + ".down", ConvSpec{fw[i], fw[i + 1], 3, 2});
  }

  if (config.uses_eyes()) {
    const auto& ew = config.eye_widths;
    nn::declare_conv_block(b, "eye_enc.stem", ConvSpec{3, ew[0], 3, 2});
    for (std::size_t i = 0; i < kStages; ++i) {
      nn::declare_residual_block(b, "eye_enc." + stage(i), i == 0 ? ew[0] : ew[i - 1], ew[i], kEyeStrides[i]);
    }
    b.parameter("eye_enc.identity", {2, d}, nn::Init::fan_in_uniform, d);
  }

  if (config.fusion == Fusion::fcn) nn::declare_fcn_fusion(b, "fusion", d);
  if (config.fusion == Fusion::xattn) nn::declare_cross_attention(b, "fusion", config.attention());
  nn::declare_mlp_head(b, "head", d);
  return store;
}

std::map<std::string, Shape> parameter_shapes(const CrossGazeConfig& config) {
  std::map<std::string, Shape> out;
  const ParamStore<float> store = init_parameters<float>(config);
  for (const auto& [path, t] : store.parameters()) out.emplace(path, t.shape());
  return out;
}

std::map<std::string, Shape> buffer_shapes(const CrossGazeConfig& config) {
  std::map<std::string, Shape> out;
  const ParamStore<float> store = init_parameters<float>(config);
  for (const auto& [path, t] : store.buffers()) out.emplace(path, t.shape());
  return out;
}

template <typename T>
void validate_parameters(const CrossGazeConfig& config, const ParamStore<T>& params) {
  auto compare = [](const std::map<std::string, Shape>& expect, const typename ParamStore<T>::Map& got,
                    const char* kind) {
    for (const auto& [path, shape] : expect) {
      auto it = got.find(path);
      if (it == got.end()) throw ShapeError(std::string(kind) + " " + path + " is missing");
      if (it->second.shape() != shape) {
        throw ShapeError(std::string(kind) + " " + path + " has shape " + shape_string(it->second.shape()) +
                         ", expected " + shape_string(shape));
      }
    }
    for (const auto& [path, t] : got) {
      if (!expect.count(path)) throw ShapeError(std::string(kind) + " " + path + " is not part of this model");
    }
  };
  compare(parameter_shapes(config), params.parameters(), "parameter");
  compare(buffer_shapes(config), params.buffers(), "buffer");
}

namespace {

void check_image_batch(const Shape& s, const char* what) {
  if (s.size() != 4 || s[1] != 3 || s[2] != 64 || s[3] != 64) {
    throw ShapeError(std::string(what) + " must be [B,3,64,64], got " + shape_string(s));
  }
}

// [B,C,H,W] -> [B,H*W,C]
template <typename T>
Tensor<T> to_tokens(const Tensor<T>& x) {
  const std::size_t b = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  return permute(reshape(x, {b, c, hw}), {0, 2, 1});
}

}  // namespace

template <typename T>
FaceFeatures<T> face_encoder_forward(const LayerScope<T>& root, const CrossGazeConfig& config, const Tensor<T>& face) {
  check_image_batch(face.shape(), "face batch");
  const LayerScope<T> enc = root.child("face_enc");
  Tensor<T> x = nn::conv_block(enc.child("stem"), face, 2);
  for (std::size_t i = 0; i < kStages; ++i) {
    const LayerScope<T> s = enc.child(stage(i));
    x = nn::multi_branch_block(s.child("mix"), x);
    if (i + 1 < kStages) x = nn::conv_block(s.child("down"), x, 2);
  }
  if (x.dim(1) != config.feature_dim || x.dim(2) * x.dim(3) != kFaceTokens) {
    throw ShapeError("face encoder produced " + shape_string(x.shape()));
  }
  Tensor<T> tokens = to_tokens(x);
  Tensor<T> pooled = reduce(ReduceOp::mean, tokens, {1});
  return {tokens, pooled};
}

template <typename T>
Tensor<T> eye_encoder_forward(const LayerScope<T>& root, const CrossGazeConfig& config, const Tensor<T>& left,
                              const Tensor<T>& right) {
  check_image_batch(left.shape(), "left eye batch");
  check_image_batch(right.shape(), "right eye batch");
  if (left.dim(0) != right.dim(0)) throw ShapeError("left and right eye batches differ in size");
  const std::size_t b = left.dim(0), d = config.feature_dim;
  const LayerScope<T> enc = root.child("eye_enc");
  Tensor<T> x = nn::conv_block(enc.child("stem"), concat<T>({left, right}, 0), 2);
  for (std::size_t i = 0; i < kStages; ++i) x = nn::residual_block(enc.child(stage(i)), x, kEyeStrides[i]);
  if (x.dim(1) != d || x.dim(2) != 4 || x.dim(3) != 4) throw ShapeError("eye encoder produced " + shape_string(x.shape()));
  // 2x2 average pooling of the 4x4 map: split each spatial axis into (cell, offset).
  x = reduce(ReduceOp::mean, reshape(x, {2 * b, d, 2, 2, 2, 2}), {3, 5});  // [2B,d,2,2]
  Tensor<T> tokens = to_tokens(x);                                           // [2B,4,d]
  tokens = permute(reshape(tokens, {2, b, kTokensPerEye, d}), {1, 0, 2, 3});  // [B,2,4,d]
  tokens = add(tokens, reshape(enc.param("identity"), {2, 1, d}));
  return reshape(tokens, {b, 2 * kTokensPerEye, d});
}

template <typename T>
Tensor<T> model_forward(ParamStore<T>& params, const CrossGazeConfig& config, const Tensor<T>& face,
                        const std::optional<Tensor<T>>& left, const std::optional<Tensor<T>>& right, bool training) {
  const LayerScope<T> root(params, training);
  const FaceFeatures<T> f = face_encoder_forward(root, config, face);
  Tensor<T> fused = f.pooled;
  if (config.uses_eyes()) {
    if (!left || !right) throw std::invalid_argument("fusion " + std::string(fusion_name(config.fusion)) + " needs eye images");
    if (left->dim(0) != face.dim(0)) throw ShapeError("eye and face batches differ in size");
    const Tensor<T> eyes = eye_encoder_forward(root, config, *left, *right);
    if (config.fusion == Fusion::fcn) {
      fused = nn::fcn_fusion(root.child("fusion"), f.pooled, reduce(ReduceOp::mean, eyes, {1}));
    } else {
      const Tensor<T> queries =
          config.pooled_query ? reshape(f.pooled, {face.dim(0), 1, config.feature_dim}) : f.tokens;
      fused = reduce(ReduceOp::mean, nn::cross_attention(root.child("fusion"), queries, eyes, config.attention()), {1});
    }
  }
  return nn::mlp_head(root.child("head"), fused);
}

#define CROSSGAZE_INSTANTIATE(T)                                                                              \
  template ParamStore<T> init_parameters<T>(const CrossGazeConfig&);                                          \
  template void validate_parameters<T>(const CrossGazeConfig&, const ParamStore<T>&);                         \
  template FaceFeatures<T> face_encoder_forward<T>(const LayerScope<T>&, const CrossGazeConfig&, const Tensor<T>&); \
  template Tensor<T> eye_encoder_forward<T>(const LayerScope<T>&, const CrossGazeConfig&, const Tensor<T>&,   \
                                            const Tensor<T>&);                                                \
  template Tensor<T> model_forward<T>(ParamStore<T>&, const CrossGazeConfig&, const Tensor<T>&,               \
                                      const std::optional<Tensor<T>>&, const std::optional<Tensor<T>>&, bool);

CROSSGAZE_INSTANTIATE(float)
CROSSGAZE_INSTANTIATE(double)

}  // namespace crossgaze::model
