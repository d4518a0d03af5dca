#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crossgaze/nn/layers.hpp"

namespace crossgaze::model {

enum class Fusion { none, fcn, xattn };

std::string_view fusion_name(Fusion f);
/// Accepts "none", "fcn", "xattn"; throws std::invalid_argument otherwise.
Fusion parse_fusion(std::string_view name);

struct CrossGazeConfig {
  Fusion fusion = Fusion::xattn;
  std::size_t feature_dim = 128;
  std::size_t heads = 4;
  std::vector<std::size_t> face_widths{16, 32, 64, 128};
  std::vector<std::size_t> eye_widths{16, 32, 64, 128};
  /// Attend with the pooled face vector as a single query instead of the 16 spatial tokens.
  bool pooled_query = false;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument when the fields are inconsistent.
  void validate() const;
  bool uses_eyes() const { return fusion != Fusion::none; }
  nn::AttentionConfig attention() const { return nn::AttentionConfig(feature_dim, heads); }

  /// "key=value" lines, one per field, in a fixed order.
  std::string to_text() const;
  static CrossGazeConfig from_fields(const std::map<std::string, std::string>& fields);

  bool operator==(const CrossGazeConfig&) const = default;
};

inline constexpr std::size_t kStages = 4;
inline constexpr std::size_t kFaceTokens = 16;
inline constexpr std::size_t kTokensPerEye = 4;

/// Declares every parameter of the configured variant, seeded by config.seed.
/// Only the parts the fusion mode uses are declared.
template <typename T>
nn::ParamStore<T> init_parameters(const CrossGazeConfig& config);

/// Parameter path -> shape for a config.
std::map<std::string, Shape> parameter_shapes(const CrossGazeConfig& config);
std::map<std::string, Shape> buffer_shapes(const CrossGazeConfig& config);

/// Throws ShapeError naming the first missing, unexpected, or misshaped path.
template <typename T>
void validate_parameters(const CrossGazeConfig& config, const nn::ParamStore<T>& params);

template <typename T>
struct FaceFeatures {
  Tensor<T> tokens;  // [B,16,d]
  Tensor<T> pooled;  // [B,d]
};

/// face [B,3,64,64]: stem, then four multi-branch stages with stride-2
/// downsampling between them, ending on a 4x4 map.
template <typename T>
FaceFeatures<T> face_encoder_forward(const nn::LayerScope<T>& root, const CrossGazeConfig& config,
                                     const Tensor<T>& face);

/// left/right [B,3,64,64] through one shared residual encoder; each eye's 4x4
/// map is average-pooled to 2x2, giving 4 tokens per eye plus an eye-identity
/// embedding (row 0 left, row 1 right). Returns [B,8,d], left tokens first.
template <typename T>
Tensor<T> eye_encoder_forward(const nn::LayerScope<T>& root, const CrossGazeConfig& config, const Tensor<T>& left,
                              const Tensor<T>& right);

/// Raw (unnormalized) gaze prediction [B,3]. Eye images are required unless
/// fusion is none, in which case they are ignored.
template <typename T>
Tensor<T> model_forward(nn::ParamStore<T>& params, const CrossGazeConfig& config, const Tensor<T>& face,
                        const std::optional<Tensor<T>>& left, const std::optional<Tensor<T>>& right, bool training);

}  // namespace crossgaze::model
