#pragma once

// Multi-channel shifted-window transformer for RUL regression.
//
//   hor image ─ conv3x3/ReLU/maxpool ─┐
//                                     ├ concat ─ linear embed ─ 4 stages ─ pool ─ head ─ RUL
//   ver image ─ conv3x3/ReLU/maxpool ─┘
//
// Each stage runs depth[i] blocks alternating plain and cyclically shifted
// window attention, then (except the last) merges 2x2 token neighborhoods.

#include <array>
#include <cstddef>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "mcsformer/features.hpp"
#include "mcsformer/tensor.hpp"

namespace mcsformer::model {

inline constexpr std::size_t kStages = 4;

enum class Preset { Paper, Desk, Custom };

std::string to_string(Preset p);
Preset preset_from_string(const std::string& s);

struct ModelConfig {
  int image_side = 64;
  int conv_channels = 32;
  int embed_dim_base = 96;  // stage dims C, 2C, 4C, 8C
  std::array<int, kStages> depths{2, 2, 6, 2};
  std::array<int, kStages> heads{3, 6, 12, 24};
  int window_size = 4;
  double mlp_ratio = 4.0;
  double dropout_p = 0.3;
  std::array<int, 2> head_hidden{256, 64};
  Preset preset = Preset::Paper;

  /// C = 96 so the last stage is 768 wide; heads 3/6/12/24; depths 2/2/6/2.
  static ModelConfig paper();
  /// C = 16, one block per stage, 32x32 images giving a 16x16 token grid,
  /// head 32/16, dropout 0.1.
  static ModelConfig desk();

  int grid_side() const { return image_side / 2; }
  int stage_side(std::size_t stage) const { return grid_side() >> stage; }
  int stage_dim(std::size_t stage) const { return embed_dim_base << stage; }
  /// Window clamped to the stage's grid side.
  int stage_window(std::size_t stage) const;
  int mlp_hidden(std::size_t stage) const;

  /// Fails fast (ConfigMismatch, OddGrid, IndivisibleGrid, InvalidProbability)
  /// on any geometry that would break mid-forward.
  void validate() const;
};

/// Analytic parameter census for a configuration.
std::size_t parameter_count(const ModelConfig& cfg);

class ModelParams {
 public:
  void add(const std::string& name, ad::Tensor t);
  const ad::Tensor& get(const std::string& name) const;
  bool contains(const std::string& name) const { return index_.count(name) > 0; }

  const std::vector<std::string>& names() const { return names_; }
  const std::vector<ad::Tensor>& tensors() const { return tensors_; }
  std::vector<ad::Tensor>& tensors() { return tensors_; }
  std::size_t scalar_count() const;

  void zero_grad();
  /// Deep copy; the copy's leaves are fresh tensors.
  ModelParams clone(bool requires_grad = true) const;

  std::uint64_t init_seed = 0;

 private:
  std::vector<std::string> names_;
  std::vector<ad::Tensor> tensors_;
  std::map<std::string, std::size_t> index_;
};

/// Truncated normal (std 0.02, cut at 2 std) for transformer projections,
/// merge layers and position-bias tables; He scaling sqrt(2 / fan_in) for
/// layers feeding a ReLU (stem kernels and the two hidden head layers);
/// zeros for biases and norm offsets; ones for norm gains.
ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed);

/// Checks names and shapes against the configuration (ConfigMismatch).
void check_params(const ModelParams& params, const ModelConfig& cfg);

struct StageGeometry {
  int side = 0;
  int dim = 0;
  int heads = 0;
  int window = 0;
};

StageGeometry stage_geometry(const ModelConfig& cfg, std::size_t stage);

/// Attention probabilities captured during a forward pass, one entry per
/// block, shape [N * windows * heads, T, T].
struct AttentionTrace {
  std::vector<ad::Tensor> weights;
  std::vector<bool> shifted;
};

/// conv(pad 1) -> ReLU -> 2x2 maxpool. x is [N, 1, S, S]; prefix names the
/// stem ("stem.hor" / "stem.ver").
ad::Tensor conv_stem(const ModelParams& p, const std::string& prefix, const ad::Tensor& x);

/// Channel concatenation of both stems followed by per-position linear
/// embedding and layer norm. Returns tokens [N, g, g, C].
ad::Tensor fuse(const ModelParams& p, const ad::Tensor& hor_feat, const ad::Tensor& ver_feat);

/// Row permutation taking natural token order [N, S, S] to window order
/// [N, windows, T] after a cyclic shift of `shift` (up-left).
std::vector<std::size_t> window_partition_index(std::size_t batch, int side, int window,
                                                int shift);

/// Additive mask [windows, T, T]: 0 where both tokens come from the same
/// region of the shifted grid, -inf otherwise.
std::vector<double> shifted_window_mask(int side, int window, int shift);

/// Multi-head self-attention inside each window. tokens is [N, S, S, D];
/// prefix names the block ("stages.0.blocks.1").
ad::Tensor window_attention(const ModelParams& p, const std::string& prefix,
                            const ad::Tensor& tokens, const StageGeometry& g, bool shifted,
                            AttentionTrace* trace = nullptr);

/// Pre-norm transformer block: attention and GELU MLP, both residual.
ad::Tensor swin_block(const ModelParams& p, const std::string& prefix, const ad::Tensor& tokens,
                      const StageGeometry& g, bool shifted, AttentionTrace* trace = nullptr);

/// [N, S, S, D] -> [N, S/2, S/2, 2D]. Throws OddGrid for odd S.
ad::Tensor patch_merging(const ModelParams& p, const std::string& prefix,
                         const ad::Tensor& tokens);

/// hor, ver: [N, 1, S, S]. Returns [N, 1] unclamped predictions.
ad::Tensor forward(const ModelParams& p, const ModelConfig& cfg, const ad::Tensor& hor,
                   const ad::Tensor& ver, bool training, std::uint64_t dropout_key = 0,
                   AttentionTrace* trace = nullptr);

/// Pooled feature vector [N, 8C] before the regression head.
ad::Tensor backbone(const ModelParams& p, const ModelConfig& cfg, const ad::Tensor& hor,
                    const ad::Tensor& ver, AttentionTrace* trace = nullptr);

struct ImageBatch {
  ad::Tensor hor;
  ad::Tensor ver;
};

ImageBatch make_batch(const std::vector<features::LabeledSample>& samples,
                      const std::vector<std::size_t>& indices);

/// Inference over a dataset, no dropout, in chunks of `batch` samples.
std::vector<double> predict(const ModelParams& p, const ModelConfig& cfg,
                            const std::vector<features::LabeledSample>& samples,
                            std::size_t batch = 16);

}  // namespace mcsformer::model
