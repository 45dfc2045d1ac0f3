#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "dragsaw/geometry.hpp"
#include "dragsaw/image.hpp"
#include "dragsaw/ops.hpp"
#include "dragsaw/uafs.hpp"

namespace dragsaw {

/// A named array as stored in checkpoints.
struct NamedArray {
  std::string name;
  Shape shape;
  std::vector<double> values;
};

struct SegNetConfig {
  std::size_t in_channels = 1;
  std::size_t num_classes = 2;
  std::vector<std::size_t> encoder_channels{16, 32, 64, 64, 64};
  /// Block names carrying a UAFS gate: "enc1".."encD", "dec1".."decD".
  std::set<std::string> uafs_layers = all_layer_names(5);
  std::set<int> pdcr_taps{2, 3, 4};
  std::uint64_t seed = 0;
  bool detach_uncertainty = false;

  std::size_t depth() const { return encoder_channels.size(); }
  static std::set<std::string> all_layer_names(std::size_t depth);
  void validate() const;
};

struct ForwardOptions {
  /// Encoder blocks whose gated output is returned; defaults to the config's taps.
  std::optional<std::set<int>> taps;
  bool collect_uncertainty = false;
};

struct ForwardResult {
  Tensor logits;                             // [B,M,H,W]
  std::map<int, Tensor> taps;                // block -> [B,C,h,w]
  std::map<std::string, Tensor> uncertainty;  // layer name -> [B,1,h,w]
};

/// Small encoder-decoder. Encoder block b: 3x3/s1 conv + ReLU, 3x3/s2 conv +
/// ReLU, optional UAFS gate. Decoder block b: nearest 2x upsample, concat with
/// the encoder output of block b-1 (the input image for b = 1), 3x3 conv +
/// ReLU, optional gate. A final 1x1 conv gives class logits.
class SegNet {
 public:
  explicit SegNet(SegNetConfig config);

  /// Rebuilds a network from checkpoint arrays, inferring the architecture
  /// from parameter names and shapes.
  static SegNet from_state(const std::vector<NamedArray>& state);

  ForwardResult forward(const Tensor& input, Mode mode, const ForwardOptions& options = {});

  const SegNetConfig& config() const { return config_; }
  std::vector<Tensor> parameters() const;
  std::vector<std::pair<std::string, Tensor>> named_parameters() const;
  std::size_t parameter_count() const;

  /// Parameters and batchnorm running statistics, in a fixed order.
  std::vector<NamedArray> state() const;
  void load_state(const std::vector<NamedArray>& state);

  /// Convolution stack of the encoder (two layers per block).
  ConvStackSpec encoder_stack(ImageSize image) const;
  /// Receptive-field geometry of encoder block `block`'s output.
  LayerGeometry block_geometry(int block) const;
  const std::map<int, LayerGeometry>& tap_geometries() const { return tap_geometries_; }

  std::vector<std::string> uafs_layer_order() const;

 private:
  struct EncoderBlock {
    Tensor conv_a_weight, conv_a_bias, conv_b_weight, conv_b_bias;
    std::optional<UafsHead> gate;
  };
  struct DecoderBlock {
    Tensor conv_weight, conv_bias;
    std::optional<UafsHead> gate;
  };

  SegNetConfig config_;
  std::vector<EncoderBlock> encoder_;
  std::vector<DecoderBlock> decoder_;  // decoder_[b-1] is block b
  Tensor head_weight_, head_bias_;
  std::map<int, LayerGeometry> tap_geometries_;

  // Calls on_tensor(name, Tensor&) / on_stat(name, vector&) for every
  // stored array in checkpoint order.
  template <typename Self, typename OnTensor, typename OnStat>
  static void visit_state(Self& self, OnTensor&& on_tensor, OnStat&& on_stat);
};

/// Per-pixel argmax over classes; ties go to the lowest class index.
std::vector<LabelImage> predict_mask(const Tensor& logits);

}  // namespace dragsaw
