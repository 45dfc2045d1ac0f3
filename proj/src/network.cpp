#include "dragsaw/network.hpp"

#include <algorithm>
#include <random>
#include <string>

#include "dragsaw/errors.hpp"
#include "dragsaw/init.hpp"
#include "dragsaw/random.hpp"

namespace dragsaw {

namespace {

std::string enc_name(std::size_t b) { return "enc" + std::to_string(b); }
std::string dec_name(std::size_t b) { return "dec" + std::to_string(b); }

}  // namespace

std::set<std::string> SegNetConfig::all_layer_names(std::size_t depth) {
  std::set<std::string> names;
  for (std::size_t b = 1; b <= depth; ++b) {
    names.insert(enc_name(b));
    names.insert(dec_name(b));
  }
  return names;
}

void SegNetConfig::validate() const {
  if (in_channels < 1) throw ConfigError("net.in_channels must be >= 1");
  if (num_classes < 2) throw ConfigError("net.num_classes must be >= 2");
  if (encoder_channels.empty()) throw ConfigError("net.encoder_channels must not be empty");
  for (auto c : encoder_channels)
    if (c < 1) throw ConfigError("net.encoder_channels entries must be >= 1");
  const auto valid = all_layer_names(depth());
  for (const auto& name : uafs_layers) {
    if (!valid.contains(name)) throw ConfigError("net.uafs_layers: unknown block '" + name + "'");
  }
  for (int tap : pdcr_taps) {
    if (tap < 1 || static_cast<std::size_t>(tap) > depth()) {
      throw ConfigError("pdcr.taps: block " + std::to_string(tap) + " is not an encoder block (1.." +
                        std::to_string(depth()) + ")");
    }
  }
}

SegNet::SegNet(SegNetConfig config) : config_(std::move(config)) {
  config_.validate();
  const std::size_t depth = config_.depth();
  const auto& ch = config_.encoder_channels;
  // Trunk and gates draw from separate streams so toggling gates leaves the
  // trunk initialisation untouched.
  std::mt19937_64 trunk_rng(derive_seed(config_.seed, {1}));
  std::mt19937_64 gate_rng(derive_seed(config_.seed, {2}));

  std::size_t in = config_.in_channels;
  for (std::size_t b = 1; b <= depth; ++b) {
    EncoderBlock block;
    const std::size_t out = ch[b - 1];
    block.conv_a_weight = glorot_uniform({out, in, 3, 3}, trunk_rng);
    block.conv_a_bias = Tensor::zeros({out}, true);
    block.conv_b_weight = glorot_uniform({out, out, 3, 3}, trunk_rng);
    block.conv_b_bias = Tensor::zeros({out}, true);
    encoder_.push_back(std::move(block));
    in = out;
  }
  decoder_.resize(depth);
  for (std::size_t b = depth; b >= 1; --b) {
    const std::size_t up = ch[b - 1];
    const std::size_t skip = b == 1 ? config_.in_channels : ch[b - 2];
    const std::size_t out = b == 1 ? ch[0] : ch[b - 2];
    auto& block = decoder_[b - 1];
    block.conv_weight = glorot_uniform({out, up + skip, 3, 3}, trunk_rng);
    block.conv_bias = Tensor::zeros({out}, true);
  }
  head_weight_ = glorot_uniform({config_.num_classes, ch[0], 1, 1}, trunk_rng);
  head_bias_ = Tensor::zeros({config_.num_classes}, true);

  for (std::size_t b = 1; b <= depth; ++b) {
    if (config_.uafs_layers.contains(enc_name(b))) {
      encoder_[b - 1].gate = make_uafs_head(ch[b - 1], config_.num_classes, gate_rng);
    }
  }
  for (std::size_t b = depth; b >= 1; --b) {
    if (config_.uafs_layers.contains(dec_name(b))) {
      const std::size_t out = b == 1 ? ch[0] : ch[b - 2];
      decoder_[b - 1].gate = make_uafs_head(out, config_.num_classes, gate_rng);
    }
  }

  for (int tap : config_.pdcr_taps) tap_geometries_[tap] = block_geometry(tap);
}

ConvStackSpec SegNet::encoder_stack(ImageSize image) const {
  ConvStackSpec spec;
  spec.image_size = image;
  for (std::size_t b = 0; b < config_.depth(); ++b) {
    spec.layers.push_back({3, 1, 1});
    spec.layers.push_back({3, 2, 1});
  }
  return spec;
}

LayerGeometry SegNet::block_geometry(int block) const {
  if (block < 1 || static_cast<std::size_t>(block) > config_.depth()) {
    throw ConfigError("encoder block " + std::to_string(block) + " does not exist");
  }
  const std::size_t side = std::size_t{1} << config_.depth();
  return layer_geometry(encoder_stack({side, side}), 2 * static_cast<std::size_t>(block));
}

std::vector<std::string> SegNet::uafs_layer_order() const {
  std::vector<std::string> names;
  for (std::size_t b = 1; b <= config_.depth(); ++b)
    if (encoder_[b - 1].gate) names.push_back(enc_name(b));
  for (std::size_t b = config_.depth(); b >= 1; --b)
    if (decoder_[b - 1].gate) names.push_back(dec_name(b));
  return names;
}

ForwardResult SegNet::forward(const Tensor& input, Mode mode, const ForwardOptions& options) {
  const std::size_t depth = config_.depth();
  if (input.rank() != 4 || input.dim(1) != config_.in_channels) {
    throw ConfigError("network input must be [B," + std::to_string(config_.in_channels) + ",H,W], got " +
                      shape_str(input.shape()));
  }
  const std::size_t multiple = std::size_t{1} << depth;
  const std::size_t h = input.dim(2), w = input.dim(3);
  if (h % multiple != 0 || w % multiple != 0) {
    const std::size_t ph = (multiple - h % multiple) % multiple;
    const std::size_t pw = (multiple - w % multiple) % multiple;
    throw ConfigError("input " + std::to_string(h) + "x" + std::to_string(w) + " is not divisible by " +
                      std::to_string(multiple) + "; pad by " + std::to_string(ph) + " rows and " +
                      std::to_string(pw) + " columns");
  }
  const std::set<int>& taps = options.taps ? *options.taps : config_.pdcr_taps;
  for (int tap : taps) {
    if (tap < 1 || static_cast<std::size_t>(tap) > depth) {
      throw ConfigError("tap block " + std::to_string(tap) + " is not an encoder block");
    }
  }

  ForwardResult result;
  std::vector<Tensor> skips{input};
  Tensor cur = input;
  for (std::size_t b = 1; b <= depth; ++b) {
    auto& block = encoder_[b - 1];
    cur = relu(conv2d(cur, block.conv_a_weight, block.conv_a_bias, {1, 1}));
    cur = relu(conv2d(cur, block.conv_b_weight, block.conv_b_bias, {2, 1}));
    if (block.gate) {
      auto gate = uafs_gate(cur, *block.gate, mode, config_.detach_uncertainty);
      cur = std::move(gate.gated);
      if (options.collect_uncertainty) result.uncertainty[enc_name(b)] = std::move(gate.uncertainty);
    }
    if (taps.contains(static_cast<int>(b))) result.taps[static_cast<int>(b)] = cur;
    skips.push_back(cur);
  }
  for (std::size_t b = depth; b >= 1; --b) {
    auto& block = decoder_[b - 1];
    cur = concat_channels({upsample_nearest2x(cur), skips[b - 1]});
    cur = relu(conv2d(cur, block.conv_weight, block.conv_bias, {1, 1}));
    if (block.gate) {
      auto gate = uafs_gate(cur, *block.gate, mode, config_.detach_uncertainty);
      cur = std::move(gate.gated);
      if (options.collect_uncertainty) result.uncertainty[dec_name(b)] = std::move(gate.uncertainty);
    }
  }
  result.logits = conv2d(cur, head_weight_, head_bias_, {1, 0});
  return result;
}

template <typename Self, typename OnTensor, typename OnStat>
void SegNet::visit_state(Self& self, OnTensor&& on_tensor, OnStat&& on_stat) {
  auto visit_gate = [&](const std::string& prefix, auto& gate) {
    if (!gate) return;
    on_tensor(prefix + ".uafs.conv1.weight", gate->conv1_weight);
    on_tensor(prefix + ".uafs.conv1.bias", gate->conv1_bias);
    on_tensor(prefix + ".uafs.bn.gamma", gate->bn_gamma);
    on_tensor(prefix + ".uafs.bn.beta", gate->bn_beta);
    on_stat(prefix + ".uafs.bn.running_mean", gate->bn_state.running_mean);
    on_stat(prefix + ".uafs.bn.running_var", gate->bn_state.running_var);
    on_tensor(prefix + ".uafs.conv2.weight", gate->conv2_weight);
    on_tensor(prefix + ".uafs.conv2.bias", gate->conv2_bias);
  };
  const std::size_t depth = self.config_.depth();
  for (std::size_t b = 1; b <= depth; ++b) {
    auto& block = self.encoder_[b - 1];
    const std::string p = enc_name(b);
    on_tensor(p + ".conv_a.weight", block.conv_a_weight);
    on_tensor(p + ".conv_a.bias", block.conv_a_bias);
    on_tensor(p + ".conv_b.weight", block.conv_b_weight);
    on_tensor(p + ".conv_b.bias", block.conv_b_bias);
    visit_gate(p, block.gate);
  }
  for (std::size_t b = depth; b >= 1; --b) {
    auto& block = self.decoder_[b - 1];
    const std::string p = dec_name(b);
    on_tensor(p + ".conv.weight", block.conv_weight);
    on_tensor(p + ".conv.bias", block.conv_bias);
    visit_gate(p, block.gate);
  }
  on_tensor("head.weight", self.head_weight_);
  on_tensor("head.bias", self.head_bias_);
}

std::vector<std::pair<std::string, Tensor>> SegNet::named_parameters() const {
  std::vector<std::pair<std::string, Tensor>> out;
  visit_state(
      *this, [&](const std::string& name, const Tensor& t) { out.emplace_back(name, t); },
      [](const std::string&, const std::vector<double>&) {});
  return out;
}

std::vector<Tensor> SegNet::parameters() const {
  std::vector<Tensor> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

std::size_t SegNet::parameter_count() const {
  std::size_t total = 0;
  for (const auto& t : parameters()) total += t.numel();
  return total;
}

std::vector<NamedArray> SegNet::state() const {
  std::vector<NamedArray> out;
  visit_state(
      *this,
      [&](const std::string& name, const Tensor& t) {
        out.push_back({name, t.shape(), std::vector<double>(t.data().begin(), t.data().end())});
      },
      [&](const std::string& name, const std::vector<double>& stat) {
        out.push_back({name, Shape{stat.size()}, stat});
      });
  return out;
}

void SegNet::load_state(const std::vector<NamedArray>& state) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : state) by_name[a.name] = &a;
  std::size_t used = 0;
  auto find = [&](const std::string& name, const Shape& shape) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing '" + name + "'");
    if (it->second->shape != shape) {
      throw ConfigError("checkpoint entry '" + name + "' has shape " + shape_str(it->second->shape) + ", expected " +
                        shape_str(shape));
    }
    ++used;
    return *it->second;
  };
  visit_state(
      *this,
      [&](const std::string& name, Tensor& t) {
        const auto& a = find(name, t.shape());
        std::copy(a.values.begin(), a.values.end(), t.mutable_data().begin());
      },
      [&](const std::string& name, std::vector<double>& stat) { stat = find(name, Shape{stat.size()}).values; });
  if (used != state.size()) throw ConfigError("checkpoint has entries this network does not use");
}

SegNet SegNet::from_state(const std::vector<NamedArray>& state) {
  std::map<std::string, const NamedArray*> by_name;
  for (const auto& a : state) by_name[a.name] = &a;
  auto get = [&](const std::string& name) -> const NamedArray& {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw ConfigError("checkpoint is missing '" + name + "'");
    if (it->second->shape.size() != 4 && name.ends_with(".weight")) {
      throw ConfigError("checkpoint entry '" + name + "' is not a conv weight");
    }
    return *it->second;
  };
  SegNetConfig cfg;
  cfg.encoder_channels.clear();
  cfg.uafs_layers.clear();
  for (std::size_t b = 1; by_name.contains(enc_name(b) + ".conv_a.weight"); ++b) {
    cfg.encoder_channels.push_back(get(enc_name(b) + ".conv_a.weight").shape[0]);
  }
  if (cfg.encoder_channels.empty()) throw ConfigError("checkpoint holds no encoder blocks");
  cfg.in_channels = get("enc1.conv_a.weight").shape[1];
  cfg.num_classes = get("head.weight").shape[0];
  for (const auto& name : SegNetConfig::all_layer_names(cfg.encoder_channels.size())) {
    if (by_name.contains(name + ".uafs.conv1.weight")) cfg.uafs_layers.insert(name);
  }
  std::set<int> taps;
  for (int t : cfg.pdcr_taps)
    if (static_cast<std::size_t>(t) <= cfg.encoder_channels.size()) taps.insert(t);
  cfg.pdcr_taps = taps;
  SegNet net(cfg);
  net.load_state(state);
  return net;
}

std::vector<LabelImage> predict_mask(const Tensor& logits) {
  if (logits.rank() != 4) throw ConfigError("predict_mask expects [B,M,H,W]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1), h = logits.dim(2), w = logits.dim(3);
  const std::size_t plane = h * w;
  const auto v = logits.data();
  std::vector<LabelImage> out;
  for (std::size_t b = 0; b < batch; ++b) {
    LabelImage mask{h, w, std::vector<std::uint8_t>(plane, 0)};
    const double* base = v.data() + b * classes * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      std::size_t best = 0;
      for (std::size_t c = 1; c < classes; ++c)
        if (base[c * plane + i] > base[best * plane + i]) best = c;
      mask.labels[i] = static_cast<std::uint8_t>(best);
    }
    out.push_back(std::move(mask));
  }
  return out;
}

}  // namespace dragsaw
