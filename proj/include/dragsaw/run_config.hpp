#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "dragsaw/dataset.hpp"
#include "dragsaw/network.hpp"
#include "dragsaw/optim.hpp"
#include "dragsaw/pdcr.hpp"

namespace dragsaw {

struct RunConfig {
  std::uint64_t seed = 42;
  double lr = 1e-3;
  AdamOptions adam;
  std::size_t epochs = 20;
  std::size_t batch_size = 8;
  double fraction = 1.0;
  PdcrConfig pdcr;
  /// encoder_channels, uafs_layers and detach_uncertainty are read from here;
  /// classes, taps and seed are filled in by network_config().
  SegNetConfig net;
  SyntheticConfig data;       // data.count is the training set size
  std::size_t test_count = 100;
  std::string data_dir;       // empty: generate the synthetic set in memory

  void validate() const;
  SegNetConfig network_config() const;
  bool pdcr_enabled() const { return pdcr.lambda > 0.0 && !pdcr.tap_blocks.empty(); }
  /// "baseline", "pdcr", "uafs" or "pdcr+uafs".
  std::string label() const;

  /// Applies one `key = value` setting; unknown keys throw ConfigError naming the key.
  void set(const std::string& key, const std::string& value);
  /// Every key with its current value, in a fixed order.
  std::vector<std::pair<std::string, std::string>> entries() const;
  std::string serialize() const;
};

/// Applies a flat `key = value` file (`#` starts a comment) on top of cfg.
void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source = "<config>");
void apply_config_file(RunConfig& cfg, const std::string& path);

/// Defaults, then DRAGSAW_SEED from the environment if set.
RunConfig default_run_config();

}  // namespace dragsaw
