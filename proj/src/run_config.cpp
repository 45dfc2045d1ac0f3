#include "dragsaw/run_config.hpp"

#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "dragsaw/errors.hpp"
#include "dragsaw/metrics.hpp"
#include "dragsaw/pgm.hpp"
#include "dragsaw/random.hpp"

namespace dragsaw {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("bad value for " + key + ": '" + v + "' is not a number");
  }
  return out;
}

std::uint64_t parse_uint(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
    throw ConfigError("bad value for " + key + ": '" + v + "' is not a non-negative integer");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad value for " + key + ": '" + v + "' is not true/false");
}

template <typename C>
std::string join(const C& items) {
  std::string out;
  for (const auto& item : items) {
    if (!out.empty()) out += ",";
    if constexpr (std::is_same_v<std::decay_t<decltype(item)>, std::string>) {
      out += item;
    } else {
      out += std::to_string(item);
    }
  }
  return out;
}

struct Key {
  const char* name;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"seed", [](RunConfig& c, const std::string& v) { c.seed = parse_uint("seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"lr", [](RunConfig& c, const std::string& v) { c.lr = parse_real("lr", v); },
       [](const RunConfig& c) { return format_real(c.lr); }},
      {"weight_decay", [](RunConfig& c, const std::string& v) { c.adam.weight_decay = parse_real("weight_decay", v); },
       [](const RunConfig& c) { return format_real(c.adam.weight_decay); }},
      {"adam.beta1", [](RunConfig& c, const std::string& v) { c.adam.beta1 = parse_real("adam.beta1", v); },
       [](const RunConfig& c) { return format_real(c.adam.beta1); }},
      {"adam.beta2", [](RunConfig& c, const std::string& v) { c.adam.beta2 = parse_real("adam.beta2", v); },
       [](const RunConfig& c) { return format_real(c.adam.beta2); }},
      {"adam.eps", [](RunConfig& c, const std::string& v) { c.adam.eps = parse_real("adam.eps", v); },
       [](const RunConfig& c) { return format_real(c.adam.eps); }},
      {"epochs", [](RunConfig& c, const std::string& v) { c.epochs = parse_uint("epochs", v); },
       [](const RunConfig& c) { return std::to_string(c.epochs); }},
      {"batch_size", [](RunConfig& c, const std::string& v) { c.batch_size = parse_uint("batch_size", v); },
       [](const RunConfig& c) { return std::to_string(c.batch_size); }},
      {"fraction", [](RunConfig& c, const std::string& v) { c.fraction = parse_real("fraction", v); },
       [](const RunConfig& c) { return format_real(c.fraction); }},
      {"pdcr.lambda", [](RunConfig& c, const std::string& v) { c.pdcr.lambda = parse_real("pdcr.lambda", v); },
       [](const RunConfig& c) { return format_real(c.pdcr.lambda); }},
      {"pdcr.tau", [](RunConfig& c, const std::string& v) { c.pdcr.tau = parse_real("pdcr.tau", v); },
       [](const RunConfig& c) { return format_real(c.pdcr.tau); }},
      {"pdcr.n", [](RunConfig& c, const std::string& v) { c.pdcr.samples = parse_uint("pdcr.n", v); },
       [](const RunConfig& c) { return std::to_string(c.pdcr.samples); }},
      {"pdcr.taps",
       [](RunConfig& c, const std::string& v) {
         c.pdcr.tap_blocks.clear();
         for (const auto& item : split_list(v))
           c.pdcr.tap_blocks.insert(static_cast<int>(parse_uint("pdcr.taps", item)));
       },
       [](const RunConfig& c) { return join(c.pdcr.tap_blocks); }},
      {"pdcr.variant",
       [](RunConfig& c, const std::string& v) { c.pdcr.variant = parse_affinity_variant(v); },
       [](const RunConfig& c) { return std::string(to_string(c.pdcr.variant)); }},
      {"pdcr.denominator",
       [](RunConfig& c, const std::string& v) { c.pdcr.denominator = parse_ratio_denominator(v); },
       [](const RunConfig& c) { return std::string(to_string(c.pdcr.denominator)); }},
      {"pdcr.include_diagonal",
       [](RunConfig& c, const std::string& v) { c.pdcr.include_diagonal = parse_bool("pdcr.include_diagonal", v); },
       [](const RunConfig& c) { return std::string(c.pdcr.include_diagonal ? "true" : "false"); }},
      {"net.encoder_channels",
       [](RunConfig& c, const std::string& v) {
         const bool all_gated = c.net.uafs_layers == SegNetConfig::all_layer_names(c.net.depth());
         c.net.encoder_channels.clear();
         for (const auto& item : split_list(v)) c.net.encoder_channels.push_back(parse_uint("net.encoder_channels", item));
         // "all" follows the new depth.
         if (all_gated) c.net.uafs_layers = SegNetConfig::all_layer_names(c.net.depth());
       },
       [](const RunConfig& c) { return join(c.net.encoder_channels); }},
      {"net.uafs_layers",
       [](RunConfig& c, const std::string& v) {
         c.net.uafs_layers.clear();
         if (v == "all") {
           c.net.uafs_layers = SegNetConfig::all_layer_names(c.net.depth());
         } else if (v != "none") {
           for (const auto& item : split_list(v)) c.net.uafs_layers.insert(item);
         }
       },
       [](const RunConfig& c) { return c.net.uafs_layers.empty() ? std::string("none") : join(c.net.uafs_layers); }},
      {"net.detach_uncertainty",
       [](RunConfig& c, const std::string& v) { c.net.detach_uncertainty = parse_bool("net.detach_uncertainty", v); },
       [](const RunConfig& c) { return std::string(c.net.detach_uncertainty ? "true" : "false"); }},
      {"data.dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; },
       [](const RunConfig& c) { return c.data_dir; }},
      {"data.train_count", [](RunConfig& c, const std::string& v) { c.data.count = parse_uint("data.train_count", v); },
       [](const RunConfig& c) { return std::to_string(c.data.count); }},
      {"data.test_count", [](RunConfig& c, const std::string& v) { c.test_count = parse_uint("data.test_count", v); },
       [](const RunConfig& c) { return std::to_string(c.test_count); }},
      {"data.size", [](RunConfig& c, const std::string& v) { c.data.size = parse_uint("data.size", v); },
       [](const RunConfig& c) { return std::to_string(c.data.size); }},
      {"data.classes", [](RunConfig& c, const std::string& v) { c.data.num_classes = parse_uint("data.classes", v); },
       [](const RunConfig& c) { return std::to_string(c.data.num_classes); }},
      {"data.seed", [](RunConfig& c, const std::string& v) { c.data.seed = parse_uint("data.seed", v); },
       [](const RunConfig& c) { return std::to_string(c.data.seed); }},
      {"data.min_blobs", [](RunConfig& c, const std::string& v) { c.data.min_blobs = parse_uint("data.min_blobs", v); },
       [](const RunConfig& c) { return std::to_string(c.data.min_blobs); }},
      {"data.max_blobs", [](RunConfig& c, const std::string& v) { c.data.max_blobs = parse_uint("data.max_blobs", v); },
       [](const RunConfig& c) { return std::to_string(c.data.max_blobs); }},
      {"data.min_offset", [](RunConfig& c, const std::string& v) { c.data.min_offset = parse_real("data.min_offset", v); },
       [](const RunConfig& c) { return format_real(c.data.min_offset); }},
      {"data.max_offset", [](RunConfig& c, const std::string& v) { c.data.max_offset = parse_real("data.max_offset", v); },
       [](const RunConfig& c) { return format_real(c.data.max_offset); }},
      {"data.min_sigma", [](RunConfig& c, const std::string& v) { c.data.min_sigma = parse_real("data.min_sigma", v); },
       [](const RunConfig& c) { return format_real(c.data.min_sigma); }},
      {"data.max_sigma", [](RunConfig& c, const std::string& v) { c.data.max_sigma = parse_real("data.max_sigma", v); },
       [](const RunConfig& c) { return format_real(c.data.max_sigma); }},
      {"data.noise", [](RunConfig& c, const std::string& v) { c.data.noise_sigma = parse_real("data.noise", v); },
       [](const RunConfig& c) { return format_real(c.data.noise_sigma); }},
      {"data.texture", [](RunConfig& c, const std::string& v) { c.data.texture = parse_bool("data.texture", v); },
       [](const RunConfig& c) { return std::string(c.data.texture ? "true" : "false"); }},
  };
  return table;
}

}  // namespace

void RunConfig::set(const std::string& key, const std::string& value) {
  for (const auto& k : keys()) {
    if (key == k.name) {
      k.set(*this, value);
      return;
    }
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> RunConfig::entries() const {
  std::vector<std::pair<std::string, std::string>> out;
  for (const auto& k : keys()) out.emplace_back(k.name, k.get(*this));
  return out;
}

std::string RunConfig::serialize() const {
  std::string out;
  for (const auto& [k, v] : entries()) out += k + " = " + v + "\n";
  return out;
}

void RunConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("lr must be > 0");
  if (!(adam.weight_decay >= 0.0)) throw ConfigError("weight_decay must be >= 0");
  if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0) || !(adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
    throw ConfigError("adam betas must be in [0,1)");
  }
  if (!(adam.eps > 0.0)) throw ConfigError("adam.eps must be > 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(fraction > 0.0 && fraction <= 1.0)) throw ConfigError("fraction must be in (0,1]");
  pdcr.validate();
  data.validate();
  network_config().validate();
  const std::size_t multiple = std::size_t{1} << net.depth();
  if (data.size % multiple != 0) {
    throw ConfigError("data.size " + std::to_string(data.size) + " must be divisible by " + std::to_string(multiple));
  }
}

SegNetConfig RunConfig::network_config() const {
  SegNetConfig cfg = net;
  cfg.num_classes = data.num_classes;
  cfg.pdcr_taps = pdcr_enabled() ? pdcr.tap_blocks : std::set<int>{};
  cfg.seed = derive_seed(seed, {0x6e6574});
  return cfg;
}

std::string RunConfig::label() const {
  const bool p = pdcr_enabled();
  const bool u = !net.uafs_layers.empty();
  if (p && u) return "pdcr+uafs";
  if (p) return "pdcr";
  if (u) return "uafs";
  return "baseline";
}

void apply_config_text(RunConfig& cfg, const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(line_no) + ": expected 'key = value'");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
}

void apply_config_file(RunConfig& cfg, const std::string& path) { apply_config_text(cfg, read_file(path), path); }

RunConfig default_run_config() {
  RunConfig cfg;
  if (const char* env = std::getenv("DRAGSAW_SEED"); env != nullptr && *env != '\0') {
    cfg.seed = parse_uint("DRAGSAW_SEED", env);
  }
  return cfg;
}

}  // namespace dragsaw
