#pragma once

// Run configuration: sectioned `key = value` files, command-line overrides,
// task-dependent defaults, and the resolved echo.

#include <algorithm>
#include <charconv>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "ukan/data.hpp"
#include "ukan/diffusion.hpp"
#include "ukan/model.hpp"

namespace ukan {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct TrainConfig {
  struct Run {
    std::string task = "segment";  // segment | diffuse
    std::uint64_t seed = 0;
    std::string output_dir = "runs/ukan";
    std::size_t epochs = 0;        // 0: 400 for segment, 1000 for diffuse
    std::string dtype = "f32";     // f32 | f64
    std::string resume;            // checkpoint to continue training from
    std::string checkpoint;        // for eval/generate; empty: <output_dir>/best.ukan
  } run;
  struct Model {
    std::string profile = "base";  // small | base | large
    std::vector<std::size_t> conv_channels;  // empty: from profile
    std::vector<std::size_t> kan_dims;       // empty: from profile
    std::size_t layers_per_block = 3;
    std::size_t patch_stride = 2;
    std::string block_kind = "kan";  // one kind, or 2K comma-separated
    std::string mlp_activation = "silu";
    std::size_t grid_size = 5;
    std::size_t spline_order = 3;
    double grid_min = -1.0;
    double grid_max = 1.0;
    std::size_t time_embed_dim = 128;
    double bn_momentum = 0.1;
    double bn_eps = 1e-5;
    double ln_eps = 1e-6;
  } model;
  struct Data {
    std::string root;
    std::string manifest;  // empty: <root>/manifest.tsv, built if missing
    double split_ratio = 0.8;
    std::size_t height = 256;
    std::size_t width = 256;
    std::size_t channels = 3;
    std::string augment = "auto";  // auto | full | flips | none
    bool arbitrary_angle = false;
  } data;
  struct Optim {
    std::size_t batch_size = 8;
    double lr = 1e-4;
    double lr_min = 1e-5;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
  } optim;
  struct Loss {
    double bce_weight = 0.5;
    double dice_weight = 1.0;
    double dice_smooth = 1.0;
  } loss;
  struct Diffusion {
    std::size_t timesteps = 1000;
    double beta_start = 1e-4;
    double beta_end = 0.02;
  } diffusion;
  struct Generate {
    std::size_t num_samples = 2048;
    std::size_t batch_size = 8;
    std::uint64_t seed = 0;
    std::string out_dir;  // empty: <output_dir>/samples
  } generate;
  struct Eval {
    std::string split = "val";
    double threshold = 0.5;
  } eval;

  struct Key {
    std::string name;
    std::string help;
    std::function<void(TrainConfig&, const std::string&)> set;
    std::function<std::string(const TrainConfig&)> get;
  };

  static const std::vector<Key>& keys();

  bool diffuse() const { return run.task == "diffuse"; }

  void set(const std::string& key, const std::string& value) {
    for (const auto& k : keys()) {
      if (k.name == key) {
        k.set(*this, value);
        return;
      }
    }
    throw ConfigError("config: unknown key '" + key + "'");
  }

  std::string get(const std::string& key) const {
    for (const auto& k : keys())
      if (k.name == key) return k.get(*this);
    throw ConfigError("config: unknown key '" + key + "'");
  }

  /// Parses `[section]` headers and `key = value` lines; `#` and `;` start
  /// comments. Keys outside a section are errors.
  void load_text(const std::string& text, const std::string& source = "<config>") {
    std::istringstream in(text);
    std::string line, section;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      const auto where = source + ":" + std::to_string(n);
      if (const auto c = line.find_first_of("#;"); c != std::string::npos) line.erase(c);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        if (line.back() != ']') throw ConfigError(where + ": malformed section header");
        section = trim(line.substr(1, line.size() - 2));
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
      if (section.empty()) throw ConfigError(where + ": key outside a [section]");
      const auto key = section + "." + trim(line.substr(0, eq));
      try {
        set(key, trim(line.substr(eq + 1)));
      } catch (const ConfigError& e) {
        throw ConfigError(where + ": " + e.what());
      }
    }
  }

  void load_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("config: cannot open '" + path.string() + "'");
    std::stringstream ss;
    ss << in.rdbuf();
    load_text(ss.str(), path.string());
  }

  /// Expands task-dependent defaults and validates everything that can be
  /// checked before compute starts.
  void resolve() {
    if (run.task != "segment" && run.task != "diffuse")
      throw ConfigError("config: run.task must be segment or diffuse, got '" + run.task + "'");
    if (run.dtype != "f32" && run.dtype != "f64")
      throw ConfigError("config: run.dtype must be f32 or f64, got '" + run.dtype + "'");
    if (run.epochs == 0) run.epochs = diffuse() ? 1000 : 400;
    if (model.conv_channels.empty() || model.kan_dims.empty()) {
      UkanConfig p;
      try {
        p = UkanConfig::profile(model.profile);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: model.profile: ") + e.what());
      }
      if (model.conv_channels.empty()) model.conv_channels = p.conv_channels;
      if (model.kan_dims.empty()) model.kan_dims = p.kan_dims;
    }
    if (data.augment == "auto") data.augment = diffuse() ? "flips" : "full";
    if (data.augment != "full" && data.augment != "flips" && data.augment != "none")
      throw ConfigError("config: data.augment must be auto, full, flips or none");
    if (data.channels != 1 && data.channels != 3)
      throw ConfigError("config: data.channels must be 1 or 3");
    if (data.manifest.empty() && !data.root.empty())
      data.manifest = (std::filesystem::path(data.root) / "manifest.tsv").string();
    if (!(data.split_ratio > 0 && data.split_ratio <= 1))
      throw ConfigError("config: data.split_ratio must be in (0, 1]");
    if (optim.batch_size == 0) throw ConfigError("config: optim.batch_size must be >= 1");
    if (!(optim.lr > 0) || !(optim.lr_min >= 0) || optim.lr_min > optim.lr)
      throw ConfigError("config: need 0 <= optim.lr_min <= optim.lr and optim.lr > 0");
    if (!(optim.beta1 >= 0 && optim.beta1 < 1 && optim.beta2 >= 0 && optim.beta2 < 1 && optim.eps > 0))
      throw ConfigError("config: Adam betas must be in [0, 1) and eps positive");
    if (eval.split != "train" && eval.split != "val")
      throw ConfigError("config: eval.split must be train or val");
    if (generate.batch_size == 0) throw ConfigError("config: generate.batch_size must be >= 1");
    if (generate.out_dir.empty())
      generate.out_dir = (std::filesystem::path(run.output_dir) / "samples").string();
    if (run.checkpoint.empty())
      run.checkpoint = (std::filesystem::path(run.output_dir) / "best.ukan").string();
    UkanConfig mc;
    try {
      mc = model_config();
      mc.validate();
    } catch (const ConfigError&) {
      throw;
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    const std::size_t mult = mc.size_multiple();
    if (data.height % mult != 0 || data.width % mult != 0) {
      throw ConfigError("config: data.height and data.width must be multiples of " +
                        std::to_string(mult) + " for this model");
    }
    try {
      (void)NoiseSchedule::linear(diffusion.timesteps, diffusion.beta_start, diffusion.beta_end);
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("config: diffusion: ") + e.what());
    }
  }

  UkanConfig model_config() const {
    UkanConfig c;
    c.conv_channels = model.conv_channels;
    c.kan_dims = model.kan_dims;
    c.layers_per_block = model.layers_per_block;
    c.patch_stride = model.patch_stride;
    c.in_channels = data.channels;
    c.out_channels = diffuse() ? data.channels : 1;
    for (const auto& k : split_list(model.block_kind)) c.block_kinds.push_back(parse_block_kind(k));
    c.spline.grid_size = model.grid_size;
    c.spline.order = model.spline_order;
    c.spline.grid_min = model.grid_min;
    c.spline.grid_max = model.grid_max;
    c.mlp_activation = parse_activation(model.mlp_activation);
    c.time_conditioned = diffuse();
    c.time_embed_dim = model.time_embed_dim;
    c.norm.bn_momentum = model.bn_momentum;
    c.norm.bn_eps = model.bn_eps;
    c.norm.ln_eps = model.ln_eps;
    return c;
  }

  data::LoadOptions load_options() const {
    return {data.height, data.width, data.channels, !diffuse()};
  }

  data::AugmentOptions augment_options() const {
    data::AugmentOptions a;
    a.hflip = a.vflip = data.augment != "none";
    a.rotate = data.augment == "full";
    a.arbitrary_angle = data.arbitrary_angle;
    return a;
  }

  /// Every key with its current value, grouped by section.
  std::string to_ini() const {
    std::ostringstream out;
    std::string section;
    for (const auto& k : keys()) {
      const auto dot = k.name.find('.');
      const auto sec = k.name.substr(0, dot);
      if (sec != section) {
        if (!section.empty()) out << '\n';
        out << '[' << sec << "]\n";
        section = sec;
      }
      out << k.name.substr(dot + 1) << " = " << k.get(*this) << '\n';
    }
    return out.str();
  }

  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r\n") - b + 1);
  }

  static std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
      item = trim(item);
      if (!item.empty()) out.push_back(item);
    }
    return out;
  }
};

namespace detail {

template <class V>
V parse_config_value(const std::string& s) {
  if constexpr (std::is_same_v<V, std::string>) {
    return s;
  } else if constexpr (std::is_same_v<V, bool>) {
    if (s == "true" || s == "1" || s == "yes" || s == "on") return true;
    if (s == "false" || s == "0" || s == "no" || s == "off") return false;
    throw ConfigError("cannot parse '" + s + "' as a boolean");
  } else if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
    std::vector<std::size_t> out;
    for (const auto& item : TrainConfig::split_list(s)) out.push_back(parse_config_value<std::size_t>(item));
    return out;
  } else {
    V v{};
    const auto* end = s.data() + s.size();
    auto [ptr, ec] = std::from_chars(s.data(), end, v);
    if (ec != std::errc() || ptr != end || s.empty())
      throw ConfigError("cannot parse '" + s + "' as a number");
    return v;
  }
}

template <class V>
std::string format_config_value(const V& v) {
  if constexpr (std::is_same_v<V, std::string>) {
    return v;
  } else if constexpr (std::is_same_v<V, bool>) {
    return v ? "true" : "false";
  } else if constexpr (std::is_same_v<V, std::vector<std::size_t>>) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
  } else {
    // Shortest text that parses back to the same value.
    char buf[64];
    auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
  }
}

template <class F>
TrainConfig::Key config_key(std::string name, std::string help, F ref) {
  using V = std::remove_reference_t<decltype(ref(std::declval<TrainConfig&>()))>;
  TrainConfig::Key k;
  k.name = name;
  k.help = std::move(help);
  k.set = [ref, name](TrainConfig& c, const std::string& s) {
    try {
      ref(c) = parse_config_value<V>(s);
    } catch (const ConfigError& e) {
      throw ConfigError("config: key '" + name + "': " + e.what());
    }
  };
  k.get = [ref](const TrainConfig& c) {
    return format_config_value<V>(ref(const_cast<TrainConfig&>(c)));
  };
  return k;
}

}  // namespace detail

inline const std::vector<TrainConfig::Key>& TrainConfig::keys() {
  using detail::config_key;
  using C = TrainConfig;
  static const std::vector<Key> k = {
      config_key("run.task", "segment or diffuse", [](C& c) -> auto& { return c.run.task; }),
      config_key("run.seed", "master seed", [](C& c) -> auto& { return c.run.seed; }),
      config_key("run.output_dir", "directory for logs and checkpoints", [](C& c) -> auto& { return c.run.output_dir; }),
      config_key("run.epochs", "0 picks 400 (segment) or 1000 (diffuse)", [](C& c) -> auto& { return c.run.epochs; }),
      config_key("run.dtype", "f32 or f64", [](C& c) -> auto& { return c.run.dtype; }),
      config_key("run.resume", "checkpoint to resume training from", [](C& c) -> auto& { return c.run.resume; }),
      config_key("run.checkpoint", "checkpoint for eval/generate", [](C& c) -> auto& { return c.run.checkpoint; }),
      config_key("model.profile", "small, base or large", [](C& c) -> auto& { return c.model.profile; }),
      config_key("model.conv_channels", "C1,..,CL (overrides profile)", [](C& c) -> auto& { return c.model.conv_channels; }),
      config_key("model.kan_dims", "D1,..,DK (overrides profile)", [](C& c) -> auto& { return c.model.kan_dims; }),
      config_key("model.layers_per_block", "token layers per block", [](C& c) -> auto& { return c.model.layers_per_block; }),
      config_key("model.patch_stride", "patch embedding stride", [](C& c) -> auto& { return c.model.patch_stride; }),
      config_key("model.block_kind", "kan, mlp or identity; one value or 2K", [](C& c) -> auto& { return c.model.block_kind; }),
      config_key("model.mlp_activation", "linear, relu or silu", [](C& c) -> auto& { return c.model.mlp_activation; }),
      config_key("model.grid_size", "spline intervals", [](C& c) -> auto& { return c.model.grid_size; }),
      config_key("model.spline_order", "spline degree", [](C& c) -> auto& { return c.model.spline_order; }),
      config_key("model.grid_min", "spline grid start", [](C& c) -> auto& { return c.model.grid_min; }),
      config_key("model.grid_max", "spline grid end", [](C& c) -> auto& { return c.model.grid_max; }),
      config_key("model.time_embed_dim", "sinusoidal embedding width", [](C& c) -> auto& { return c.model.time_embed_dim; }),
      config_key("model.bn_momentum", "BatchNorm running-stat momentum", [](C& c) -> auto& { return c.model.bn_momentum; }),
      config_key("model.bn_eps", "BatchNorm epsilon", [](C& c) -> auto& { return c.model.bn_eps; }),
      config_key("model.ln_eps", "LayerNorm epsilon", [](C& c) -> auto& { return c.model.ln_eps; }),
      config_key("data.root", "dataset root with images/ and masks/", [](C& c) -> auto& { return c.data.root; }),
      config_key("data.manifest", "manifest path", [](C& c) -> auto& { return c.data.manifest; }),
      config_key("data.split_ratio", "training fraction", [](C& c) -> auto& { return c.data.split_ratio; }),
      config_key("data.height", "resize height", [](C& c) -> auto& { return c.data.height; }),
      config_key("data.width", "resize width", [](C& c) -> auto& { return c.data.width; }),
      config_key("data.channels", "image channels (1 or 3)", [](C& c) -> auto& { return c.data.channels; }),
      config_key("data.augment", "auto, full, flips or none", [](C& c) -> auto& { return c.data.augment; }),
      config_key("data.arbitrary_angle", "rotate by any angle instead of right angles", [](C& c) -> auto& { return c.data.arbitrary_angle; }),
      config_key("optim.batch_size", "training batch size", [](C& c) -> auto& { return c.optim.batch_size; }),
      config_key("optim.lr", "initial learning rate", [](C& c) -> auto& { return c.optim.lr; }),
      config_key("optim.lr_min", "cosine floor", [](C& c) -> auto& { return c.optim.lr_min; }),
      config_key("optim.beta1", "Adam beta1", [](C& c) -> auto& { return c.optim.beta1; }),
      config_key("optim.beta2", "Adam beta2", [](C& c) -> auto& { return c.optim.beta2; }),
      config_key("optim.eps", "Adam epsilon", [](C& c) -> auto& { return c.optim.eps; }),
      config_key("loss.bce_weight", "BCE weight", [](C& c) -> auto& { return c.loss.bce_weight; }),
      config_key("loss.dice_weight", "Dice weight", [](C& c) -> auto& { return c.loss.dice_weight; }),
      config_key("loss.dice_smooth", "Dice smoothing", [](C& c) -> auto& { return c.loss.dice_smooth; }),
      config_key("diffusion.timesteps", "T", [](C& c) -> auto& { return c.diffusion.timesteps; }),
      config_key("diffusion.beta_start", "first beta", [](C& c) -> auto& { return c.diffusion.beta_start; }),
      config_key("diffusion.beta_end", "last beta", [](C& c) -> auto& { return c.diffusion.beta_end; }),
      config_key("generate.num_samples", "images to generate", [](C& c) -> auto& { return c.generate.num_samples; }),
      config_key("generate.batch_size", "sampling batch size", [](C& c) -> auto& { return c.generate.batch_size; }),
      config_key("generate.seed", "sampling seed", [](C& c) -> auto& { return c.generate.seed; }),
      config_key("generate.out_dir", "sample directory", [](C& c) -> auto& { return c.generate.out_dir; }),
      config_key("eval.split", "train or val", [](C& c) -> auto& { return c.eval.split; }),
      config_key("eval.threshold", "probability threshold", [](C& c) -> auto& { return c.eval.threshold; }),
  };
  return k;
}

}  // namespace ukan
