#pragma once

// U-KAN: convolutional encoder stages, tokenized KAN stages, and a mirrored
// decoder with skip concatenation. The same network with time-conditioned
// token blocks and a C0-channel head serves as the diffusion noise predictor.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "ukan/kan.hpp"
#include "ukan/layers.hpp"
#include "ukan/module.hpp"
#include "ukan/nn_ops.hpp"
#include "ukan/ops.hpp"

namespace ukan {

enum class BlockKind { kan, mlp, identity };

inline std::string_view to_string(BlockKind k) {
  switch (k) {
    case BlockKind::kan: return "kan";
    case BlockKind::mlp: return "mlp";
    case BlockKind::identity: return "identity";
  }
  return "?";
}

inline BlockKind parse_block_kind(std::string_view s) {
  if (s == "kan") return BlockKind::kan;
  if (s == "mlp") return BlockKind::mlp;
  if (s == "identity") return BlockKind::identity;
  throw std::invalid_argument("unknown block kind '" + std::string(s) +
                              "' (expected kan, mlp or identity)");
}

inline Activation parse_activation(std::string_view s) {
  if (s == "linear") return Activation::linear;
  if (s == "relu") return Activation::relu;
  if (s == "silu") return Activation::silu;
  throw std::invalid_argument("unknown activation '" + std::string(s) + "'");
}

struct UkanConfig {
  std::vector<std::size_t> conv_channels{128, 160, 256};  // C_1..C_L
  std::vector<std::size_t> kan_dims{320, 512};            // D_1..D_K
  std::size_t layers_per_block = 3;                       // N
  std::size_t patch_stride = 2;
  std::size_t in_channels = 3;
  std::size_t out_channels = 1;
  // Token block kinds in network order: K encoder blocks, then K decoder
  // blocks. Empty means all KAN; a single entry applies everywhere.
  std::vector<BlockKind> block_kinds;
  SplineSpec spline;
  Activation mlp_activation = Activation::silu;
  bool time_conditioned = false;
  std::size_t time_embed_dim = 128;
  NormOptions norm;

  std::size_t num_conv_stages() const { return conv_channels.size(); }
  std::size_t num_tok_stages() const { return kan_dims.size(); }
  std::size_t num_levels() const { return num_conv_stages() + num_tok_stages(); }

  BlockKind kind_at(std::size_t position) const {
    if (block_kinds.empty()) return BlockKind::kan;
    if (block_kinds.size() == 1) return block_kinds[0];
    return block_kinds.at(position);
  }

  /// Input height and width must be multiples of this.
  std::size_t size_multiple() const {
    std::size_t m = std::size_t{1} << num_conv_stages();
    for (std::size_t k = 0; k < num_tok_stages(); ++k) m *= patch_stride;
    return m;
  }

  /// Channels of encoder level m: 0 is the input image, 1..L the conv stages,
  /// L+1..L+K the token stages.
  std::size_t level_channels(std::size_t m) const {
    if (m == 0) return in_channels;
    if (m <= num_conv_stages()) return conv_channels[m - 1];
    return kan_dims[m - num_conv_stages() - 1];
  }

  void validate() const {
    if (conv_channels.empty() || kan_dims.empty())
      throw std::invalid_argument("model: need at least one conv stage and one token stage");
    for (auto c : conv_channels)
      if (c == 0) throw std::invalid_argument("model: conv channel counts must be positive");
    for (auto d : kan_dims)
      if (d == 0) throw std::invalid_argument("model: kan dims must be positive");
    if (layers_per_block == 0) throw std::invalid_argument("model: layers_per_block must be >= 1");
    if (patch_stride == 0) throw std::invalid_argument("model: patch_stride must be >= 1");
    if (in_channels == 0 || out_channels == 0)
      throw std::invalid_argument("model: in/out channels must be positive");
    const std::size_t k2 = 2 * num_tok_stages();
    if (block_kinds.size() > 1 && block_kinds.size() != k2) {
      throw std::invalid_argument("model: block_kinds needs 1 or " + std::to_string(k2) +
                                  " entries, got " + std::to_string(block_kinds.size()));
    }
    if (time_conditioned && (time_embed_dim < 4 || time_embed_dim % 2 != 0))
      throw std::invalid_argument("model: time_embed_dim must be even and >= 4");
    spline.validate();
  }

  /// Named width profiles: small (64-96-128), base (128-160-256),
  /// large (256-320-512). Token dims follow D1 = 1.25 C3, D2 = 2 C3.
  static UkanConfig profile(std::string_view name) {
    UkanConfig c;
    if (name == "small") {
      c.conv_channels = {64, 96, 128};
      c.kan_dims = {160, 256};
    } else if (name == "base") {
      c.conv_channels = {128, 160, 256};
      c.kan_dims = {320, 512};
    } else if (name == "large") {
      c.conv_channels = {256, 320, 512};
      c.kan_dims = {640, 1024};
    } else {
      throw std::invalid_argument("unknown model profile '" + std::string(name) +
                                  "' (expected small, base or large)");
    }
    return c;
  }
};

/// 128-dim (by default) sinusoidal embedding of integer timesteps: the first
/// half holds sin(t f_i), the second cos(t f_i), f_i = 10000^(-i / (half - 1)).
template <class T>
Tensor<T> timestep_embedding(const std::vector<std::size_t>& t, std::size_t dim) {
  const std::size_t half = dim / 2;
  Tensor<T> e({t.size(), dim});
  auto v = e.data();
  for (std::size_t b = 0; b < t.size(); ++b)
    for (std::size_t i = 0; i < half; ++i) {
      const double f = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                static_cast<double>(half - 1));
      const double a = static_cast<double>(t[b]) * f;
      v[b * dim + i] = static_cast<T>(std::sin(a));
      v[b * dim + half + i] = static_cast<T>(std::cos(a));
    }
  return e;
}

/// (B, D, H, W) -> (B, H*W, D).
template <class T>
Tensor<T> map_to_tokens(const Tensor<T>& x) {
  if (x.rank() != 4) throw ShapeError("map_to_tokens: needs NCHW, got " + to_string(x.shape()));
  return reshape(permute(x, {0, 2, 3, 1}), {x.dim(0), x.dim(2) * x.dim(3), x.dim(1)});
}

/// (B, H*W, D) -> (B, D, H, W).
template <class T>
Tensor<T> tokens_to_map(const Tensor<T>& z, std::size_t h, std::size_t w) {
  if (z.rank() != 3 || z.dim(1) != h * w) {
    throw ShapeError("tokens_to_map: tokens " + to_string(z.shape()) + " do not fill " +
                     std::to_string(h) + "x" + std::to_string(w));
  }
  return permute(reshape(z, {z.dim(0), h, w, z.dim(2)}), {0, 3, 1, 2});
}

template <class T>
struct Tokenized {
  Tensor<T> tokens;  // (B, H*W, D)
  std::size_t h = 0, w = 0;
};

/// N token layers over the feature axis. Plain blocks follow every layer with
/// a depthwise 3x3 conv + BN + ReLU on the token map, then add the block input
/// back and layer-normalize. Time-conditioned blocks drop the depthwise path
/// and the residual and add a projected time embedding after the norm.
template <class T>
struct TokBlock {
  BlockKind kind = BlockKind::kan;
  std::vector<TokenLayer<T>> layers;
  std::vector<ConvBnRelu<T>> dw;  // plain blocks only
  LayerNorm<T> norm;
  std::optional<Linear<T>> time_in, time_out;  // time-conditioned blocks only

  static TokBlock init(std::size_t dim, BlockKind kind, const UkanConfig& cfg, Rng& rng) {
    TokBlock b;
    b.kind = kind;
    for (std::size_t i = 0; i < cfg.layers_per_block; ++i) {
      switch (kind) {
        case BlockKind::kan:
          b.layers.emplace_back(KanLayer<T>::init(dim, dim, cfg.spline, rng));
          break;
        case BlockKind::mlp:
          b.layers.emplace_back(MlpLayer<T>::init(dim, dim, cfg.mlp_activation, rng));
          break;
        case BlockKind::identity:
          b.layers.emplace_back(IdentityLayer{});
          break;
      }
      if (!cfg.time_conditioned)
        b.dw.push_back(ConvBnRelu<T>::init(dim, dim, 3, {1, 1, dim}, cfg.norm, rng));
    }
    b.norm = LayerNorm<T>::init(dim, cfg.norm);
    if (cfg.time_conditioned) {
      b.time_in = Linear<T>::init(cfg.time_embed_dim, dim, rng);
      b.time_out = Linear<T>::init(dim, dim, rng);
    }
    return b;
  }

  bool time_conditioned() const { return time_in.has_value(); }

  /// tokens (B, H*W, D); time_embedding (B, E) for time-conditioned blocks.
  Tensor<T> forward(const Tensor<T>& tokens, std::size_t h, std::size_t w, bool training,
                    const Tensor<T>& time_embedding = {}) const {
    const std::size_t d = norm.gamma.numel();
    if (tokens.rank() != 3 || tokens.dim(1) != h * w || tokens.dim(2) != d) {
      throw ShapeError("tok_block: tokens " + to_string(tokens.shape()) + " for a " +
                       std::to_string(h) + "x" + std::to_string(w) + " map of dim " +
                       std::to_string(d));
    }
    const std::size_t batch = tokens.dim(0);
    const Shape rows{batch * h * w, d};
    Tensor<T> z = reshape(tokens, rows);
    if (time_conditioned()) {
      if (!time_embedding.defined() || time_embedding.rank() != 2 ||
          time_embedding.dim(0) != batch) {
        throw ShapeError("tok_block: time-conditioned block needs a (" + std::to_string(batch) +
                         ", E) time embedding");
      }
      for (const auto& layer : layers) z = ukan::forward(layer, z);
      auto out = reshape(norm.forward(z), {batch, h * w, d});
      auto te = time_out->forward(silu(time_in->forward(time_embedding)));
      return add(out, reshape(te, {batch, 1, d}));
    }
    Tensor<T> hdn = z;
    for (std::size_t i = 0; i < layers.size(); ++i) {
      hdn = ukan::forward(layers[i], hdn);
      auto map = tokens_to_map(reshape(hdn, {batch, h * w, d}), h, w);
      hdn = reshape(map_to_tokens(dw[i].forward(map, training)), rows);
    }
    return reshape(norm.forward(add(z, hdn)), {batch, h * w, d});
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      ukan::collect(layers[i], out, join_name(prefix, "layer" + std::to_string(i)));
      if (i < dw.size()) dw[i].collect(out, join_name(prefix, "dw" + std::to_string(i)));
    }
    norm.collect(out, join_name(prefix, "norm"));
    if (time_in) {
      time_in->collect(out, join_name(prefix, "time_in"));
      time_out->collect(out, join_name(prefix, "time_out"));
    }
  }
};

/// Strided 3x3 conv to the token width, flattened to tokens and normalized.
template <class T>
struct PatchEmbed {
  Conv2d<T> proj;
  LayerNorm<T> norm;

  static PatchEmbed init(std::size_t c_in, std::size_t dim, const UkanConfig& cfg, Rng& rng) {
    return {Conv2d<T>::init(c_in, dim, 3, {cfg.patch_stride, 1, 1}, rng),
            LayerNorm<T>::init(dim, cfg.norm)};
  }

  Tokenized<T> forward(const Tensor<T>& x) const {
    auto map = proj.forward(x);
    return {norm.forward(map_to_tokens(map)), map.dim(2), map.dim(3)};
  }

  void collect(ParamList<T>& out, const std::string& prefix) const {
    proj.collect(out, join_name(prefix, "proj"));
    norm.collect(out, join_name(prefix, "norm"));
  }
};

/// Shapes seen at each stage of a forward pass.
struct ForwardTrace {
  std::vector<Shape> encoder;  // levels 1..L+K
  std::vector<Shape> decoder;  // after each decoder stage
  Shape output;
};

template <class T>
struct UKan {
  UkanConfig cfg;
  std::vector<ConvBnRelu<T>> enc_conv;     // L
  std::vector<PatchEmbed<T>> enc_embed;    // K
  std::vector<TokBlock<T>> enc_tok;        // K
  std::vector<ConvBnRelu<T>> dec_fuse;     // L + K
  std::vector<TokBlock<T>> dec_tok;        // K
  Conv2d<T> head;

  static UKan init(const UkanConfig& cfg, std::uint64_t seed) {
    cfg.validate();
    Rng rng = make_rng(seed, 0x6d6f64656cULL);
    UKan m;
    m.cfg = cfg;
    const std::size_t L = cfg.num_conv_stages(), K = cfg.num_tok_stages();
    for (std::size_t l = 1; l <= L; ++l) {
      m.enc_conv.push_back(ConvBnRelu<T>::init(cfg.level_channels(l - 1), cfg.level_channels(l), 3,
                                               {1, 1, 1}, cfg.norm, rng));
    }
    for (std::size_t k = 1; k <= K; ++k) {
      const std::size_t dim = cfg.level_channels(L + k);
      m.enc_embed.push_back(PatchEmbed<T>::init(cfg.level_channels(L + k - 1), dim, cfg, rng));
      m.enc_tok.push_back(TokBlock<T>::init(dim, cfg.kind_at(k - 1), cfg, rng));
    }
    for (std::size_t j = 1; j <= L + K; ++j) {
      const std::size_t target = L + K - j;
      const std::size_t c_in = cfg.level_channels(target + 1) + cfg.level_channels(target);
      const std::size_t c_out = decoder_channels(cfg, target);
      m.dec_fuse.push_back(ConvBnRelu<T>::init(c_in, c_out, 3, {1, 1, 1}, cfg.norm, rng));
      if (j <= K) m.dec_tok.push_back(TokBlock<T>::init(c_out, cfg.kind_at(K + j - 1), cfg, rng));
    }
    m.head = Conv2d<T>::init(decoder_channels(cfg, 0), cfg.out_channels, 1, {1, 0, 1}, rng);
    return m;
  }

  /// Decoder output width at encoder level m; level 0 fuses to C_1.
  static std::size_t decoder_channels(const UkanConfig& cfg, std::size_t m) {
    return m == 0 ? cfg.conv_channels[0] : cfg.level_channels(m);
  }

  void check_input(const Tensor<T>& x) const {
    const std::size_t mult = cfg.size_multiple();
    if (x.rank() != 4 || x.dim(1) != cfg.in_channels) {
      throw ShapeError("ukan: expected (B, " + std::to_string(cfg.in_channels) +
                       ", H, W) input, got " + to_string(x.shape()));
    }
    if (x.dim(2) % mult != 0 || x.dim(3) % mult != 0) {
      throw ShapeError("ukan: input " + std::to_string(x.dim(2)) + "x" +
                       std::to_string(x.dim(3)) + " is not divisible by " +
                       std::to_string(mult));
    }
  }

  /// Outputs X_1..X_L of the convolutional stages.
  std::vector<Tensor<T>> conv_phase_forward(const Tensor<T>& x, bool training) const {
    check_input(x);
    std::vector<Tensor<T>> out;
    Tensor<T> h = x;
    for (const auto& block : enc_conv) {
      h = maxpool2x2(block.forward(h, training));
      out.push_back(h);
    }
    return out;
  }

  /// Patch embedding of the first token stage applied to X_L.
  Tokenized<T> tokenize(const Tensor<T>& x_l) const {
    if (x_l.rank() != 4 || x_l.dim(1) != cfg.conv_channels.back()) {
      throw ShapeError("tokenize: expected (B, " + std::to_string(cfg.conv_channels.back()) +
                       ", H, W), got " + to_string(x_l.shape()));
    }
    return enc_embed[0].forward(x_l);
  }

  /// timesteps is required (one per batch entry) for time-conditioned models.
  Tensor<T> forward(const Tensor<T>& x, bool training,
                    const std::vector<std::size_t>& timesteps = {},
                    ForwardTrace* trace = nullptr) const {
    const std::size_t L = cfg.num_conv_stages(), K = cfg.num_tok_stages();
    Tensor<T> temb;
    if (cfg.time_conditioned) {
      if (timesteps.size() != x.dim(0)) {
        throw ShapeError("ukan: " + std::to_string(timesteps.size()) + " timesteps for batch " +
                         std::to_string(x.dim(0)));
      }
      temb = timestep_embedding<T>(timesteps, cfg.time_embed_dim);
    }
    std::vector<Tensor<T>> levels{x};
    for (auto& f : conv_phase_forward(x, training)) levels.push_back(f);
    for (std::size_t k = 0; k < K; ++k) {
      auto tok = enc_embed[k].forward(levels.back());
      auto z = enc_tok[k].forward(tok.tokens, tok.h, tok.w, training, temb);
      levels.push_back(tokens_to_map(z, tok.h, tok.w));
    }
    if (trace) {
      trace->encoder.clear();
      for (std::size_t m = 1; m < levels.size(); ++m) trace->encoder.push_back(levels[m].shape());
      trace->decoder.clear();
    }
    Tensor<T> h = levels.back();
    for (std::size_t j = 1; j <= L + K; ++j) {
      const auto& skip = levels[L + K - j];
      auto up = resize_bilinear(h, skip.dim(2), skip.dim(3));
      h = dec_fuse[j - 1].forward(concat<T>({up, skip}, 1), training);
      if (j <= K) {
        const std::size_t hh = h.dim(2), ww = h.dim(3);
        h = tokens_to_map(dec_tok[j - 1].forward(map_to_tokens(h), hh, ww, training, temb), hh, ww);
      }
      if (trace) trace->decoder.push_back(h.shape());
    }
    auto out = head.forward(h);
    if (trace) trace->output = out.shape();
    return out;
  }

  /// All parameters and BN running statistics, in a stable order with
  /// hierarchical names.
  ParamList<T> parameters() const {
    ParamList<T> out;
    for (std::size_t i = 0; i < enc_conv.size(); ++i)
      enc_conv[i].collect(out, "encoder.conv" + std::to_string(i + 1));
    for (std::size_t i = 0; i < enc_embed.size(); ++i) {
      enc_embed[i].collect(out, "encoder.embed" + std::to_string(i + 1));
      enc_tok[i].collect(out, "encoder.tok" + std::to_string(i + 1));
    }
    for (std::size_t i = 0; i < dec_fuse.size(); ++i) {
      dec_fuse[i].collect(out, "decoder.fuse" + std::to_string(i + 1));
      if (i < dec_tok.size()) dec_tok[i].collect(out, "decoder.tok" + std::to_string(i + 1));
    }
    head.collect(out, "head");
    return out;
  }

  std::size_t num_parameters() const { return count_parameters(parameters()); }
};

struct ModelStats {
  std::size_t params = 0;
  std::uint64_t flops = 0;  // one eval-mode forward on a single image
};

/// Trainable parameter count and FLOPs of a (1, C, h, w) forward. FLOPs follow
/// the primitives' counters: 2 per multiply-accumulate, per-element costs
/// elsewhere (spline basis included).
template <class T>
ModelStats count_params_flops(const UKan<T>& model, std::size_t h, std::size_t w) {
  ModelStats s;
  s.params = model.num_parameters();
  NoGradGuard no_grad;
  Tensor<T> x({1, model.cfg.in_channels, h, w});
  std::vector<std::size_t> t;
  if (model.cfg.time_conditioned) t.push_back(1);
  FlopScope scope;
  model.forward(x, false, t);
  s.flops = scope.count();
  return s;
}

}  // namespace ukan
