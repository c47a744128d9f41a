#pragma once

// Dataset ingestion: 8-bit PNG/PGM IO, manifests with seeded train/val splits,
// resizing, augmentation, batching, and synthetic toy datasets.

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "ukan/module.hpp"
#include "ukan/nn_ops.hpp"
#include "ukan/tensor.hpp"

namespace ukan::data {

namespace fs = std::filesystem;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Interleaved 8-bit pixels, row-major (y, x, channel).
struct Image8 {
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<std::uint8_t> pixels;

  std::uint8_t& at(std::size_t y, std::size_t x, std::size_t c) {
    return pixels[(y * width + x) * channels + c];
  }
  std::uint8_t at(std::size_t y, std::size_t x, std::size_t c) const {
    return pixels[(y * width + x) * channels + c];
  }
};

// ---------------------------------------------------------------- image IO

inline std::string lower_extension(const fs::path& p) {
  auto e = p.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return e;
}

inline Image8 read_png(const fs::path& path) {
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&img, path.string().c_str())) {
    throw DataError("cannot decode PNG '" + path.string() + "': " + img.message);
  }
  const bool color = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
  img.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  Image8 out;
  out.channels = color ? 3 : 1;
  out.height = img.height;
  out.width = img.width;
  out.pixels.resize(PNG_IMAGE_SIZE(img));
  // Alpha, if present, is composited onto black.
  png_color background{0, 0, 0};
  if (!png_image_finish_read(&img, &background, out.pixels.data(), 0, nullptr)) {
    std::string msg = img.message;
    png_image_free(&img);
    throw DataError("cannot decode PNG '" + path.string() + "': " + msg);
  }
  return out;
}

inline void write_png(const fs::path& path, const Image8& im) {
  if (im.channels != 1 && im.channels != 3)
    throw DataError("write_png: only 1 or 3 channels supported");
  png_image img{};
  img.version = PNG_IMAGE_VERSION;
  img.width = static_cast<png_uint_32>(im.width);
  img.height = static_cast<png_uint_32>(im.height);
  img.format = im.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
  if (!png_image_write_to_file(&img, path.string().c_str(), 0, im.pixels.data(), 0, nullptr)) {
    throw DataError("cannot write PNG '" + path.string() + "': " + img.message);
  }
}

namespace detail {

// Next whitespace-separated header token, skipping '#' comments.
inline std::string pnm_token(std::istream& in) {
  std::string tok;
  while (in) {
    int c = in.get();
    if (c == '#') {
      std::string ignored;
      std::getline(in, ignored);
    } else if (std::isspace(c)) {
      if (!tok.empty()) return tok;
    } else if (c != EOF) {
      tok.push_back(static_cast<char>(c));
    }
  }
  return tok;
}

}  // namespace detail

/// Binary PGM (P5) or PPM (P6), maxval <= 255.
inline Image8 read_pnm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  const std::string magic = detail::pnm_token(in);
  if (magic != "P5" && magic != "P6")
    throw DataError("cannot decode '" + path.string() + "': not a binary PGM/PPM");
  Image8 out;
  out.channels = magic == "P5" ? 1 : 3;
  try {
    out.width = std::stoul(detail::pnm_token(in));
    out.height = std::stoul(detail::pnm_token(in));
    const unsigned long maxval = std::stoul(detail::pnm_token(in));
    if (maxval == 0 || maxval > 255) throw DataError("unsupported maxval");
  } catch (const std::exception& e) {
    throw DataError("cannot decode '" + path.string() + "': bad header (" + e.what() + ")");
  }
  out.pixels.resize(out.width * out.height * out.channels);
  in.read(reinterpret_cast<char*>(out.pixels.data()), static_cast<std::streamsize>(out.pixels.size()));
  if (static_cast<std::size_t>(in.gcount()) != out.pixels.size())
    throw DataError("cannot decode '" + path.string() + "': truncated pixel data");
  return out;
}

inline void write_pnm(const fs::path& path, const Image8& im) {
  if (im.channels != 1 && im.channels != 3)
    throw DataError("write_pnm: only 1 or 3 channels supported");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << (im.channels == 1 ? "P5" : "P6") << '\n' << im.width << ' ' << im.height << "\n255\n";
  out.write(reinterpret_cast<const char*>(im.pixels.data()),
            static_cast<std::streamsize>(im.pixels.size()));
}

inline bool is_image_file(const fs::path& p) {
  const auto e = lower_extension(p);
  return e == ".png" || e == ".pgm" || e == ".ppm";
}

inline Image8 read_image(const fs::path& path) {
  if (!fs::exists(path)) throw DataError("missing file '" + path.string() + "'");
  return lower_extension(path) == ".png" ? read_png(path) : read_pnm(path);
}

inline void write_image(const fs::path& path, const Image8& im) {
  if (lower_extension(path) == ".png") {
    write_png(path, im);
  } else {
    write_pnm(path, im);
  }
}

/// (C, H, W) or (1, C, H, W) tensor in [0, 1] to 8-bit, rounding to nearest.
template <class T>
Image8 to_image8(const Tensor<T>& t) {
  const std::size_t r = t.rank();
  if (r != 3 && !(r == 4 && t.dim(0) == 1)) throw ShapeError("to_image8: need (C,H,W)");
  Image8 im;
  im.channels = t.dim(r - 3);
  im.height = t.dim(r - 2);
  im.width = t.dim(r - 1);
  im.pixels.resize(t.numel());
  const auto d = t.data();
  for (std::size_t c = 0; c < im.channels; ++c)
    for (std::size_t y = 0; y < im.height; ++y)
      for (std::size_t x = 0; x < im.width; ++x) {
        const double v = std::clamp(static_cast<double>(d[(c * im.height + y) * im.width + x]), 0.0, 1.0);
        im.at(y, x, c) = static_cast<std::uint8_t>(std::lround(v * 255.0));
      }
  return im;
}

// ---------------------------------------------------------------- manifest

enum class Split { train, val };

inline std::string split_name(Split s) { return s == Split::train ? "train" : "val"; }

inline Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  throw DataError("manifest: unknown split '" + s + "'");
}

struct ManifestRow {
  std::string id;
  std::string image;  // relative to the manifest root unless absolute
  std::string mask;   // empty when the dataset has no masks
  Split split = Split::train;
};

struct Manifest {
  fs::path root;
  std::uint64_t seed = 0;
  double split_ratio = 0.8;
  std::vector<ManifestRow> rows;
  std::vector<std::string> warnings;  // not persisted

  std::vector<ManifestRow> rows_in(Split s) const {
    std::vector<ManifestRow> out;
    for (const auto& r : rows)
      if (r.split == s) out.push_back(r);
    return out;
  }

  fs::path resolve(const std::string& p) const {
    const fs::path q(p);
    return q.is_absolute() ? q : root / q;
  }
};

/// Scans <root>/images and pairs each file with <root>/masks/<stem>.{png,pgm}.
/// Rows are sorted by id, shuffled with the seed, and the first
/// llround(ratio * n) become the training split.
inline Manifest build_manifest(const fs::path& root, double split_ratio, std::uint64_t seed,
                               bool require_masks = true) {
  if (!(split_ratio > 0.0 && split_ratio <= 1.0))
    throw DataError("manifest: split ratio must be in (0, 1], got " + std::to_string(split_ratio));
  const fs::path images = root / "images";
  const fs::path masks = root / "masks";
  if (!fs::is_directory(images)) throw DataError("manifest: missing directory '" + images.string() + "'");
  Manifest m;
  m.root = root;
  m.seed = seed;
  m.split_ratio = split_ratio;
  for (const auto& entry : fs::directory_iterator(images)) {
    if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
    ManifestRow row;
    row.id = entry.path().stem().string();
    row.image = (fs::path("images") / entry.path().filename()).string();
    for (const char* ext : {".png", ".pgm"}) {
      if (fs::exists(masks / (row.id + ext))) {
        row.mask = (fs::path("masks") / (row.id + ext)).string();
        break;
      }
    }
    if (row.mask.empty() && require_masks)
      throw DataError("manifest: missing mask for image '" + row.image + "'");
    m.rows.push_back(std::move(row));
  }
  if (m.rows.empty()) throw DataError("manifest: empty dataset under '" + images.string() + "'");
  std::sort(m.rows.begin(), m.rows.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
  for (std::size_t i = 1; i < m.rows.size(); ++i)
    if (m.rows[i].id == m.rows[i - 1].id)
      throw DataError("manifest: duplicate id '" + m.rows[i].id + "'");
  auto rng = make_rng(seed, 0x73706c6974);  // "split"
  std::shuffle(m.rows.begin(), m.rows.end(), rng);
  const auto n_train = static_cast<std::size_t>(std::llround(split_ratio * static_cast<double>(m.rows.size())));
  for (std::size_t i = 0; i < m.rows.size(); ++i) m.rows[i].split = i < n_train ? Split::train : Split::val;
  if (n_train == m.rows.size()) m.warnings.push_back("manifest: validation split is empty");
  return m;
}

/// Comment lines carry the seed and ratio; then the `id image mask split`
/// header and one row per sample.
inline void save_manifest(const Manifest& m, const fs::path& path) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write manifest '" + path.string() + "'");
  out << "# seed = " << m.seed << '\n';
  out << "# split_ratio = " << m.split_ratio << '\n';
  out << "id\timage\tmask\tsplit\n";
  for (const auto& r : m.rows)
    out << r.id << '\t' << r.image << '\t' << (r.mask.empty() ? "-" : r.mask) << '\t'
        << split_name(r.split) << '\n';
}

/// Relative paths resolve against the manifest's directory.
inline Manifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open manifest '" + path.string() + "'");
  Manifest m;
  m.root = path.parent_path();
  std::string line;
  bool header = false;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (line[0] == '#') {
      const auto eq = line.find('=');
      if (eq == std::string::npos) continue;
      auto key = line.substr(1, eq - 1);
      key.erase(std::remove(key.begin(), key.end(), ' '), key.end());
      const auto value = line.substr(eq + 1);
      if (key == "seed") m.seed = std::stoull(value);
      if (key == "split_ratio") m.split_ratio = std::stod(value);
      continue;
    }
    std::vector<std::string> cols;
    std::stringstream ss(line);
    std::string col;
    while (std::getline(ss, col, '\t')) cols.push_back(col);
    if (!header) {
      if (cols != std::vector<std::string>{"id", "image", "mask", "split"})
        throw DataError("manifest '" + path.string() + "': bad header");
      header = true;
      continue;
    }
    if (cols.size() != 4)
      throw DataError("manifest '" + path.string() + "' line " + std::to_string(line_no) +
                      ": expected 4 columns");
    m.rows.push_back({cols[0], cols[1], cols[2] == "-" ? "" : cols[2], parse_split(cols[3])});
  }
  if (!header) throw DataError("manifest '" + path.string() + "': missing header");
  return m;
}

// ---------------------------------------------------------------- samples

/// image (C, H, W) in [0, 1]; mask (1, H, W) in {0, 1}, undefined if absent.
template <class T>
struct Sample {
  std::string id;
  Tensor<T> image;
  Tensor<T> mask;
};

struct LoadOptions {
  std::size_t height = 256;
  std::size_t width = 256;
  std::size_t channels = 3;  // grayscale is replicated, RGB -> 1 uses luma
  bool load_masks = true;
};

template <class T>
Tensor<T> image_to_tensor(const Image8& im, std::size_t channels) {
  if (channels != 1 && channels != 3) throw DataError("image channels must be 1 or 3");
  Tensor<T> t({channels, im.height, im.width});
  auto d = t.data();
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x) {
      for (std::size_t c = 0; c < channels; ++c) {
        double v;
        if (im.channels == channels) {
          v = im.at(y, x, c);
        } else if (im.channels == 1) {
          v = im.at(y, x, 0);
        } else {
          v = 0.299 * im.at(y, x, 0) + 0.587 * im.at(y, x, 1) + 0.114 * im.at(y, x, 2);
        }
        d[(c * im.height + y) * im.width + x] = static_cast<T>(v / 255.0);
      }
    }
  return t;
}

/// Bilinear resize (half-pixel centres) of a (C, H, W) tensor.
template <class T>
Tensor<T> resize_image(const Tensor<T>& img, std::size_t h, std::size_t w) {
  if (img.dim(1) == h && img.dim(2) == w) return img;
  NoGradGuard no_grad;
  auto x = reshape(img, {1, img.dim(0), img.dim(1), img.dim(2)});
  return reshape(resize_bilinear(x, h, w), {img.dim(0), h, w});
}

/// Nearest-neighbour resize of a (C, H, W) tensor; source index
/// floor((dst + 0.5) * in / out).
template <class T>
Tensor<T> resize_nearest(const Tensor<T>& img, std::size_t h, std::size_t w) {
  const std::size_t c = img.dim(0), ih = img.dim(1), iw = img.dim(2);
  Tensor<T> out({c, h, w});
  const auto s = img.data();
  auto d = out.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y) {
      const std::size_t sy = std::min(ih - 1, (2 * y + 1) * ih / (2 * h));
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sx = std::min(iw - 1, (2 * x + 1) * iw / (2 * w));
        d[(k * h + y) * w + x] = s[(k * ih + sy) * iw + sx];
      }
    }
  return out;
}

/// Reads a {0, 255} mask (first channel) and maps it to {0, 1}.
template <class T>
Tensor<T> mask_to_tensor(const Image8& im, const std::string& name) {
  Tensor<T> t({1, im.height, im.width});
  auto d = t.data();
  for (std::size_t y = 0; y < im.height; ++y)
    for (std::size_t x = 0; x < im.width; ++x) {
      const auto v = im.at(y, x, 0);
      if (v != 0 && v != 255) {
        throw DataError("mask '" + name + "' has value " + std::to_string(v) + " at (" +
                        std::to_string(y) + ", " + std::to_string(x) + "); expected 0 or 255");
      }
      d[y * im.width + x] = v ? T{1} : T{0};
    }
  return t;
}

template <class T>
Sample<T> load_and_resize(const Manifest& m, const ManifestRow& row, const LoadOptions& opt) {
  Sample<T> s;
  s.id = row.id;
  s.image = resize_image(image_to_tensor<T>(read_image(m.resolve(row.image)), opt.channels),
                         opt.height, opt.width);
  if (opt.load_masks) {
    if (row.mask.empty()) throw DataError("sample '" + row.id + "' has no mask");
    const auto path = m.resolve(row.mask);
    s.mask = resize_nearest(mask_to_tensor<T>(read_image(path), path.string()), opt.height, opt.width);
  }
  return s;
}

template <class T>
std::vector<Sample<T>> load_split(const Manifest& m, Split split, const LoadOptions& opt) {
  std::vector<Sample<T>> out;
  for (const auto& r : m.rows)
    if (r.split == split) out.push_back(load_and_resize<T>(m, r, opt));
  return out;
}

// ---------------------------------------------------------------- augmentation

struct AugmentOptions {
  bool hflip = true;
  bool vflip = true;
  bool rotate = true;             // right angles; 180 only for non-square inputs
  bool arbitrary_angle = false;   // uniform angle in [0, 360) instead of right angles
};

/// One draw of the random transform. Default-constructed is the identity.
struct AugmentDraw {
  bool hflip = false;
  bool vflip = false;
  int quarter_turns = 0;  // counter-clockwise
  double angle_deg = 0;   // arbitrary-angle mode
};

/// Always consumes the same number of values from `rng`, so the stream
/// position does not depend on the options.
inline AugmentDraw draw_augment(Rng& rng, const AugmentOptions& opt) {
  std::bernoulli_distribution coin(0.5);
  std::uniform_int_distribution<int> quarter(0, 3);
  std::uniform_real_distribution<double> angle(0.0, 360.0);
  AugmentDraw d;
  const bool h = coin(rng), v = coin(rng);
  const int q = quarter(rng);
  const double a = angle(rng);
  d.hflip = opt.hflip && h;
  d.vflip = opt.vflip && v;
  if (opt.rotate) {
    if (opt.arbitrary_angle) {
      d.angle_deg = a;
    } else {
      d.quarter_turns = q;
    }
  }
  return d;
}

template <class T>
Tensor<T> flip(const Tensor<T>& t, bool horizontal) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor<T> out(t.shape());
  const auto s = t.data();
  auto d = out.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x) {
        const std::size_t sy = horizontal ? y : h - 1 - y;
        const std::size_t sx = horizontal ? w - 1 - x : x;
        d[(k * h + y) * w + x] = s[(k * h + sy) * w + sx];
      }
  return out;
}

/// Counter-clockwise rotation by 90 degrees: out[y][x] = in[x][W-1-y].
template <class T>
Tensor<T> rot90(const Tensor<T>& t) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  Tensor<T> out({c, w, h});
  const auto s = t.data();
  auto d = out.data();
  for (std::size_t k = 0; k < c; ++k)
    for (std::size_t y = 0; y < w; ++y)
      for (std::size_t x = 0; x < h; ++x) d[(k * w + y) * h + x] = s[(k * h + x) * w + (w - 1 - y)];
  return out;
}

/// Rotation about the centre with zero fill; bilinear or nearest sampling.
template <class T>
Tensor<T> rotate(const Tensor<T>& t, double angle_deg, bool nearest) {
  const std::size_t c = t.dim(0), h = t.dim(1), w = t.dim(2);
  const double th = angle_deg * std::numbers::pi / 180.0;
  const double cs = std::cos(th), sn = std::sin(th);
  const double cy = (static_cast<double>(h) - 1) / 2, cx = (static_cast<double>(w) - 1) / 2;
  Tensor<T> out(t.shape());
  const auto s = t.data();
  auto d = out.data();
  auto px = [&](std::size_t k, long yy, long xx) -> double {
    if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) return 0.0;
    return static_cast<double>(s[(k * h + static_cast<std::size_t>(yy)) * w + static_cast<std::size_t>(xx)]);
  };
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x) {
      // Inverse map from output to source coordinates.
      const double dy = static_cast<double>(y) - cy, dx = static_cast<double>(x) - cx;
      const double sx = cs * dx - sn * dy + cx;
      const double sy = sn * dx + cs * dy + cy;
      for (std::size_t k = 0; k < c; ++k) {
        double v;
        if (nearest) {
          v = px(k, std::lround(sy), std::lround(sx));
        } else {
          const double fy = std::floor(sy), fx = std::floor(sx);
          const double ay = sy - fy, ax = sx - fx;
          const long y0 = static_cast<long>(fy), x0 = static_cast<long>(fx);
          v = (1 - ay) * ((1 - ax) * px(k, y0, x0) + ax * px(k, y0, x0 + 1)) +
              ay * ((1 - ax) * px(k, y0 + 1, x0) + ax * px(k, y0 + 1, x0 + 1));
        }
        d[(k * h + y) * w + x] = static_cast<T>(v);
      }
    }
  return out;
}

/// Applies the same transform to image and mask.
template <class T>
Sample<T> apply_augment(const Sample<T>& in, const AugmentDraw& d) {
  Sample<T> s = in;
  auto each = [&s](auto&& f) {
    s.image = f(s.image, false);
    if (s.mask.defined()) s.mask = f(s.mask, true);
  };
  if (d.hflip) each([](const Tensor<T>& t, bool) { return flip(t, true); });
  if (d.vflip) each([](const Tensor<T>& t, bool) { return flip(t, false); });
  int q = d.quarter_turns & 3;
  if (s.image.dim(1) != s.image.dim(2)) q &= 2;  // keep the shape on non-square inputs
  for (int i = 0; i < q; ++i) each([](const Tensor<T>& t, bool) { return rot90(t); });
  if (d.angle_deg != 0) each([&d](const Tensor<T>& t, bool is_mask) { return rotate(t, d.angle_deg, is_mask); });
  return s;
}

template <class T>
Sample<T> augment(const Sample<T>& in, Rng& rng, const AugmentOptions& opt) {
  return apply_augment(in, draw_augment(rng, opt));
}

// ---------------------------------------------------------------- batching

/// Epoch visiting order, fixed by (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::size_t epoch) {
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  auto rng = make_rng(seed, 0x6f72646572ull ^ (static_cast<std::uint64_t>(epoch) << 40));
  std::shuffle(idx.begin(), idx.end(), rng);
  return idx;
}

template <class T>
struct Batch {
  Tensor<T> images;  // (B, C, H, W)
  Tensor<T> masks;   // (B, 1, H, W), undefined without masks
};

template <class T>
Batch<T> stack(const std::vector<Sample<T>>& samples) {
  if (samples.empty()) throw DataError("stack: empty batch");
  std::vector<Tensor<T>> imgs, masks;
  const bool with_masks = samples.front().mask.defined();
  for (const auto& s : samples) {
    imgs.push_back(reshape(s.image, {1, s.image.dim(0), s.image.dim(1), s.image.dim(2)}));
    if (with_masks) masks.push_back(reshape(s.mask, {1, 1, s.mask.dim(1), s.mask.dim(2)}));
  }
  NoGradGuard no_grad;
  Batch<T> b;
  b.images = concat(imgs, 0);
  if (with_masks) b.masks = concat(masks, 0);
  return b;
}

// ---------------------------------------------------------------- synthetic

struct SyntheticOptions {
  std::size_t count = 8;
  std::size_t size = 32;
  std::uint64_t seed = 0;
};

/// Bright ellipses (1-3 per image) on a dark noisy background, RGB PNG with
/// binary PNG masks, plus manifest.tsv.
inline Manifest make_blobs(const fs::path& root, const SyntheticOptions& opt, double split_ratio = 0.8) {
  fs::create_directories(root / "images");
  fs::create_directories(root / "masks");
  auto rng = make_rng(opt.seed, 0x626c6f6273);  // "blobs"
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 0.04);
  const double n = static_cast<double>(opt.size);
  for (std::size_t i = 0; i < opt.count; ++i) {
    Image8 img{3, opt.size, opt.size, std::vector<std::uint8_t>(opt.size * opt.size * 3)};
    Image8 mask{1, opt.size, opt.size, std::vector<std::uint8_t>(opt.size * opt.size)};
    const int blobs = 1 + static_cast<int>(u(rng) * 3);
    struct Ellipse { double cy, cx, ry, rx, th; };
    std::vector<Ellipse> es;
    for (int b = 0; b < blobs; ++b)
      es.push_back({n * (0.2 + 0.6 * u(rng)), n * (0.2 + 0.6 * u(rng)), n * (0.08 + 0.14 * u(rng)),
                    n * (0.08 + 0.14 * u(rng)), std::numbers::pi * u(rng)});
    const double tint[3] = {0.75 + 0.2 * u(rng), 0.55 + 0.3 * u(rng), 0.6 + 0.3 * u(rng)};
    for (std::size_t y = 0; y < opt.size; ++y)
      for (std::size_t x = 0; x < opt.size; ++x) {
        bool inside = false;
        for (const auto& e : es) {
          const double dy = static_cast<double>(y) + 0.5 - e.cy, dx = static_cast<double>(x) + 0.5 - e.cx;
          const double a = (std::cos(e.th) * dx + std::sin(e.th) * dy) / e.rx;
          const double b = (-std::sin(e.th) * dx + std::cos(e.th) * dy) / e.ry;
          inside = inside || a * a + b * b <= 1.0;
        }
        mask.at(y, x, 0) = inside ? 255 : 0;
        for (std::size_t c = 0; c < 3; ++c) {
          const double base = inside ? tint[c] : 0.2 + 0.05 * static_cast<double>(c);
          img.at(y, x, c) = static_cast<std::uint8_t>(std::lround(255.0 * std::clamp(base + noise(rng), 0.0, 1.0)));
        }
      }
    char stem[32];
    std::snprintf(stem, sizeof stem, "blob_%04zu", i);
    write_png(root / "images" / (std::string(stem) + ".png"), img);
    write_png(root / "masks" / (std::string(stem) + ".png"), mask);
  }
  auto m = build_manifest(root, split_ratio, opt.seed, true);
  save_manifest(m, root / "manifest.tsv");
  return m;
}

/// The two grayscale patterns of the two-mode toy, in [0, 1]: a centred
/// square and a centred plus. Both are invariant under flips.
inline std::vector<double> two_mode_pattern(int mode, std::size_t size) {
  std::vector<double> p(size * size);
  for (std::size_t y = 0; y < size; ++y)
    for (std::size_t x = 0; x < size; ++x) {
      bool on;
      if (mode == 0) {
        on = y >= size / 4 && y < size - size / 4 && x >= size / 4 && x < size - size / 4;
      } else {
        const std::size_t lo = size / 2 - size / 8, hi = size / 2 + size / 8;
        on = (y >= lo && y < hi) || (x >= lo && x < hi);
      }
      p[y * size + x] = on ? 1.0 : 0.0;
    }
  return p;
}

/// `count` grayscale images alternating between the two modes; no masks.
inline Manifest make_two_mode(const fs::path& root, const SyntheticOptions& opt) {
  fs::create_directories(root / "images");
  for (std::size_t i = 0; i < opt.count; ++i) {
    const auto p = two_mode_pattern(static_cast<int>(i % 2), opt.size);
    Image8 img{1, opt.size, opt.size, std::vector<std::uint8_t>(p.size())};
    for (std::size_t k = 0; k < p.size(); ++k) img.pixels[k] = static_cast<std::uint8_t>(std::lround(255 * p[k]));
    char stem[32];
    std::snprintf(stem, sizeof stem, "mode%zu_%04zu", i % 2, i);
    write_png(root / "images" / (std::string(stem) + ".png"), img);
  }
  auto m = build_manifest(root, 1.0, opt.seed, false);
  save_manifest(m, root / "manifest.tsv");
  return m;
}

}  // namespace ukan::data
