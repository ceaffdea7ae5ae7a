#pragma once

// Toy U-shaped network: a strided-conv encoder shared by three heads
// (GAP + FC classifier, skip-connected segmentation decoder) plus a template
// tokenizer whose token grid lines up with the encoder output.
//
// With stride s = 2^L the encoder has L stages. Stage k (1-based) halves the
// resolution with a 3x3 stride-2 conv to c_k = d / 2^(L-k) channels, and
// every stage after the first is followed by residual blocks
// relu(x + conv(relu(conv(x)))). The decoder climbs back through the stage
// outputs: 1x1 conv, nearest 2x upsample, concat with the skip, 3x3 conv. A
// final upsample and 1x1 conv give C+1 logits per pixel.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "mtsgl/image.hpp"
#include "mtsgl/imageops.hpp"
#include "mtsgl/ops.hpp"
#include "mtsgl/rng.hpp"

namespace mtsgl {

struct NetConfig {
  std::size_t height = 64, width = 64;
  std::size_t stride = 8;
  std::size_t depth = 32;
  std::size_t classes = 6;
  std::size_t patch = 8;
  std::size_t blocks = 1;  // residual blocks per stage after the first

  std::size_t levels() const { return static_cast<std::size_t>(std::countr_zero(stride)); }
  std::size_t grid_h() const { return height / stride; }
  std::size_t grid_w() const { return width / stride; }
  std::size_t channels(std::size_t stage) const { return depth >> (levels() - stage); }

  void validate() const {
    detail::require(stride >= 4 && std::has_single_bit(stride), "NetConfig",
                    "stride must be a power of two >= 4, got ", stride);
    detail::require(height % stride == 0 && width % stride == 0, "NetConfig", "input ", width,
                    "x", height, " not divisible by stride ", stride);
    detail::require(patch == stride, "NetConfig", "tokenizer patch ", patch,
                    " must equal encoder stride ", stride);
    detail::require(depth % (std::size_t{1} << (levels() - 1)) == 0, "NetConfig", "depth ", depth,
                    " not divisible by 2^", levels() - 1);
    detail::require(depth >> (levels() - 1) >= 1 && classes >= 2, "NetConfig",
                    "depth ", depth, " or classes ", classes, " too small");
  }
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct Conv {
  Tensor w, b;
  std::size_t stride = 1, pad = 0;

  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

struct Model {
  NetConfig cfg;
  // Encoder: stage convs, then residual block convs in stage order.
  std::vector<Conv> down;
  std::vector<std::vector<Conv>> blocks;  // per stage, pairs of convs
  // Decoder per climb step (deepest first): reduce (1x1), fuse (3x3); then head.
  std::vector<Conv> reduce, fuse;
  Conv seg_head;
  Conv token_conv;
  Tensor fc_w, fc_b;
  bool has_tokenizer = true;

  std::vector<Tensor> encoder_params() const {
    std::vector<Tensor> p;
    for (const auto& c : down) p.insert(p.end(), {c.w, c.b});
    for (const auto& stage : blocks)
      for (const auto& c : stage) p.insert(p.end(), {c.w, c.b});
    return p;
  }
  std::vector<Tensor> decoder_params() const {
    std::vector<Tensor> p;
    for (std::size_t i = 0; i < reduce.size(); ++i)
      p.insert(p.end(), {reduce[i].w, reduce[i].b, fuse[i].w, fuse[i].b});
    p.insert(p.end(), {seg_head.w, seg_head.b});
    return p;
  }
  std::vector<Tensor> tokenizer_params() const {
    if (!has_tokenizer) return {};
    return {token_conv.w, token_conv.b};
  }
  std::vector<Tensor> cls_params() const { return {fc_w, fc_b}; }
  std::vector<Tensor> all_params() const {
    std::vector<Tensor> p = encoder_params();
    for (auto group : {decoder_params(), tokenizer_params(), cls_params()})
      p.insert(p.end(), group.begin(), group.end());
    return p;
  }
};

namespace detail {

inline Tensor param(Shape shape, const std::string& name) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  t.set_name(name);
  return t;
}

inline Conv make_conv(const std::string& name, std::size_t cin, std::size_t cout, std::size_t k,
                      std::size_t stride, Rng& rng) {
  Conv c{param({cout, cin, k, k}, name + ".w"), param({cout}, name + ".b"), stride, k / 2};
  // He-uniform: U(-sqrt(6 / fan_in), +sqrt(6 / fan_in)).
  const double bound = std::sqrt(6.0 / double(cin * k * k));
  for (double& v : c.w.mutable_data()) v = rng.uniform(-bound, bound);
  return c;
}

}  // namespace detail

inline Model make_model(const NetConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(derive_seed(seed, 0, 0x3017));
  Model m;
  m.cfg = cfg;
  const std::size_t L = cfg.levels();
  for (std::size_t k = 1; k <= L; ++k) {
    const std::size_t cin = k == 1 ? 1 : cfg.channels(k - 1);
    m.down.push_back(detail::make_conv("enc.down" + std::to_string(k), cin, cfg.channels(k), 3, 2, rng));
    auto& stage = m.blocks.emplace_back();
    if (k == 1) continue;
    for (std::size_t b = 0; b < cfg.blocks; ++b)
      for (int j = 0; j < 2; ++j)
        stage.push_back(detail::make_conv(
            "enc.res" + std::to_string(k) + "." + std::to_string(b) + "." + std::to_string(j),
            cfg.channels(k), cfg.channels(k), 3, 1, rng));
  }
  for (std::size_t k = L - 1; k >= 1; --k) {
    const std::size_t c = cfg.channels(k);
    m.reduce.push_back(detail::make_conv("dec.reduce" + std::to_string(k), cfg.channels(k + 1), c, 1, 1, rng));
    m.fuse.push_back(detail::make_conv("dec.fuse" + std::to_string(k), 2 * c, c, 3, 1, rng));
  }
  m.seg_head = detail::make_conv("dec.head", cfg.channels(1), cfg.classes + 1, 1, 1, rng);
  m.token_conv = detail::make_conv("tok.conv", cfg.patch * cfg.patch, cfg.depth, 3, 1, rng);
  // The classifier starts at zero so its encoder gradient grows from nothing
  // instead of swamping the auxiliary tasks in the first Gram matrices.
  m.fc_w = detail::param({cfg.classes, cfg.depth}, "cls.fc.w");
  m.fc_b = detail::param({cfg.classes}, "cls.fc.b");
  return m;
}

struct Encoded {
  Tensor features;            // [N, d, h, w]
  std::vector<Tensor> skips;  // stage outputs 1..L-1, shallowest first
};

// Fixed input standardization, measured on the default synthetic renders.
inline constexpr double kPixelMean = 0.235, kPixelStd = 0.159;

/// Grayscale images as a standardized [N, 1, H, W] tensor.

inline Tensor image_batch(const std::vector<const GrayImage*>& images) {
  detail::require(!images.empty(), "image_batch", "empty batch");
  const std::size_t W = images.front()->width, H = images.front()->height;
  Tensor x = Tensor::zeros({images.size(), 1, H, W});
  auto xd = x.mutable_data();
  for (std::size_t n = 0; n < images.size(); ++n) {
    detail::require(images[n]->width == W && images[n]->height == H, "image_batch", "image ", n,
                    " is ", images[n]->width, "x", images[n]->height, ", expected ", W, "x", H);
    for (std::size_t i = 0; i < W * H; ++i) xd[n * W * H + i] = (images[n]->pixels[i] / 255.0 - kPixelMean) / kPixelStd;
  }
  return x;
}

inline Encoded encode(const Model& m, const Tensor& x) {
  const NetConfig& c = m.cfg;
  detail::require(x.rank() == 4 && x.dim(1) == 1 && x.dim(2) == c.height && x.dim(3) == c.width,
                  "encode", "expected [N, 1, ", c.height, ", ", c.width, "], got ",
                  detail::shape_str(x.shape()));
  Encoded out;
  Tensor h = x;
  for (std::size_t k = 0; k < m.down.size(); ++k) {
    h = ops::relu(m.down[k](h));
    const auto& stage = m.blocks[k];
    for (std::size_t b = 0; b + 1 < stage.size(); b += 2)
      h = ops::relu(ops::add(h, stage[b + 1](ops::relu(stage[b](h)))));
    if (k + 1 < m.down.size()) out.skips.push_back(h);
  }
  out.features = h;
  return out;
}

/// Per-pixel logits [N, C+1, H, W]; channel C is background.
inline Tensor decode_seg(const Model& m, const Encoded& e) {
  detail::require(e.skips.size() == m.reduce.size(), "decode_seg", e.skips.size(),
                  " skip tensors, decoder expects ", m.reduce.size());
  Tensor h = e.features;
  for (std::size_t i = 0; i < m.reduce.size(); ++i) {
    const Tensor& skip = e.skips[e.skips.size() - 1 - i];
    Tensor up = ops::upsample2x(ops::relu(m.reduce[i](h)));
    detail::require(up.shape() == skip.shape(), "decode_seg", "upsampled ",
                    detail::shape_str(up.shape()), " does not match skip ",
                    detail::shape_str(skip.shape()));
    h = ops::relu(m.fuse[i](ops::concat_channels({up, skip})));
  }
  return m.seg_head(ops::upsample2x(h));
}

/// Logits [N, C].
inline Tensor classify(const Model& m, const Tensor& features) {
  return ops::linear(ops::global_avg_pool(features), m.fc_w, m.fc_b);
}

/// Token grid [d, h, w] for a binary template: N x N patches flattened into
/// channels, then a padded 3x3 conv to the encoder depth.
inline Tensor tokenize_template(const Model& m, const BinaryMask& tmpl) {
  detail::require(m.has_tokenizer, "tokenize_template", "model was loaded without a tokenizer");
  FloatImage img(tmpl.width, tmpl.height);
  for (std::size_t i = 0; i < tmpl.size(); ++i) img.pixels[i] = tmpl.pixels[i] ? 1.0 : 0.0;
  const TokenGrid g = patchify(img, m.cfg.patch);
  const Tensor x = Tensor::from({1, g.depth, g.rows, g.cols}, g.values);
  const Tensor t = m.token_conv(x);
  return ops::reshape(t, {m.cfg.depth, g.rows, g.cols});
}

// ---------------------------------------------------------------------------
// Checkpoints
//
// Little-endian. Header: "MTSGLCKP" (8 bytes), version byte (1), then seven
// u64 NetConfig fields (height, width, stride, depth, classes, patch, blocks)
// and a u64 entry count. Each entry: u32 name length, name bytes, u32 rank,
// rank x u64 extents, then the float64 values row-major.

inline constexpr char kCheckpointMagic[8] = {'M', 'T', 'S', 'G', 'L', 'C', 'K', 'P'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void put(std::ostream& os, T v) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& is, const std::string& path) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof v);
  require(static_cast<bool>(is), "load_checkpoint", "truncated file '", path, "'");
  return v;
}

}  // namespace detail

inline void save_checkpoint(const std::filesystem::path& path, const Model& m,
                            bool include_tokenizer = true) {
  std::ofstream os(path, std::ios::binary);
  detail::require(static_cast<bool>(os), "save_checkpoint", "cannot open '", path.string(), "'");
  os.write(kCheckpointMagic, sizeof kCheckpointMagic);
  detail::put<std::uint8_t>(os, kCheckpointVersion);
  const NetConfig& c = m.cfg;
  for (std::size_t v : {c.height, c.width, c.stride, c.depth, c.classes, c.patch, c.blocks})
    detail::put<std::uint64_t>(os, v);
  std::vector<Tensor> params = m.encoder_params();
  for (auto group : {m.decoder_params(), include_tokenizer ? m.tokenizer_params()
                                                           : std::vector<Tensor>{},
                     m.cls_params()})
    params.insert(params.end(), group.begin(), group.end());
  detail::put<std::uint64_t>(os, params.size());
  for (const auto& p : params) {
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.name().size()));
    os.write(p.name().data(), static_cast<std::streamsize>(p.name().size()));
    detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(p.rank()));
    for (std::size_t d : p.shape()) detail::put<std::uint64_t>(os, d);
    os.write(reinterpret_cast<const char*>(p.data().data()),
             static_cast<std::streamsize>(p.numel() * sizeof(double)));
  }
  detail::require(static_cast<bool>(os), "save_checkpoint", "write failed for '", path.string(), "'");
}

/// Rebuilds the model; a checkpoint without tokenizer entries loads with
/// has_tokenizer = false. `expected`, when given, must match the stored config.
inline Model load_checkpoint(const std::filesystem::path& path,
                             const NetConfig* expected = nullptr) {
  const std::string ps = path.string();
  std::ifstream is(path, std::ios::binary);
  detail::require(static_cast<bool>(is), "load_checkpoint", "cannot open '", ps, "'");
  char magic[8];
  is.read(magic, sizeof magic);
  detail::require(is && std::memcmp(magic, kCheckpointMagic, 8) == 0, "load_checkpoint", "'", ps,
                  "' is not a checkpoint");
  const auto version = detail::get<std::uint8_t>(is, ps);
  detail::require(version == kCheckpointVersion, "load_checkpoint", "unsupported version ",
                  int(version), " in '", ps, "'");
  NetConfig c;
  for (std::size_t* f : {&c.height, &c.width, &c.stride, &c.depth, &c.classes, &c.patch, &c.blocks})
    *f = detail::get<std::uint64_t>(is, ps);
  if (expected)
    detail::require(*expected == c, "load_checkpoint", "config of '", ps,
                    "' does not match the requested network");
  Model m = make_model(c, 0);
  std::vector<Tensor> slots = m.all_params();
  const auto count = detail::get<std::uint64_t>(is, ps);
  std::vector<bool> seen(slots.size(), false);
  for (std::uint64_t e = 0; e < count; ++e) {
    const auto len = detail::get<std::uint32_t>(is, ps);
    detail::require(len < 4096, "load_checkpoint", "corrupt entry name in '", ps, "'");
    std::string name(len, '\0');
    is.read(name.data(), len);
    const auto rank = detail::get<std::uint32_t>(is, ps);
    detail::require(rank <= 8, "load_checkpoint", "corrupt rank for '", name, "'");
    Shape shape(rank);
    for (auto& d : shape) d = detail::get<std::uint64_t>(is, ps);
    std::size_t k = 0;
    while (k < slots.size() && slots[k].name() != name) ++k;
    detail::require(k < slots.size(), "load_checkpoint", "unknown parameter '", name, "' in '", ps, "'");
    detail::require(slots[k].shape() == shape, "load_checkpoint", "parameter '", name, "' has shape ",
                    detail::shape_str(shape), ", network expects ", detail::shape_str(slots[k].shape()));
    auto dst = slots[k].mutable_data();
    is.read(reinterpret_cast<char*>(dst.data()), static_cast<std::streamsize>(dst.size() * sizeof(double)));
    detail::require(static_cast<bool>(is), "load_checkpoint", "truncated data for '", name, "'");
    seen[k] = true;
  }
  const auto tok = m.tokenizer_params();
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const bool is_tok = std::any_of(tok.begin(), tok.end(),
                                    [&](const Tensor& t) { return t.impl() == slots[k].impl(); });
    if (is_tok) {
      if (!seen[k]) m.has_tokenizer = false;
      continue;
    }
    detail::require(seen[k], "load_checkpoint", "missing parameter '", slots[k].name(), "' in '", ps, "'");
  }
  return m;
}

}  // namespace mtsgl
