#pragma once

// Tensor front-end of the region-guided report generator: masked regional
// pooling of the global feature map, channel concatenation and flattening
// into visual tokens. The learned encoder/projector/decoder are external.

#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <utility>
#include <vector>

#include "lesionforge/error.hpp"
#include "lesionforge/io.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

/// h x w x d x channels feature map, stored row-major (channel fastest,
/// then z, y, x): value(x, y, z, c) = values[((x * w + y) * d + z) * channels + c].
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(Dims dims, std::size_t channels, std::vector<float> values)
      : dims_(dims), channels_(channels), values_(std::move(values)) {
    if (dims.size() == 0 || channels == 0) throw ArgumentError("feature grid dims and channels must be positive");
    if (values_.size() != dims.size() * channels)
      throw ArgumentError("feature grid has " + std::to_string(values_.size()) + " values, expected " +
                          std::to_string(dims.size() * channels));
    for (float v : values_)
      if (!std::isfinite(v)) throw ArgumentError("feature values must be finite");
  }
  FeatureGrid(Dims dims, std::size_t channels) : FeatureGrid(dims, channels, std::vector<float>(dims.size() * channels)) {}

  const Dims& dims() const { return dims_; }
  std::size_t channels() const { return channels_; }
  std::span<const float> values() const { return values_; }
  std::span<float> values() { return values_; }

  /// Row-major voxel position used for tokens.
  std::size_t position(std::size_t x, std::size_t y, std::size_t z) const { return (x * dims_.ny + y) * dims_.nz + z; }
  float& at(std::size_t x, std::size_t y, std::size_t z, std::size_t c) { return values_[position(x, y, z) * channels_ + c]; }
  float at(std::size_t x, std::size_t y, std::size_t z, std::size_t c) const {
    return values_[position(x, y, z) * channels_ + c];
  }

  friend bool operator==(const FeatureGrid&, const FeatureGrid&) = default;

 private:
  Dims dims_;
  std::size_t channels_ = 0;
  std::vector<float> values_;
};

/// P tokens of `channels` values; P equals the product of the pre-flatten dims.
struct TokenSequence {
  Dims grid;
  std::size_t channels = 0;
  std::vector<float> values;

  std::size_t length() const { return grid.size(); }
  std::span<const float> token(std::size_t t) const { return {values.data() + t * channels, channels}; }
};

enum class DownsampleRule { Any, Majority };

/// Block boundaries along one axis: cell i covers [ceil(i*n/m), ceil((i+1)*n/m)),
/// so every cell is non-empty and trailing cells are never larger.
inline std::vector<std::size_t> block_edges(std::size_t source, std::size_t target) {
  std::vector<std::size_t> e(target + 1);
  for (std::size_t i = 0; i <= target; ++i) e[i] = (i * source + target - 1) / target;
  return e;
}

inline BinaryMask downsample_mask(const BinaryMask& m, const Dims& target, DownsampleRule rule = DownsampleRule::Any) {
  const Dims& s = m.dims();
  for (int a = 0; a < 3; ++a)
    if (target[a] == 0 || target[a] > s[a])
      throw ArgumentError("downsample_mask: target " + to_string(target) + " must be within source " + to_string(s));
  const std::array<std::vector<std::size_t>, 3> edges{block_edges(s.nx, target.nx), block_edges(s.ny, target.ny),
                                                      block_edges(s.nz, target.nz)};
  BinaryMask out(target);
  for (std::size_t cz = 0; cz < target.nz; ++cz)
    for (std::size_t cy = 0; cy < target.ny; ++cy)
      for (std::size_t cx = 0; cx < target.nx; ++cx) {
        std::size_t on = 0, total = 0;
        for (std::size_t z = edges[2][cz]; z < edges[2][cz + 1]; ++z)
          for (std::size_t y = edges[1][cy]; y < edges[1][cy + 1]; ++y)
            for (std::size_t x = edges[0][cx]; x < edges[0][cx + 1]; ++x) {
              on += m.test(x, y, z) ? 1 : 0;
              ++total;
            }
        const bool v = rule == DownsampleRule::Any ? on > 0 : 2 * on > total;
        if (v) out.set(target.index(cx, cy, cz));
      }
  return out;
}

/// f_l = f_g ⊙ M, with M broadcast over channels.
inline FeatureGrid mask_pool(const FeatureGrid& global, const BinaryMask& m) {
  require_same_dims(global.dims(), m.dims(), "mask_pool");
  FeatureGrid out = global;
  const Dims& d = global.dims();
  const std::size_t ch = global.channels();
  for (std::size_t x = 0; x < d.nx; ++x)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t z = 0; z < d.nz; ++z) {
        if (m.test(x, y, z)) continue;
        for (std::size_t c = 0; c < ch; ++c) out.at(x, y, z, c) = 0.0f;
      }
  return out;
}

/// Concatenate global and regional features per voxel (global first) and
/// flatten positions row-major into tokens of 2 * channels values. The
/// learned projection is the identity here.
inline TokenSequence concat_flatten(const FeatureGrid& global, const FeatureGrid& regional) {
  require_same_dims(global.dims(), regional.dims(), "concat_flatten");
  if (global.channels() != regional.channels()) throw ArgumentError("concat_flatten: channel mismatch");
  const std::size_t ch = global.channels();
  const std::size_t p = global.dims().size();
  TokenSequence t{global.dims(), 2 * ch, std::vector<float>(p * 2 * ch)};
  for (std::size_t pos = 0; pos < p; ++pos) {
    std::memcpy(&t.values[pos * 2 * ch], &global.values()[pos * ch], ch * sizeof(float));
    std::memcpy(&t.values[pos * 2 * ch + ch], &regional.values()[pos * ch], ch * sizeof(float));
  }
  return t;
}

/// Inverse of concat_flatten.
inline std::pair<FeatureGrid, FeatureGrid> unflatten(const TokenSequence& t) {
  if (t.channels == 0 || t.channels % 2 != 0) throw ArgumentError("unflatten: token width must be even");
  if (t.values.size() != t.length() * t.channels) throw ArgumentError("unflatten: value count mismatch");
  const std::size_t ch = t.channels / 2;
  std::vector<float> g(t.length() * ch), l(t.length() * ch);
  for (std::size_t pos = 0; pos < t.length(); ++pos) {
    std::memcpy(&g[pos * ch], &t.values[pos * t.channels], ch * sizeof(float));
    std::memcpy(&l[pos * ch], &t.values[pos * t.channels + ch], ch * sizeof(float));
  }
  return {FeatureGrid(t.grid, ch, std::move(g)), FeatureGrid(t.grid, ch, std::move(l))};
}

// Raw dump for external model runtimes: "LFFG", then uint32 h, w, d, channels,
// then little-endian float32 values in FeatureGrid order.
inline void write_feature_grid(const FeatureGrid& f, const std::filesystem::path& path) {
  std::vector<std::byte> out(20 + f.values().size() * 4);
  std::memcpy(out.data(), "LFFG", 4);
  const std::array<std::uint32_t, 4> hdr{static_cast<std::uint32_t>(f.dims().nx), static_cast<std::uint32_t>(f.dims().ny),
                                         static_cast<std::uint32_t>(f.dims().nz), static_cast<std::uint32_t>(f.channels())};
  std::memcpy(out.data() + 4, hdr.data(), 16);
  std::memcpy(out.data() + 20, f.values().data(), f.values().size() * 4);
  io::write_file_atomic(path, out);
}

inline FeatureGrid read_feature_grid(const std::filesystem::path& path) {
  auto bytes = io::read_file(path);
  if (bytes.size() < 20 || std::memcmp(bytes.data(), "LFFG", 4) != 0)
    throw FormatError("'" + path.string() + "' is not a feature grid dump");
  std::array<std::uint32_t, 4> hdr{};
  std::memcpy(hdr.data(), bytes.data() + 4, 16);
  const Dims d{hdr[0], hdr[1], hdr[2]};
  const std::uint64_t n = static_cast<std::uint64_t>(d.size()) * hdr[3];
  if (bytes.size() - 20 != n * 4) throw FormatError("feature grid dump size mismatch");
  std::vector<float> v(n);
  std::memcpy(v.data(), bytes.data() + 20, n * 4);
  return FeatureGrid(d, hdr[3], std::move(v));
}

}  // namespace lesionforge
