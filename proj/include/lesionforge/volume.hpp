#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "lesionforge/error.hpp"

namespace lesionforge {

/// Voxel counts along x, y, z. Linear index is x-fastest (NIfTI order):
/// i = x + nx * (y + ny * z).
struct Dims {
  std::size_t nx = 0, ny = 0, nz = 0;

  constexpr std::size_t size() const { return nx * ny * nz; }
  constexpr std::size_t index(std::size_t x, std::size_t y, std::size_t z) const {
    return x + nx * (y + ny * z);
  }
  constexpr std::array<std::size_t, 3> coords(std::size_t i) const {
    return {i % nx, (i / nx) % ny, i / (nx * ny)};
  }
  constexpr bool contains(std::ptrdiff_t x, std::ptrdiff_t y, std::ptrdiff_t z) const {
    return x >= 0 && y >= 0 && z >= 0 && x < static_cast<std::ptrdiff_t>(nx) &&
           y < static_cast<std::ptrdiff_t>(ny) && z < static_cast<std::ptrdiff_t>(nz);
  }
  constexpr std::size_t operator[](int axis) const {
    return axis == 0 ? nx : (axis == 1 ? ny : nz);
  }
  friend constexpr bool operator==(const Dims&, const Dims&) = default;
};

using Spacing = std::array<double, 3>;
using Affine = std::array<double, 16>;  // row-major 4x4 voxel-to-world
using Voxel = std::array<std::ptrdiff_t, 3>;

inline std::string to_string(const Dims& d) {
  return "(" + std::to_string(d.nx) + "," + std::to_string(d.ny) + "," + std::to_string(d.nz) + ")";
}

inline void require_same_dims(const Dims& a, const Dims& b, const char* what) {
  if (!(a == b))
    throw ArgumentError(std::string(what) + ": dimension mismatch " + to_string(a) + " vs " +
                        to_string(b));
}

/// Dense 3D grid of T.
template <class T>
class Grid {
 public:
  using value_type = T;

  Grid() = default;
  explicit Grid(Dims dims, T fill = T{}) : dims_(dims), data_(dims.size(), fill) {
    if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
      throw ArgumentError("grid dims must be positive, got " + to_string(dims));
  }
  Grid(Dims dims, std::vector<T> data) : dims_(dims), data_(std::move(data)) {
    if (dims.nx == 0 || dims.ny == 0 || dims.nz == 0)
      throw ArgumentError("grid dims must be positive, got " + to_string(dims));
    if (data_.size() != dims.size())
      throw ArgumentError("grid data length " + std::to_string(data_.size()) +
                          " does not match dims " + to_string(dims));
  }

  const Dims& dims() const { return dims_; }
  std::size_t size() const { return data_.size(); }

  T& operator[](std::size_t i) { return data_[i]; }
  const T& operator[](std::size_t i) const { return data_[i]; }
  T& operator()(std::size_t x, std::size_t y, std::size_t z) { return data_[dims_.index(x, y, z)]; }
  const T& operator()(std::size_t x, std::size_t y, std::size_t z) const {
    return data_[dims_.index(x, y, z)];
  }

  std::span<T> values() { return data_; }
  std::span<const T> values() const { return data_; }
  const std::vector<T>& storage() const { return data_; }

  auto begin() { return data_.begin(); }
  auto end() { return data_.end(); }
  auto begin() const { return data_.begin(); }
  auto end() const { return data_.end(); }

  friend bool operator==(const Grid& a, const Grid& b) {
    return a.dims_ == b.dims_ && a.data_ == b.data_;
  }

 protected:
  Dims dims_;
  std::vector<T> data_;
};

/// Boolean voxel grid, stored one byte per voxel.
class BinaryMask : public Grid<std::uint8_t> {
 public:
  BinaryMask() = default;
  explicit BinaryMask(Dims dims, bool fill = false) : Grid(dims, fill ? 1 : 0) {}
  BinaryMask(Dims dims, std::vector<std::uint8_t> bits) : Grid(dims, std::move(bits)) {
    for (auto& b : data_) b = b ? 1 : 0;
  }

  static BinaryMask full(Dims dims) { return BinaryMask(dims, true); }

  bool test(std::size_t i) const { return data_[i] != 0; }
  bool test(std::size_t x, std::size_t y, std::size_t z) const { return (*this)(x, y, z) != 0; }
  void set(std::size_t i, bool v = true) { data_[i] = v ? 1 : 0; }

  std::size_t count() const {
    return static_cast<std::size_t>(std::count(data_.begin(), data_.end(), std::uint8_t{1}));
  }
  bool empty() const { return std::none_of(data_.begin(), data_.end(), [](auto b) { return b; }); }

  std::vector<std::size_t> indices() const {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (data_[i]) out.push_back(i);
    return out;
  }

  BinaryMask& operator|=(const BinaryMask& o) {
    require_same_dims(dims_, o.dims_, "mask union");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] |= o.data_[i];
    return *this;
  }
  BinaryMask& operator&=(const BinaryMask& o) {
    require_same_dims(dims_, o.dims_, "mask intersection");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] &= o.data_[i];
    return *this;
  }
  /// Set difference: this \ o.
  BinaryMask& operator-=(const BinaryMask& o) {
    require_same_dims(dims_, o.dims_, "mask difference");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] = data_[i] && !o.data_[i];
    return *this;
  }
  friend BinaryMask operator|(BinaryMask a, const BinaryMask& b) { return a |= b; }
  friend BinaryMask operator&(BinaryMask a, const BinaryMask& b) { return a &= b; }
  friend BinaryMask operator-(BinaryMask a, const BinaryMask& b) { return a -= b; }
  friend BinaryMask operator~(BinaryMask a) {
    for (auto& b : a.data_) b = b ? 0 : 1;
    return a;
  }
};

inline std::size_t intersection_count(const BinaryMask& a, const BinaryMask& b) {
  require_same_dims(a.dims(), b.dims(), "intersection_count");
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.size(); ++i) n += (a[i] && b[i]) ? 1 : 0;
  return n;
}

/// Inclusive voxel bounding box.
struct BoundingBox {
  Voxel lo{0, 0, 0};
  Voxel hi{-1, -1, -1};
  bool empty() const { return hi[0] < lo[0]; }
  Dims extent() const {
    return {static_cast<std::size_t>(hi[0] - lo[0] + 1), static_cast<std::size_t>(hi[1] - lo[1] + 1),
            static_cast<std::size_t>(hi[2] - lo[2] + 1)};
  }
  BoundingBox grown(std::ptrdiff_t margin, const Dims& clamp) const {
    BoundingBox b = *this;
    for (int a = 0; a < 3; ++a) {
      b.lo[a] = std::max<std::ptrdiff_t>(0, b.lo[a] - margin);
      b.hi[a] = std::min<std::ptrdiff_t>(static_cast<std::ptrdiff_t>(clamp[a]) - 1, b.hi[a] + margin);
    }
    return b;
  }
};

inline BoundingBox bounding_box(const BinaryMask& m) {
  BoundingBox b{{PTRDIFF_MAX, PTRDIFF_MAX, PTRDIFF_MAX}, {-1, -1, -1}};
  const Dims& d = m.dims();
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x)
        if (m.test(x, y, z)) {
          Voxel v{static_cast<std::ptrdiff_t>(x), static_cast<std::ptrdiff_t>(y),
                  static_cast<std::ptrdiff_t>(z)};
          for (int a = 0; a < 3; ++a) {
            b.lo[a] = std::min(b.lo[a], v[a]);
            b.hi[a] = std::max(b.hi[a], v[a]);
          }
        }
  if (b.hi[0] < 0) return BoundingBox{};
  return b;
}

/// Copy the sub-grid [box.lo, box.hi] of `g`.
template <class G>
G crop(const G& g, const BoundingBox& box) {
  Dims e = box.extent();
  G out;
  static_cast<Grid<typename G::value_type>&>(out) = Grid<typename G::value_type>(e);
  for (std::size_t z = 0; z < e.nz; ++z)
    for (std::size_t y = 0; y < e.ny; ++y)
      for (std::size_t x = 0; x < e.nx; ++x)
        out(x, y, z) = g(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
  return out;
}

/// Write `part` into `g` with its origin at `origin`.
template <class G, class P>
void paste(G& g, const P& part, const Voxel& origin) {
  const Dims& e = part.dims();
  for (std::size_t z = 0; z < e.nz; ++z)
    for (std::size_t y = 0; y < e.ny; ++y)
      for (std::size_t x = 0; x < e.nx; ++x)
        g(x + origin[0], y + origin[1], z + origin[2]) = part(x, y, z);
}

inline void validate_spacing(const Spacing& s) {
  for (double v : s)
    if (!(v > 0.0) || !std::isfinite(v))
      throw ArgumentError("spacing components must be finite and > 0");
}

/// Scalar intensity volume. Intensities are float32 regardless of the
/// on-disk type and are always finite.
class Volume : public Grid<float> {
 public:
  Volume() = default;
  explicit Volume(Dims dims, float fill = 0.0f, Spacing spacing = {1.0, 1.0, 1.0},
                  std::optional<Affine> affine = std::nullopt)
      : Grid(dims, fill), spacing_(spacing), affine_(affine) {
    validate_spacing(spacing_);
    if (!std::isfinite(fill)) throw ArgumentError("volume fill value must be finite");
  }
  Volume(Dims dims, std::vector<float> data, Spacing spacing = {1.0, 1.0, 1.0},
         std::optional<Affine> affine = std::nullopt)
      : Grid(dims, std::move(data)), spacing_(spacing), affine_(affine) {
    validate_spacing(spacing_);
    for (float v : data_)
      if (!std::isfinite(v)) throw ArgumentError("volume intensities must be finite");
  }

  const Spacing& spacing() const { return spacing_; }
  const std::optional<Affine>& affine() const { return affine_; }

  /// A volume with the same geometry and new data.
  Volume with_data(std::vector<float> data) const { return Volume(dims_, std::move(data), spacing_, affine_); }

  friend bool operator==(const Volume& a, const Volume& b) {
    return static_cast<const Grid<float>&>(a) == static_cast<const Grid<float>&>(b) &&
           a.spacing_ == b.spacing_ && a.affine_ == b.affine_;
  }

 private:
  Spacing spacing_{1.0, 1.0, 1.0};
  std::optional<Affine> affine_;
};

using LabelTable = std::map<std::int32_t, std::string>;

/// Integer atlas labels plus the id -> structure-name table. Label 0 is
/// background and never appears in the table.
class LabelVolume : public Grid<std::int32_t> {
 public:
  LabelVolume() = default;
  LabelVolume(Dims dims, std::vector<std::int32_t> labels, LabelTable table,
              Spacing spacing = {1.0, 1.0, 1.0}, std::optional<Affine> affine = std::nullopt)
      : Grid(dims, std::move(labels)), table_(std::move(table)), spacing_(spacing), affine_(affine) {
    validate_spacing(spacing_);
    validate();
  }

  const LabelTable& table() const { return table_; }
  const Spacing& spacing() const { return spacing_; }
  const std::optional<Affine>& affine() const { return affine_; }

  const std::string& name_of(std::int32_t id) const {
    auto it = table_.find(id);
    if (it == table_.end()) throw LookupError("label id " + std::to_string(id) + " not in table");
    return it->second;
  }

  /// Nonzero labels that occur in the grid, ascending.
  std::vector<std::int32_t> present_labels() const {
    std::set<std::int32_t> s;
    for (auto v : data_)
      if (v != 0) s.insert(v);
    return {s.begin(), s.end()};
  }

  BinaryMask mask_of(std::int32_t id) const {
    BinaryMask m(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (data_[i] == id) m.set(i);
    return m;
  }

  /// Union of all nonzero labels.
  BinaryMask foreground() const {
    BinaryMask m(dims_);
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (data_[i] != 0) m.set(i);
    return m;
  }

 private:
  void validate() const {
    std::set<std::string> names;
    for (const auto& [id, name] : table_) {
      if (id <= 0) throw ValidationError("label table ids must be > 0, got " + std::to_string(id));
      if (!names.insert(name).second) throw ValidationError("duplicate structure name '" + name + "'");
    }
    std::set<std::int32_t> missing;
    for (auto v : data_) {
      if (v < 0) throw ValidationError("negative label value " + std::to_string(v));
      if (v != 0 && !table_.count(v)) missing.insert(v);
    }
    if (!missing.empty()) {
      std::string ids;
      for (auto id : missing) ids += (ids.empty() ? "" : ", ") + std::to_string(id);
      throw ValidationError("labels missing from table: " + ids);
    }
  }

  LabelTable table_;
  Spacing spacing_{1.0, 1.0, 1.0};
  std::optional<Affine> affine_;
};

/// Z-score normalization over `foreground` (or the whole grid). Voxels
/// outside the foreground are set to 0. A zero-variance foreground maps to 0.
inline Volume zscore_normalize(const Volume& v, const std::optional<BinaryMask>& foreground = std::nullopt) {
  if (foreground) {
    require_same_dims(v.dims(), foreground->dims(), "zscore_normalize");
    if (foreground->empty()) throw ArgumentError("zscore_normalize: empty foreground mask");
  }
  auto inside = [&](std::size_t i) { return !foreground || foreground->test(i); };
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (inside(i)) {
      sum += v[i];
      ++n;
    }
  const double mean = sum / static_cast<double>(n);
  double ss = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i)
    if (inside(i)) ss += (v[i] - mean) * (v[i] - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));

  std::vector<float> out(v.size(), 0.0f);
  if (sd > 0.0) {
    for (std::size_t i = 0; i < v.size(); ++i)
      if (inside(i)) out[i] = static_cast<float>((v[i] - mean) / sd);
  }
  return v.with_data(std::move(out));
}

}  // namespace lesionforge
