#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <vector>

#include "lesionforge/error.hpp"
#include "lesionforge/rng.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

struct StructuringElement {
  enum class Kind { Ball, Cube };

  Kind kind = Kind::Ball;
  int radius = 1;

  StructuringElement() = default;
  StructuringElement(Kind k, int r) : kind(k), radius(r) {
    if (r < 1) throw ArgumentError("structuring element radius must be >= 1");
  }
  static StructuringElement ball(int r) { return {Kind::Ball, r}; }
  static StructuringElement cube(int r) { return {Kind::Cube, r}; }

  /// Offsets of the element, including the origin. A ball keeps offsets
  /// with Euclidean norm <= radius.
  std::vector<Voxel> offsets() const {
    std::vector<Voxel> out;
    for (int dz = -radius; dz <= radius; ++dz)
      for (int dy = -radius; dy <= radius; ++dy)
        for (int dx = -radius; dx <= radius; ++dx)
          if (kind == Kind::Cube || dx * dx + dy * dy + dz * dz <= radius * radius) out.push_back({dx, dy, dz});
    return out;
  }
};

/// Minkowski sum of the mask with the element, clipped to the grid.
inline BinaryMask dilate(const BinaryMask& m, const StructuringElement& se) {
  BinaryMask out(m.dims());
  const BoundingBox box = bounding_box(m);
  if (box.empty()) return out;
  const auto offs = se.offsets();
  const Dims& d = m.dims();
  for (std::ptrdiff_t z = box.lo[2]; z <= box.hi[2]; ++z)
    for (std::ptrdiff_t y = box.lo[1]; y <= box.hi[1]; ++y)
      for (std::ptrdiff_t x = box.lo[0]; x <= box.hi[0]; ++x) {
        if (!m.test(d.index(x, y, z))) continue;
        for (const auto& o : offs) {
          const std::ptrdiff_t qx = x + o[0], qy = y + o[1], qz = z + o[2];
          if (d.contains(qx, qy, qz)) out.set(d.index(qx, qy, qz));
        }
      }
  return out;
}

/// A voxel survives iff every element offset lands on a set voxel; offsets
/// falling outside the grid count as unset.
inline BinaryMask erode(const BinaryMask& m, const StructuringElement& se) {
  BinaryMask out(m.dims());
  const BoundingBox box = bounding_box(m);
  if (box.empty()) return out;
  const auto offs = se.offsets();
  const Dims& d = m.dims();
  for (std::ptrdiff_t z = box.lo[2]; z <= box.hi[2]; ++z)
    for (std::ptrdiff_t y = box.lo[1]; y <= box.hi[1]; ++y)
      for (std::ptrdiff_t x = box.lo[0]; x <= box.hi[0]; ++x) {
        const std::size_t i = d.index(x, y, z);
        if (!m.test(i)) continue;
        bool keep = true;
        for (const auto& o : offs) {
          const std::ptrdiff_t qx = x + o[0], qy = y + o[1], qz = z + o[2];
          if (!d.contains(qx, qy, qz) || !m.test(d.index(qx, qy, qz))) {
            keep = false;
            break;
          }
        }
        if (keep) out.set(i);
      }
  return out;
}

/// dilate(m) \ erode(m): the boundary shell of a solid region, one element
/// radius thick on either side of the edge.
inline BinaryMask morphological_gradient(const BinaryMask& m, const StructuringElement& se) {
  return dilate(m, se) - erode(m, se);
}

/// Normalized 1-D Gaussian weights for offsets -R..R, R = ceil(4 sigma).
inline std::vector<double> gaussian_kernel(double sigma) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("gaussian_kernel: sigma must be > 0");
  const int r = static_cast<int>(std::ceil(4.0 * sigma));
  std::vector<double> w(2 * r + 1);
  double sum = 0.0;
  for (int k = -r; k <= r; ++k) {
    w[k + r] = std::exp(-(static_cast<double>(k) * k) / (2.0 * sigma * sigma));
    sum += w[k + r];
  }
  for (auto& v : w) v /= sum;
  return w;
}

namespace detail {

// One separable pass along `axis` with edge replication.
inline void convolve_axis(Grid<float>& g, int axis, const std::vector<double>& w) {
  const Dims d = g.dims();
  const auto r = static_cast<std::ptrdiff_t>(w.size() / 2);
  const auto n = static_cast<std::ptrdiff_t>(d[axis]);
  const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? d.nx : d.nx * d.ny);
  const std::size_t lines = d.size() / d[axis];
  std::vector<float> line(static_cast<std::size_t>(n));
  for (std::size_t l = 0; l < lines; ++l) {
    std::size_t start;
    if (axis == 0) {
      start = l * d.nx;
    } else if (axis == 1) {
      start = (l % d.nx) + (l / d.nx) * d.nx * d.ny;
    } else {
      start = l;
    }
    for (std::ptrdiff_t i = 0; i < n; ++i) line[i] = g[start + i * stride];
    for (std::ptrdiff_t i = 0; i < n; ++i) {
      double acc = 0.0;
      for (std::ptrdiff_t k = -r; k <= r; ++k) {
        const std::ptrdiff_t j = std::clamp<std::ptrdiff_t>(i + k, 0, n - 1);
        acc += w[k + r] * line[j];
      }
      g[start + i * stride] = static_cast<float>(acc);
    }
  }
}

}  // namespace detail

/// Separable Gaussian smoothing with per-axis sigma in voxels; sigma 0 leaves
/// that axis untouched. Borders replicate the edge voxel.
template <class G>
G gaussian_blur(const G& v, const std::array<double, 3>& sigma) {
  for (double s : sigma)
    if (!(s >= 0.0) || !std::isfinite(s)) throw ArgumentError("gaussian_blur: sigma must be finite and >= 0");
  G out = v;
  for (int a = 0; a < 3; ++a)
    if (sigma[a] > 0.0) detail::convolve_axis(out, a, gaussian_kernel(sigma[a]));
  return out;
}

enum class Connectivity { Six = 6, TwentySix = 26 };

inline std::vector<Voxel> neighbor_offsets(Connectivity c) {
  std::vector<Voxel> out;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0) continue;
        if (c == Connectivity::Six && manhattan != 1) continue;
        out.push_back({dx, dy, dz});
      }
  return out;
}

struct ComponentLabels {
  Grid<std::int32_t> labels;  // 0 background, k+1 for the k-th component
  struct Info {
    std::size_t voxels = 0;
    std::size_t first_index = 0;  // smallest linear index in the component
  };
  std::vector<Info> components;
};

/// Label connected components. Components are numbered by decreasing size,
/// ties broken by the smallest member linear index.
inline ComponentLabels label_components(const BinaryMask& m, Connectivity conn = Connectivity::TwentySix) {
  const Dims& d = m.dims();
  Grid<std::int32_t> raw(d, 0);
  std::vector<ComponentLabels::Info> info;
  const auto offs = neighbor_offsets(conn);
  std::vector<std::size_t> stack;
  for (std::size_t seed = 0; seed < m.size(); ++seed) {
    if (!m.test(seed) || raw[seed] != 0) continue;
    const auto id = static_cast<std::int32_t>(info.size() + 1);
    ComponentLabels::Info ci{0, seed};  // scan order makes the seed the minimum index
    raw[seed] = id;
    stack.push_back(seed);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      ++ci.voxels;
      const auto c = d.coords(i);
      for (const auto& o : offs) {
        const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(c[0]) + o[0];
        const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(c[1]) + o[1];
        const std::ptrdiff_t z = static_cast<std::ptrdiff_t>(c[2]) + o[2];
        if (!d.contains(x, y, z)) continue;
        const std::size_t j = d.index(x, y, z);
        if (m.test(j) && raw[j] == 0) {
          raw[j] = id;
          stack.push_back(j);
        }
      }
    }
    info.push_back(ci);
  }

  std::vector<std::size_t> order(info.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (info[a].voxels != info[b].voxels) return info[a].voxels > info[b].voxels;
    return info[a].first_index < info[b].first_index;
  });
  std::vector<std::int32_t> rank(info.size() + 1, 0);
  ComponentLabels out;
  for (std::size_t k = 0; k < order.size(); ++k) {
    rank[order[k] + 1] = static_cast<std::int32_t>(k + 1);
    out.components.push_back(info[order[k]]);
  }
  for (auto& v : raw) v = rank[v];
  out.labels = std::move(raw);
  return out;
}

/// Split a mask into its connected components (see label_components for the
/// ordering).
inline std::vector<BinaryMask> connected_components(const BinaryMask& m, Connectivity conn = Connectivity::TwentySix) {
  const auto cl = label_components(m, conn);
  std::vector<BinaryMask> out(cl.components.size(), BinaryMask(m.dims()));
  for (std::size_t i = 0; i < m.size(); ++i)
    if (cl.labels[i] > 0) out[cl.labels[i] - 1].set(i);
  return out;
}

/// Per-voxel displacement vectors in voxel units, one grid per axis.
struct DisplacementField {
  std::array<Grid<float>, 3> components;

  const Dims& dims() const { return components[0].dims(); }
};

/// i.i.d. uniform [-1, 1] noise per component (x, then y, then z, each in
/// linear voxel order), Gaussian-smoothed with `sigma` and scaled by `alpha`.
inline DisplacementField random_displacement_field(const Dims& dims, double alpha, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0)) throw ArgumentError("elastic deformation sigma must be > 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ArgumentError("elastic deformation alpha must be >= 0");
  Pcg32 rng(seed);
  DisplacementField f;
  for (auto& c : f.components) {
    c = Grid<float>(dims, 0.0f);
    for (auto& v : c) v = static_cast<float>(2.0 * rng.uniform01() - 1.0);
    c = gaussian_blur(c, {sigma, sigma, sigma});
    for (auto& v : c) v = static_cast<float>(alpha * v);
  }
  return f;
}

/// Trilinear sample of a mask treated as 0/1 reals; outside reads as 0.
inline double sample_trilinear(const BinaryMask& m, double px, double py, double pz) {
  const Dims& d = m.dims();
  const double fx = std::floor(px), fy = std::floor(py), fz = std::floor(pz);
  const auto x0 = static_cast<std::ptrdiff_t>(fx), y0 = static_cast<std::ptrdiff_t>(fy),
             z0 = static_cast<std::ptrdiff_t>(fz);
  const double tx = px - fx, ty = py - fy, tz = pz - fz;
  double acc = 0.0;
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i) {
        const std::ptrdiff_t x = x0 + i, y = y0 + j, z = z0 + k;
        if (!d.contains(x, y, z) || !m.test(d.index(x, y, z))) continue;
        acc += (i ? tx : 1.0 - tx) * (j ? ty : 1.0 - ty) * (k ? tz : 1.0 - tz);
      }
  return acc;
}

/// Backward warp: out(p) = [trilinear(m, p - u(p)) >= 0.5].
inline BinaryMask warp(const BinaryMask& m, const DisplacementField& f) {
  require_same_dims(m.dims(), f.dims(), "warp");
  const Dims& d = m.dims();
  BinaryMask out(d);
  for (std::size_t z = 0; z < d.nz; ++z)
    for (std::size_t y = 0; y < d.ny; ++y)
      for (std::size_t x = 0; x < d.nx; ++x) {
        const std::size_t i = d.index(x, y, z);
        const double v = sample_trilinear(m, static_cast<double>(x) - f.components[0][i],
                                          static_cast<double>(y) - f.components[1][i],
                                          static_cast<double>(z) - f.components[2][i]);
        if (v >= 0.5) out.set(i);
      }
  return out;
}

/// Random elastic deformation of a binary shape. alpha 0 is the identity.
inline BinaryMask elastic_deform(const BinaryMask& m, double alpha, double sigma, std::uint64_t seed) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) throw ArgumentError("elastic_deform: sigma must be > 0");
  if (!(alpha >= 0.0) || !std::isfinite(alpha)) throw ArgumentError("elastic_deform: alpha must be >= 0");
  if (alpha == 0.0) return m;
  return warp(m, random_displacement_field(m.dims(), alpha, sigma, seed));
}

}  // namespace lesionforge
