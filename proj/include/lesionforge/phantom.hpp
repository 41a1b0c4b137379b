#pragma once

// Synthetic test brain: an ellipsoidal head split into lobes, deep nuclei and
// a brainstem, with per-structure intensities plus uniform noise. Used by the
// tests, the acceptance suite and the `fixture` CLI verb.

#include <cmath>
#include <cstdint>
#include <vector>

#include "lesionforge/rng.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

struct Phantom {
  Volume volume;
  LabelVolume labels;
};

inline LabelTable phantom_label_table() {
  return {{1, "Left Frontal Lobe"},  {2, "Right Frontal Lobe"}, {3, "Left Parietal Lobe"},
          {4, "Right Parietal Lobe"}, {5, "Left Occipital Lobe"}, {6, "Right Occipital Lobe"},
          {7, "Left Thalamus"},       {8, "Right Thalamus"},       {9, "Brainstem"}};
}

/// Dims must be at least 16 on every axis.
inline Phantom make_phantom(const Dims& dims, std::uint64_t seed) {
  if (dims.nx < 16 || dims.ny < 16 || dims.nz < 16) throw ArgumentError("make_phantom: dims must be >= 16 per axis");
  Pcg32 rng(seed, 0x70a2a5e1ULL);
  const double cx = (dims.nx - 1) / 2.0, cy = (dims.ny - 1) / 2.0, cz = (dims.nz - 1) / 2.0;
  const double rx = 0.45 * dims.nx, ry = 0.45 * dims.ny, rz = 0.42 * dims.nz;

  // Mean intensity per label, index 0 unused.
  constexpr double base[10] = {0.0, 520, 540, 480, 500, 610, 590, 700, 690, 420};
  std::vector<std::int32_t> lab(dims.size(), 0);
  std::vector<float> img(dims.size(), 0.0f);
  for (std::size_t z = 0; z < dims.nz; ++z)
    for (std::size_t y = 0; y < dims.ny; ++y)
      for (std::size_t x = 0; x < dims.nx; ++x) {
        const double u = (x - cx) / rx, v = (y - cy) / ry, w = (z - cz) / rz;
        const std::size_t i = dims.index(x, y, z);
        const double tu = (x - cx) / (0.16 * dims.nx), tv = (y - cy) / (0.12 * dims.ny), tw = (z - cz) / (0.12 * dims.nz);
        const bool left = x < cx;
        std::int32_t id = 0;
        const double su = (x - cx) / (0.12 * dims.nx), sv = (y - cy) / (0.12 * dims.ny);
        if (u * u + v * v + w * w > 1.0) {
          id = 0;
        } else if (w < -0.3 && su * su + sv * sv <= 1.0) {
          id = 9;  // column below the thalami
        } else {
          if (std::abs(tu) <= 1.0 && tv * tv + tw * tw <= 1.0) id = left ? 7 : 8;
          else if (v > 0.25) id = left ? 1 : 2;
          else if (v > -0.35) id = left ? 3 : 4;
          else id = left ? 5 : 6;
        }
        lab[i] = id;
        if (id != 0) img[i] = static_cast<float>(base[id] + rng.uniform_closed(-40.0, 40.0));
        else img[i] = static_cast<float>(rng.uniform_closed(0.0, 5.0));
      }
  Phantom p{Volume(dims, std::move(img), {1.0, 1.0, 1.0}),
            LabelVolume(dims, std::move(lab), phantom_label_table(), {1.0, 1.0, 1.0})};
  return p;
}

}  // namespace lesionforge
