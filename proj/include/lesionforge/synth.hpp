#pragma once

// Signal-aware synthetic lesion generation: pick an atlas location, grow a
// shape (ellipsoid or atlas structure, elastically deformed), sample a lesion
// intensity from the local intensity statistics and inpaint it.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lesionforge/error.hpp"
#include "lesionforge/morphology.hpp"
#include "lesionforge/rng.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

struct IntRange {
  std::int64_t lo = 1, hi = 1;
  friend bool operator==(const IntRange&, const IntRange&) = default;
};

struct RealRange {
  double lo = 0.0, hi = 0.0;
  friend bool operator==(const RealRange&, const RealRange&) = default;
};

enum class Polarity { Hyper, Hypo };

inline const char* to_string(Polarity p) { return p == Polarity::Hyper ? "hyper" : "hypo"; }

struct SynthConfig {
  /// Intensity shift. When unset, 0.1 * (i_max - i_min) of the target region.
  std::optional<double> epsilon;
  double sigma_b = 2.0;
  IntRange lesion_count_range{1, 3};
  double edge_probability = 0.2;
  std::array<double, 2> shape_source_weights{0.7, 0.3};  // ellipsoid, atlas structure
  std::array<RealRange, 3> ellipsoid_axes_range{{{2.0, 6.0}, {2.0, 6.0}, {2.0, 6.0}}};
  double elastic_alpha = 60.0;
  double elastic_sigma = 3.0;
  std::array<double, 2> polarity_weights{0.5, 0.5};  // hyper, hypo
  std::uint64_t seed = 0;
  int max_placement_attempts = 20;

  void validate() const {
    auto fail = [](const std::string& m) { throw ValidationError("synth config: " + m); };
    if (epsilon && (!(*epsilon >= 0.0) || !std::isfinite(*epsilon))) fail("epsilon must be >= 0");
    if (!(sigma_b > 0.0) || !std::isfinite(sigma_b)) fail("sigma_b must be > 0");
    if (lesion_count_range.lo < 1 || lesion_count_range.hi < lesion_count_range.lo)
      fail("lesion_count_range must satisfy 1 <= lo <= hi");
    if (!(edge_probability >= 0.0 && edge_probability <= 1.0)) fail("edge_probability must lie in [0, 1]");
    for (double w : shape_source_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) fail("shape_source_weights must be non-negative");
    if (shape_source_weights[0] + shape_source_weights[1] <= 0.0) fail("shape_source_weights are both zero");
    for (const auto& r : ellipsoid_axes_range)
      if (!(r.lo > 0.0) || r.hi < r.lo || !std::isfinite(r.hi)) fail("ellipsoid_axes_range must satisfy 0 < lo <= hi");
    if (!(elastic_alpha >= 0.0) || !std::isfinite(elastic_alpha)) fail("elastic_alpha must be >= 0");
    if (!(elastic_sigma > 0.0) || !std::isfinite(elastic_sigma)) fail("elastic_sigma must be > 0");
    for (double w : polarity_weights)
      if (!(w >= 0.0) || !std::isfinite(w)) fail("polarity_weights must be non-negative");
    if (polarity_weights[0] + polarity_weights[1] <= 0.0) fail("polarity_weights are both zero");
    if (max_placement_attempts < 1) fail("max_placement_attempts must be >= 1");
  }
};

struct RegionStats {
  double i_avg = 0.0, i_min = 0.0, i_max = 0.0;
};

struct ShapeOrigin {
  enum class Kind { Ellipsoid, Structure };
  Kind kind = Kind::Ellipsoid;
  std::int32_t label = 0;  // structure id when kind == Structure
  friend bool operator==(const ShapeOrigin&, const ShapeOrigin&) = default;
};

struct LesionRecord {
  std::int32_t structure_id = 0;
  Voxel center{0, 0, 0};
  bool on_edge = false;
  Polarity polarity = Polarity::Hyper;
  double i_a = 0.0;
  std::size_t shape_voxels = 0;  // after placement and clipping
  ShapeOrigin shape_origin;
  RegionStats region;           // intensity statistics of the placed region before inpainting
  double epsilon = 0.0;         // shift actually used
  double lesion_mean = 0.0;     // mean intensity over the placed region after inpainting
};

struct Location {
  std::int32_t structure_id = 0;
  Voxel center{0, 0, 0};
  bool on_edge = false;
};

/// Pick a structure uniformly among the labels present, then a center voxel
/// uniformly from its boundary shell (with probability `edge_probability`) or
/// from its eroded interior. An empty pool falls back to the whole structure.
inline Location select_location(const LabelVolume& labels, double edge_probability, Pcg32& rng) {
  const auto present = labels.present_labels();
  if (present.empty()) throw ArgumentError("select_location: label grid is entirely background");
  const auto id = present[rng.below(static_cast<std::uint32_t>(present.size()))];
  const bool edge = rng.bernoulli(edge_probability);

  // Work inside the structure's bounding box grown by the element radius.
  const BinaryMask full = labels.mask_of(id);
  const BoundingBox box = bounding_box(full).grown(1, labels.dims());
  const BinaryMask mask = crop(full, box);
  const auto se = StructuringElement::ball(1);
  BinaryMask pool = edge ? morphological_gradient(mask, se) : erode(mask, se);
  if (pool.empty()) pool = mask;
  const auto idx = pool.indices();
  const auto c = pool.dims().coords(idx[rng.below(static_cast<std::uint32_t>(idx.size()))]);
  return {id,
          {box.lo[0] + static_cast<std::ptrdiff_t>(c[0]), box.lo[1] + static_cast<std::ptrdiff_t>(c[1]),
           box.lo[2] + static_cast<std::ptrdiff_t>(c[2])},
          edge};
}

/// Discrete axis-aligned ellipsoid with the given semi-axes, centered in a
/// grid padded by `pad` voxels on every side.
inline BinaryMask ellipsoid_mask(const std::array<double, 3>& semi, int pad = 0) {
  std::array<std::ptrdiff_t, 3> ext{};
  for (int a = 0; a < 3; ++a) ext[a] = static_cast<std::ptrdiff_t>(std::floor(semi[a]));
  const Dims d{static_cast<std::size_t>(2 * (ext[0] + pad) + 1), static_cast<std::size_t>(2 * (ext[1] + pad) + 1),
               static_cast<std::size_t>(2 * (ext[2] + pad) + 1)};
  BinaryMask m(d);
  const double a2 = semi[0] * semi[0], b2 = semi[1] * semi[1], c2 = semi[2] * semi[2];
  for (std::ptrdiff_t z = -ext[2]; z <= ext[2]; ++z)
    for (std::ptrdiff_t y = -ext[1]; y <= ext[1]; ++y)
      for (std::ptrdiff_t x = -ext[0]; x <= ext[0]; ++x) {
        // x^2/a^2 + y^2/b^2 + z^2/c^2 <= 1, multiplied out to stay exact for integral axes
        const double lhs = double(x * x) * b2 * c2 + double(y * y) * a2 * c2 + double(z * z) * a2 * b2;
        if (lhs <= a2 * b2 * c2)
          m.set(d.index(x + ext[0] + pad, y + ext[1] + pad, z + ext[2] + pad));
      }
  return m;
}

struct Shape {
  BinaryMask mask;  // tight bounding grid of the shape
  ShapeOrigin origin;
};

namespace detail {

inline BinaryMask pad_mask(const BinaryMask& m, int pad) {
  const Dims& d = m.dims();
  BinaryMask out({d.nx + 2 * pad, d.ny + 2 * pad, d.nz + 2 * pad});
  paste(out, m, {pad, pad, pad});
  return out;
}

inline BinaryMask tight(const BinaryMask& m) { return crop(m, bounding_box(m)); }

}  // namespace detail

/// Draw an initial shape (ellipsoid or a copy of an atlas structure) and
/// deform it elastically. Retries up to 5 times when the deformation erases
/// the shape.
inline Shape generate_shape(const LabelVolume& labels, const SynthConfig& cfg, Pcg32& rng) {
  const double w_total = cfg.shape_source_weights[0] + cfg.shape_source_weights[1];
  const bool ellipsoid = rng.uniform01() * w_total < cfg.shape_source_weights[0];
  const int pad = cfg.elastic_alpha > 0.0 ? 2 : 0;

  Shape s;
  BinaryMask initial;
  if (ellipsoid) {
    std::array<double, 3> semi{};
    for (int a = 0; a < 3; ++a)
      semi[a] = rng.uniform_closed(cfg.ellipsoid_axes_range[a].lo, cfg.ellipsoid_axes_range[a].hi);
    initial = ellipsoid_mask(semi, pad);
    s.origin = {ShapeOrigin::Kind::Ellipsoid, 0};
  } else {
    const auto present = labels.present_labels();
    if (present.empty()) throw ArgumentError("generate_shape: label grid is entirely background");
    const auto id = present[rng.below(static_cast<std::uint32_t>(present.size()))];
    initial = detail::pad_mask(detail::tight(labels.mask_of(id)), pad);
    s.origin = {ShapeOrigin::Kind::Structure, id};
  }

  for (int attempt = 0; attempt < 5; ++attempt) {
    BinaryMask deformed = elastic_deform(initial, cfg.elastic_alpha, cfg.elastic_sigma, rng.next_u64());
    if (!deformed.empty()) {
      s.mask = detail::tight(deformed);
      return s;
    }
  }
  throw SynthesisError("generate_shape: elastic deformation erased the shape in 5 attempts");
}

/// Mean / min / max intensity over a non-empty region.
inline RegionStats region_stats(const Volume& v, const BinaryMask& region) {
  require_same_dims(v.dims(), region.dims(), "region_stats");
  RegionStats s{0.0, INFINITY, -INFINITY};
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (!region.test(i)) continue;
    const double x = v[i];
    sum += x;
    s.i_min = std::min(s.i_min, x);
    s.i_max = std::max(s.i_max, x);
    ++n;
  }
  if (n == 0) throw ArgumentError("region_stats: empty region");
  s.i_avg = sum / static_cast<double>(n);
  return s;
}

/// Lesion peak intensity: U(avg + eps, max) for hyper, U(min, avg - eps) for
/// hypo, both open intervals.
inline double sample_intensity(const RegionStats& stats, Polarity polarity, double epsilon, Pcg32& rng) {
  const double lo = polarity == Polarity::Hyper ? stats.i_avg + epsilon : stats.i_min;
  const double hi = polarity == Polarity::Hyper ? stats.i_max : stats.i_avg - epsilon;
  if (!(lo < hi))
    throw DegenerateIntervalError(std::string("sample_intensity: empty ") + to_string(polarity) + " interval (" +
                                  std::to_string(lo) + ", " + std::to_string(hi) + ")");
  return rng.uniform_open(lo, hi);
}

/// Radial lesion profile: base + (i_a - base) * exp(-d^2 / (2 sigma_b^2)),
/// where d is the distance to the shape's center of mass and base is the
/// region's mean intensity.
inline double lesion_profile(double base, double i_a, double distance, double sigma_b) {
  return base + (i_a - base) * std::exp(-(distance * distance) / (2.0 * sigma_b * sigma_b));
}

inline std::array<double, 3> center_of_mass(const BinaryMask& m) {
  std::array<double, 3> c{0, 0, 0};
  std::size_t n = 0;
  const Dims& d = m.dims();
  for (std::size_t i = 0; i < m.size(); ++i)
    if (m.test(i)) {
      const auto p = d.coords(i);
      for (int a = 0; a < 3; ++a) c[a] += static_cast<double>(p[a]);
      ++n;
    }
  if (n == 0) throw ArgumentError("center_of_mass: empty mask");
  for (auto& v : c) v /= static_cast<double>(n);
  return c;
}

/// Replace the shape's voxels with the radial profile and feather the 2-voxel
/// band just outside the shape with a Gaussian blur (sigma_b). Voxels outside
/// dilate(shape, ball 2) are returned bit-identical.
inline Volume inpaint_lesion(const Volume& v, const BinaryMask& shape, double i_a, double sigma_b) {
  if (!(sigma_b > 0.0) || !std::isfinite(sigma_b)) throw ArgumentError("inpaint_lesion: sigma_b must be > 0");
  require_same_dims(v.dims(), shape.dims(), "inpaint_lesion");
  if (shape.empty()) throw ArgumentError("inpaint_lesion: empty shape");

  const double base = region_stats(v, shape).i_avg;
  const auto com = center_of_mass(shape);
  const Dims& d = v.dims();

  Volume out = v;
  for (std::size_t i = 0; i < out.size(); ++i) {
    if (!shape.test(i)) continue;
    const auto p = d.coords(i);
    const double dx = p[0] - com[0], dy = p[1] - com[1], dz = p[2] - com[2];
    out[i] = static_cast<float>(lesion_profile(base, i_a, std::sqrt(dx * dx + dy * dy + dz * dz), sigma_b));
  }

  const BinaryMask band = dilate(shape, StructuringElement::ball(2)) - shape;
  if (band.empty()) return out;
  // Blur only the neighbourhood the band can see; identical to a full blur.
  const auto reach = static_cast<std::ptrdiff_t>(std::ceil(4.0 * sigma_b));
  const BoundingBox box = bounding_box(band).grown(reach, d);
  const Grid<float> blurred = gaussian_blur(crop(static_cast<const Grid<float>&>(out), box), {sigma_b, sigma_b, sigma_b});
  const Dims e = box.extent();
  for (std::size_t z = 0; z < e.nz; ++z)
    for (std::size_t y = 0; y < e.ny; ++y)
      for (std::size_t x = 0; x < e.nx; ++x) {
        const std::size_t gi = d.index(x + box.lo[0], y + box.lo[1], z + box.lo[2]);
        if (band.test(gi)) out[gi] = blurred(x, y, z);
      }
  return out;
}

/// Place a shape so that its grid center lands on `center`, clipped to `dims`.
inline BinaryMask place_shape(const BinaryMask& shape, const Voxel& center, const Dims& dims) {
  BinaryMask out(dims);
  const Dims& e = shape.dims();
  const Voxel anchor{static_cast<std::ptrdiff_t>(e.nx / 2), static_cast<std::ptrdiff_t>(e.ny / 2),
                     static_cast<std::ptrdiff_t>(e.nz / 2)};
  for (std::size_t z = 0; z < e.nz; ++z)
    for (std::size_t y = 0; y < e.ny; ++y)
      for (std::size_t x = 0; x < e.nx; ++x) {
        if (!shape.test(x, y, z)) continue;
        const std::ptrdiff_t gx = center[0] + static_cast<std::ptrdiff_t>(x) - anchor[0];
        const std::ptrdiff_t gy = center[1] + static_cast<std::ptrdiff_t>(y) - anchor[1];
        const std::ptrdiff_t gz = center[2] + static_cast<std::ptrdiff_t>(z) - anchor[2];
        if (dims.contains(gx, gy, gz)) out.set(dims.index(gx, gy, gz));
      }
  return out;
}

struct SynthResult {
  Volume volume;
  BinaryMask mask;                       // union of all placed lesions
  std::vector<LesionRecord> records;
  std::vector<BinaryMask> lesion_masks;  // aligned with records
};

/// Insert a random number of lesions. Later lesions overwrite earlier ones in
/// the image; the returned mask is the union. Deterministic in cfg.seed.
inline SynthResult synthesize(const Volume& v, const LabelVolume& labels, const SynthConfig& cfg) {
  cfg.validate();
  require_same_dims(v.dims(), labels.dims(), "synthesize");
  const BinaryMask foreground = labels.foreground();
  if (foreground.empty()) throw ArgumentError("synthesize: label grid is entirely background");

  Pcg32 rng(cfg.seed);
  const auto count = rng.uniform_int(cfg.lesion_count_range.lo, cfg.lesion_count_range.hi);
  const double polarity_total = cfg.polarity_weights[0] + cfg.polarity_weights[1];

  SynthResult r{v, BinaryMask(v.dims()), {}, {}};
  for (std::int64_t k = 0; k < count; ++k) {
    std::string attempted;
    bool placed_ok = false;
    for (int attempt = 0; attempt < cfg.max_placement_attempts && !placed_ok; ++attempt) {
      const Location loc = select_location(labels, cfg.edge_probability, rng);
      const Shape shape = generate_shape(labels, cfg, rng);
      const BinaryMask placed = place_shape(shape.mask, loc.center, v.dims()) & foreground;
      attempted += (attempted.empty() ? "" : "; ") + std::string("structure ") + std::to_string(loc.structure_id) +
                   " at (" + std::to_string(loc.center[0]) + "," + std::to_string(loc.center[1]) + "," +
                   std::to_string(loc.center[2]) + ")";
      if (placed.empty()) continue;

      const RegionStats stats = region_stats(r.volume, placed);
      const double eps = cfg.epsilon ? *cfg.epsilon : 0.1 * (stats.i_max - stats.i_min);
      Polarity polarity =
          rng.uniform01() * polarity_total < cfg.polarity_weights[0] ? Polarity::Hyper : Polarity::Hypo;
      double i_a = 0.0;
      try {
        i_a = sample_intensity(stats, polarity, eps, rng);
      } catch (const DegenerateIntervalError&) {
        polarity = polarity == Polarity::Hyper ? Polarity::Hypo : Polarity::Hyper;
        try {
          i_a = sample_intensity(stats, polarity, eps, rng);
        } catch (const DegenerateIntervalError&) {
          continue;
        }
      }

      Volume inpainted = inpaint_lesion(r.volume, placed, i_a, cfg.sigma_b);
      // Feathering must not leak into background air.
      for (std::size_t i = 0; i < inpainted.size(); ++i)
        if (!foreground.test(i)) inpainted[i] = r.volume[i];
      r.volume = std::move(inpainted);

      LesionRecord rec;
      rec.structure_id = loc.structure_id;
      rec.center = loc.center;
      rec.on_edge = loc.on_edge;
      rec.polarity = polarity;
      rec.i_a = i_a;
      rec.shape_voxels = placed.count();
      rec.shape_origin = shape.origin;
      rec.region = stats;
      rec.epsilon = eps;
      rec.lesion_mean = region_stats(r.volume, placed).i_avg;
      r.records.push_back(rec);
      r.mask |= placed;
      r.lesion_masks.push_back(placed);
      placed_ok = true;
    }
    if (!placed_ok)
      throw SynthesisError("synthesize: no valid placement for lesion " + std::to_string(k + 1) + " after " +
                           std::to_string(cfg.max_placement_attempts) + " attempts; tried " + attempted);
  }
  return r;
}

// JSON interchange ---------------------------------------------------------

inline nlohmann::ordered_json to_json(const SynthConfig& c) {
  nlohmann::ordered_json j;
  j["epsilon"] = c.epsilon ? nlohmann::ordered_json(*c.epsilon) : nlohmann::ordered_json(nullptr);
  j["sigma_b"] = c.sigma_b;
  j["lesion_count_range"] = {c.lesion_count_range.lo, c.lesion_count_range.hi};
  j["edge_probability"] = c.edge_probability;
  j["shape_source_weights"] = {c.shape_source_weights[0], c.shape_source_weights[1]};
  j["ellipsoid_axes_range"] = nlohmann::ordered_json::array();
  for (const auto& r : c.ellipsoid_axes_range) j["ellipsoid_axes_range"].push_back({r.lo, r.hi});
  j["elastic_alpha"] = c.elastic_alpha;
  j["elastic_sigma"] = c.elastic_sigma;
  j["polarity_weights"] = {c.polarity_weights[0], c.polarity_weights[1]};
  j["seed"] = c.seed;
  j["max_placement_attempts"] = c.max_placement_attempts;
  return j;
}

/// Read a SynthConfig; absent keys keep their defaults, unknown keys are
/// rejected.
template <class Json>
SynthConfig synth_config_from_json(const Json& j) {
  if (!j.is_object()) throw ValidationError("synth config must be a JSON object");
  SynthConfig c;
  auto pair = [](const Json& v, const std::string& key) {
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number())
      throw ValidationError("synth config: '" + key + "' must be a 2-element numeric array");
    return std::array<double, 2>{v[0].template get<double>(), v[1].template get<double>()};
  };
  auto number = [](const Json& v, const std::string& key) {
    if (!v.is_number()) throw ValidationError("synth config: '" + key + "' must be a number");
    return v.template get<double>();
  };
  for (const auto& [key, v] : j.items()) {
    if (key == "epsilon") {
      if (v.is_null()) c.epsilon.reset();
      else c.epsilon = number(v, key);
    } else if (key == "sigma_b") {
      c.sigma_b = number(v, key);
    } else if (key == "lesion_count_range") {
      auto p = pair(v, key);
      if (p[0] != std::floor(p[0]) || p[1] != std::floor(p[1]))
        throw ValidationError("synth config: lesion_count_range must be integral");
      c.lesion_count_range = {static_cast<std::int64_t>(p[0]), static_cast<std::int64_t>(p[1])};
    } else if (key == "edge_probability") {
      c.edge_probability = number(v, key);
    } else if (key == "shape_source_weights") {
      c.shape_source_weights = pair(v, key);
    } else if (key == "ellipsoid_axes_range") {
      if (!v.is_array() || v.size() != 3) throw ValidationError("synth config: ellipsoid_axes_range needs 3 ranges");
      for (int a = 0; a < 3; ++a) {
        auto p = pair(v[a], key);
        c.ellipsoid_axes_range[a] = {p[0], p[1]};
      }
    } else if (key == "elastic_alpha") {
      c.elastic_alpha = number(v, key);
    } else if (key == "elastic_sigma") {
      c.elastic_sigma = number(v, key);
    } else if (key == "polarity_weights") {
      c.polarity_weights = pair(v, key);
    } else if (key == "seed") {
      if (!v.is_number_unsigned()) throw ValidationError("synth config: seed must be a non-negative integer");
      c.seed = v.template get<std::uint64_t>();
    } else if (key == "max_placement_attempts") {
      if (!v.is_number_integer()) throw ValidationError("synth config: max_placement_attempts must be an integer");
      c.max_placement_attempts = v.template get<int>();
    } else {
      throw ValidationError("synth config: unknown key '" + key + "'");
    }
  }
  c.validate();
  return c;
}

inline nlohmann::ordered_json to_json(const LesionRecord& r) {
  nlohmann::ordered_json j;
  j["structure_id"] = r.structure_id;
  j["center"] = {r.center[0], r.center[1], r.center[2]};
  j["on_edge"] = r.on_edge;
  j["polarity"] = to_string(r.polarity);
  j["i_a"] = r.i_a;
  j["shape_voxels"] = r.shape_voxels;
  if (r.shape_origin.kind == ShapeOrigin::Kind::Ellipsoid) {
    j["shape_origin"] = {{"kind", "ellipsoid"}};
  } else {
    j["shape_origin"] = {{"kind", "structure"}, {"label", r.shape_origin.label}};
  }
  j["region"] = {{"i_avg", r.region.i_avg}, {"i_min", r.region.i_min}, {"i_max", r.region.i_max}};
  j["epsilon"] = r.epsilon;
  j["lesion_mean"] = r.lesion_mean;
  return j;
}

}  // namespace lesionforge
