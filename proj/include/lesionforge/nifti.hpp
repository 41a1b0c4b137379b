#pragma once

// NIfTI-1 single-file (.nii / .nii.gz) and header/image pair (.hdr + .img)
// reader and writer. Only the header fields needed for 3D scalar volumes are
// interpreted; voxel order is taken as stored (no reorientation).

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "lesionforge/error.hpp"
#include "lesionforge/io.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

namespace nifti {

inline constexpr std::size_t kHeaderSize = 348;
inline constexpr std::size_t kSingleFileOffset = 352;  // header + 4-byte extension flag

enum class DataType : std::int16_t {
  UInt8 = 2,
  Int16 = 4,
  Int32 = 8,
  Float32 = 16,
  Float64 = 64,
};

inline int bytes_per_voxel(DataType t) {
  switch (t) {
    case DataType::UInt8: return 1;
    case DataType::Int16: return 2;
    case DataType::Int32: return 4;
    case DataType::Float32: return 4;
    case DataType::Float64: return 8;
  }
  return 0;
}

inline bool is_integer(DataType t) {
  return t == DataType::UInt8 || t == DataType::Int16 || t == DataType::Int32;
}

/// The interpreted subset of a 348-byte NIfTI-1 header.
struct Header {
  bool byte_swapped = false;
  bool pair = false;  // "ni1": voxel data lives in a separate .img file
  Dims dims;
  DataType datatype = DataType::Float32;
  Spacing spacing{1.0, 1.0, 1.0};
  std::uint64_t vox_offset = kSingleFileOffset;
  double scl_slope = 0.0;
  double scl_inter = 0.0;
  std::optional<Affine> affine;

  std::uint64_t payload_bytes() const {
    return static_cast<std::uint64_t>(dims.size()) * static_cast<std::uint64_t>(bytes_per_voxel(datatype));
  }
};

namespace detail {

template <class T>
T read_raw(std::span<const std::byte> b, std::size_t off, bool swap) {
  std::array<std::byte, sizeof(T)> tmp;
  std::memcpy(tmp.data(), b.data() + off, sizeof(T));
  if (swap) std::reverse(tmp.begin(), tmp.end());
  T v;
  std::memcpy(&v, tmp.data(), sizeof(T));
  return v;
}

template <class T>
void write_raw(std::vector<std::byte>& b, std::size_t off, T v) {
  std::memcpy(b.data() + off, &v, sizeof(T));
}

inline std::int32_t byteswap32(std::int32_t v) {
  auto u = static_cast<std::uint32_t>(v);
  u = (u >> 24) | ((u >> 8) & 0xff00u) | ((u << 8) & 0xff0000u) | (u << 24);
  return static_cast<std::int32_t>(u);
}

inline Affine qform_affine(double b, double c, double d, double qx, double qy, double qz,
                           const Spacing& sp, double qfac) {
  double a = 1.0 - (b * b + c * c + d * d);
  if (a < 1e-7) {
    double n = std::sqrt(b * b + c * c + d * d);
    b /= n;
    c /= n;
    d /= n;
    a = 0.0;
  } else {
    a = std::sqrt(a);
  }
  const double dz = qfac < 0 ? -sp[2] : sp[2];
  return {(a * a + b * b - c * c - d * d) * sp[0], 2 * (b * c - a * d) * sp[1], 2 * (b * d + a * c) * dz, qx,
          2 * (b * c + a * d) * sp[0], (a * a + c * c - b * b - d * d) * sp[1], 2 * (c * d - a * b) * dz, qy,
          2 * (b * d - a * c) * sp[0], 2 * (c * d + a * b) * sp[1], (a * a + d * d - c * c - b * b) * dz, qz,
          0, 0, 0, 1};
}

}  // namespace detail

/// Parse and validate a header. Total over any byte string: either returns a
/// Header or throws FormatError / UnsupportedError.
inline Header parse_header(std::span<const std::byte> bytes) {
  using detail::read_raw;
  if (bytes.size() < kHeaderSize)
    throw FormatError("header truncated: " + std::to_string(bytes.size()) + " bytes");

  Header h;
  const auto sizeof_hdr = read_raw<std::int32_t>(bytes, 0, false);
  if (sizeof_hdr == static_cast<std::int32_t>(kHeaderSize)) {
    h.byte_swapped = false;
  } else if (detail::byteswap32(sizeof_hdr) == static_cast<std::int32_t>(kHeaderSize)) {
    h.byte_swapped = true;
  } else {
    throw FormatError("sizeof_hdr is " + std::to_string(sizeof_hdr) + ", expected 348");
  }
  const bool sw = h.byte_swapped;

  const char* magic = reinterpret_cast<const char*>(bytes.data() + 344);
  if (std::memcmp(magic, "n+1\0", 4) == 0) {
    h.pair = false;
  } else if (std::memcmp(magic, "ni1\0", 4) == 0) {
    h.pair = true;
  } else {
    throw FormatError("bad magic: not a NIfTI-1 file");
  }

  std::array<std::int16_t, 8> dim{};
  for (int i = 0; i < 8; ++i) dim[i] = read_raw<std::int16_t>(bytes, 40 + 2 * i, sw);
  if (dim[0] < 1 || dim[0] > 7) throw FormatError("dim[0] = " + std::to_string(dim[0]) + " out of range");
  for (int i = 1; i <= dim[0]; ++i)
    if (dim[i] < 1) throw FormatError("dim[" + std::to_string(i) + "] = " + std::to_string(dim[i]));
  for (int i = 4; i <= dim[0]; ++i)
    if (dim[i] != 1) throw UnsupportedError("only 3D volumes are supported (dim[" + std::to_string(i) + "] = " +
                                            std::to_string(dim[i]) + ")");
  auto axis = [&](int i) -> std::size_t { return i <= dim[0] ? static_cast<std::size_t>(dim[i]) : 1u; };
  h.dims = {axis(1), axis(2), axis(3)};

  const auto datatype = read_raw<std::int16_t>(bytes, 70, sw);
  const auto bitpix = read_raw<std::int16_t>(bytes, 72, sw);
  switch (datatype) {
    case 2: case 4: case 8: case 16: case 64:
      h.datatype = static_cast<DataType>(datatype);
      break;
    default:
      throw UnsupportedError("unsupported datatype code " + std::to_string(datatype));
  }
  if (bitpix != 8 * bytes_per_voxel(h.datatype))
    throw FormatError("bitpix " + std::to_string(bitpix) + " inconsistent with datatype " + std::to_string(datatype));

  std::array<float, 8> pixdim{};
  for (int i = 0; i < 8; ++i) pixdim[i] = read_raw<float>(bytes, 76 + 4 * i, sw);
  for (int a = 0; a < 3; ++a) {
    if (a + 1 > dim[0]) {
      h.spacing[a] = 1.0;
      continue;
    }
    double p = std::fabs(static_cast<double>(pixdim[a + 1]));
    if (!std::isfinite(p) || p <= 0.0)
      throw FormatError("pixdim[" + std::to_string(a + 1) + "] must be finite and nonzero");
    h.spacing[a] = p;
  }

  const double vox_offset = read_raw<float>(bytes, 108, sw);
  if (!std::isfinite(vox_offset) || vox_offset < 0.0 || vox_offset != std::floor(vox_offset) ||
      vox_offset > 1e9)
    throw FormatError("invalid vox_offset");
  if (!h.pair && vox_offset < static_cast<double>(kHeaderSize))
    throw FormatError("vox_offset " + std::to_string(static_cast<long long>(vox_offset)) +
                      " lies inside the header");
  h.vox_offset = static_cast<std::uint64_t>(vox_offset);

  h.scl_slope = read_raw<float>(bytes, 112, sw);
  h.scl_inter = read_raw<float>(bytes, 116, sw);
  if (!std::isfinite(h.scl_slope) || !std::isfinite(h.scl_inter))
    throw FormatError("non-finite scl_slope/scl_inter");

  const auto qform_code = read_raw<std::int16_t>(bytes, 252, sw);
  const auto sform_code = read_raw<std::int16_t>(bytes, 254, sw);
  if (sform_code > 0) {
    Affine m{};
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) {
        double v = read_raw<float>(bytes, 280 + 16 * r + 4 * c, sw);
        if (!std::isfinite(v)) throw FormatError("non-finite srow entry");
        m[4 * r + c] = v;
      }
    m[15] = 1.0;
    h.affine = m;
  } else if (qform_code > 0) {
    std::array<double, 6> q{};
    for (int i = 0; i < 6; ++i) {
      q[i] = read_raw<float>(bytes, 256 + 4 * i, sw);
      if (!std::isfinite(q[i])) throw FormatError("non-finite quaternion parameter");
    }
    if (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] > 1.0 + 1e-5)
      throw FormatError("quaternion parameters out of range");
    const double qfac = pixdim[0] < 0.0f ? -1.0 : 1.0;
    h.affine = detail::qform_affine(q[0], q[1], q[2], q[3], q[4], q[5], h.spacing, qfac);
  }
  return h;
}

namespace detail {

template <class Out>
std::vector<Out> decode_payload(const Header& h, std::span<const std::byte> bytes, std::uint64_t offset,
                                bool apply_scaling) {
  const std::uint64_t need = h.payload_bytes();
  if (offset > bytes.size() || bytes.size() - offset < need)
    throw FormatError("voxel data truncated: need " + std::to_string(need) + " bytes at offset " +
                      std::to_string(offset) + ", file has " + std::to_string(bytes.size()));
  const std::size_t n = h.dims.size();
  std::vector<Out> out(n);
  const bool scale = apply_scaling && h.scl_slope != 0.0;
  const bool sw = h.byte_swapped;
  auto emit = [&](std::size_t i, double raw) {
    double v = scale ? raw * h.scl_slope + h.scl_inter : raw;
    if constexpr (std::is_floating_point_v<Out>) {
      if (!std::isfinite(static_cast<Out>(v)))
        throw FormatError("non-finite voxel value at index " + std::to_string(i));
    }
    out[i] = static_cast<Out>(v);
  };
  const auto base = static_cast<std::size_t>(offset);
  switch (h.datatype) {
    case DataType::UInt8:
      for (std::size_t i = 0; i < n; ++i) emit(i, read_raw<std::uint8_t>(bytes, base + i, sw));
      break;
    case DataType::Int16:
      for (std::size_t i = 0; i < n; ++i) emit(i, read_raw<std::int16_t>(bytes, base + 2 * i, sw));
      break;
    case DataType::Int32:
      for (std::size_t i = 0; i < n; ++i) emit(i, read_raw<std::int32_t>(bytes, base + 4 * i, sw));
      break;
    case DataType::Float32:
      if constexpr (std::is_same_v<Out, float>) {
        // Unscaled float32 is copied without a round trip through double.
        if (!scale) {
          for (std::size_t i = 0; i < n; ++i) {
            float v = read_raw<float>(bytes, base + 4 * i, sw);
            if (!std::isfinite(v)) throw FormatError("non-finite voxel value at index " + std::to_string(i));
            out[i] = v;
          }
          break;
        }
      }
      for (std::size_t i = 0; i < n; ++i) emit(i, read_raw<float>(bytes, base + 4 * i, sw));
      break;
    case DataType::Float64:
      for (std::size_t i = 0; i < n; ++i) emit(i, read_raw<double>(bytes, base + 8 * i, sw));
      break;
  }
  return out;
}

struct Loaded {
  Header header;
  std::vector<std::byte> payload_file;
  std::uint64_t offset = 0;
};

inline std::filesystem::path image_path_for(const std::filesystem::path& hdr) {
  std::string s = hdr.string();
  if (io::ends_with(s, ".hdr.gz")) return s.substr(0, s.size() - 7) + ".img.gz";
  if (io::ends_with(s, ".hdr")) return s.substr(0, s.size() - 4) + ".img";
  throw FormatError("'" + s + "' has pair magic \"ni1\" but is not a .hdr file");
}

inline Loaded load_raw(const std::filesystem::path& path) {
  Loaded l;
  auto bytes = io::read_file(path);
  l.header = parse_header(bytes);
  if (l.header.pair) {
    auto img = image_path_for(path);
    std::error_code ec;
    if (!std::filesystem::exists(img, ec) && std::filesystem::exists(img.string() + ".gz", ec))
      img = img.string() + ".gz";
    l.payload_file = io::read_file(img);
  } else {
    l.payload_file = std::move(bytes);
  }
  l.offset = l.header.vox_offset;
  return l;
}

inline std::vector<std::byte> encode(const Dims& dims, const Spacing& spacing, const std::optional<Affine>& affine,
                                     DataType type, std::span<const std::byte> payload) {
  std::vector<std::byte> out(kSingleFileOffset + payload.size(), std::byte{0});
  write_raw<std::int32_t>(out, 0, static_cast<std::int32_t>(kHeaderSize));
  out[38] = std::byte{'r'};  // "regular"
  const std::array<std::int16_t, 8> dim{3, static_cast<std::int16_t>(dims.nx), static_cast<std::int16_t>(dims.ny),
                                        static_cast<std::int16_t>(dims.nz), 1, 1, 1, 1};
  for (int i = 0; i < 8; ++i) write_raw<std::int16_t>(out, 40 + 2 * i, dim[i]);
  write_raw<std::int16_t>(out, 70, static_cast<std::int16_t>(type));
  write_raw<std::int16_t>(out, 72, static_cast<std::int16_t>(8 * bytes_per_voxel(type)));
  const std::array<float, 8> pixdim{1.0f, static_cast<float>(spacing[0]), static_cast<float>(spacing[1]),
                                    static_cast<float>(spacing[2]), 0, 0, 0, 0};
  for (int i = 0; i < 8; ++i) write_raw<float>(out, 76 + 4 * i, pixdim[i]);
  write_raw<float>(out, 108, static_cast<float>(kSingleFileOffset));
  write_raw<float>(out, 112, 0.0f);
  write_raw<float>(out, 116, 0.0f);
  out[123] = std::byte{10};  // xyzt_units: mm, s
  if (affine) {
    write_raw<std::int16_t>(out, 254, 1);
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) write_raw<float>(out, 280 + 16 * r + 4 * c, static_cast<float>((*affine)[4 * r + c]));
  }
  std::memcpy(out.data() + 344, "n+1\0", 4);
  std::memcpy(out.data() + kSingleFileOffset, payload.data(), payload.size());
  return out;
}

inline void check_dims_fit(const Dims& d) {
  for (int a = 0; a < 3; ++a)
    if (d[a] > 32767) throw UnsupportedError("dimension exceeds NIfTI-1 limit of 32767");
}

}  // namespace detail

}  // namespace nifti

/// Load a scalar NIfTI-1 volume; scl_slope/scl_inter are applied when the
/// slope is nonzero.
inline Volume load_volume(const std::filesystem::path& path) {
  auto l = nifti::detail::load_raw(path);
  auto data = nifti::detail::decode_payload<float>(l.header, l.payload_file, l.offset, true);
  return Volume(l.header.dims, std::move(data), l.header.spacing, l.header.affine);
}

inline void save_volume(const Volume& v, const std::filesystem::path& path) {
  nifti::detail::check_dims_fit(v.dims());
  auto payload = std::as_bytes(v.values());
  io::write_file_atomic(path, nifti::detail::encode(v.dims(), v.spacing(), v.affine(), nifti::DataType::Float32, payload));
}

/// Binary masks are stored as uint8 volumes (nonzero = true).
inline void save_mask(const BinaryMask& m, const std::filesystem::path& path, const Spacing& spacing = {1.0, 1.0, 1.0},
                      const std::optional<Affine>& affine = std::nullopt) {
  nifti::detail::check_dims_fit(m.dims());
  io::write_file_atomic(path, nifti::detail::encode(m.dims(), spacing, affine, nifti::DataType::UInt8,
                                                    std::as_bytes(m.values())));
}

inline BinaryMask load_mask(const std::filesystem::path& path) {
  auto l = nifti::detail::load_raw(path);
  auto data = nifti::detail::decode_payload<double>(l.header, l.payload_file, l.offset, true);
  std::vector<std::uint8_t> bits(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) bits[i] = data[i] != 0.0 ? 1 : 0;
  return BinaryMask(l.header.dims, std::move(bits));
}

inline nifti::Header read_header(const std::filesystem::path& path) { return nifti::parse_header(io::read_file(path)); }

/// Parse a sidecar label table: {"<id>": "<structure name>", ...}.
inline LabelTable parse_label_table(std::string_view text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("label table: ") + e.what());
  }
  if (!j.is_object()) throw ValidationError("label table must be a JSON object");
  LabelTable table;
  for (const auto& [key, value] : j.items()) {
    std::int32_t id = 0;
    auto [ptr, ec] = std::from_chars(key.data(), key.data() + key.size(), id);
    if (ec != std::errc{} || ptr != key.data() + key.size() || id <= 0)
      throw ValidationError("label table key '" + key + "' is not a positive integer id");
    if (!value.is_string()) throw ValidationError("label table entry " + key + " is not a string");
    table[id] = value.get<std::string>();
  }
  std::set<std::string> names;
  for (const auto& [id, name] : table)
    if (!names.insert(name).second) throw ValidationError("duplicate structure name '" + name + "' in label table");
  return table;
}

inline std::string label_table_json(const LabelTable& table) {
  nlohmann::ordered_json j = nlohmann::ordered_json::object();
  for (const auto& [id, name] : table) j[std::to_string(id)] = name;
  return j.dump(2) + "\n";
}

inline LabelVolume load_label_volume(const std::filesystem::path& path, const std::filesystem::path& table_path) {
  auto l = nifti::detail::load_raw(path);
  if (!nifti::is_integer(l.header.datatype))
    throw UnsupportedError("label volume '" + path.string() + "' must have an integer datatype");
  if (l.header.scl_slope != 0.0 && (l.header.scl_slope != 1.0 || l.header.scl_inter != 0.0))
    throw UnsupportedError("label volume '" + path.string() + "' has non-identity intensity scaling");
  auto labels = nifti::detail::decode_payload<std::int32_t>(l.header, l.payload_file, l.offset, false);
  auto table = parse_label_table(io::read_text(table_path));
  return LabelVolume(l.header.dims, std::move(labels), std::move(table), l.header.spacing, l.header.affine);
}

inline void save_label_volume(const LabelVolume& lv, const std::filesystem::path& path,
                              const std::filesystem::path& table_path) {
  nifti::detail::check_dims_fit(lv.dims());
  io::write_file_atomic(path, nifti::detail::encode(lv.dims(), lv.spacing(), lv.affine(), nifti::DataType::Int32,
                                                    std::as_bytes(lv.values())));
  io::write_text_atomic(table_path, label_table_json(lv.table()));
}

}  // namespace lesionforge
