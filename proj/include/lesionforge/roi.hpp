#pragma once

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lesionforge/error.hpp"
#include "lesionforge/morphology.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

struct StructureOverlap {
  std::int32_t id = 0;
  std::string name;
  std::size_t overlap = 0;  // voxels shared with the anomaly component (0 for human prompts)
  friend bool operator==(const StructureOverlap&, const StructureOverlap&) = default;
};

inline constexpr std::string_view kGlobalPromptName = "<global>";

/// A regional mask prompt: the union of atlas structures touched by one
/// anomaly component, or named by a user.
struct RegionPrompt {
  enum class Source { Auto, Human };

  std::string id;
  BinaryMask mask;
  Source source = Source::Auto;
  std::size_t component_index = 0;  // Auto only
  std::vector<std::string> names;    // Human only
  std::vector<StructureOverlap> structures;
  std::size_t anomaly_voxels = 0;
  bool unlocalized = false;  // Auto component that touches no atlas label

  bool is_global() const {
    return source == Source::Human && names.size() == 1 && names[0] == kGlobalPromptName;
  }
};

namespace detail {

inline std::string lower(std::string_view s) {
  std::string out(s);
  for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

inline std::size_t edit_distance(std::string_view a, std::string_view b) {
  std::vector<std::size_t> prev(b.size() + 1), cur(b.size() + 1);
  for (std::size_t j = 0; j <= b.size(); ++j) prev[j] = j;
  for (std::size_t i = 1; i <= a.size(); ++i) {
    cur[0] = i;
    for (std::size_t j = 1; j <= b.size(); ++j)
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, prev[j - 1] + (a[i - 1] == b[j - 1] ? 0u : 1u)});
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

// Union of the masks of every label flagged in `wanted` (indexed by id).
inline BinaryMask union_of_labels(const LabelVolume& labels, const std::vector<char>& wanted) {
  BinaryMask m(labels.dims());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const auto v = labels[i];
    if (v > 0 && static_cast<std::size_t>(v) < wanted.size() && wanted[v]) m.set(i);
  }
  return m;
}

inline std::size_t max_label(const LabelVolume& labels) {
  return labels.table().empty() ? 0 : static_cast<std::size_t>(labels.table().rbegin()->first);
}

}  // namespace detail

/// One prompt per anomaly component: m_i is the union of every structure b_j
/// with |b_j ∩ a_i| >= min_overlap. Components that touch no label at all
/// become unlocalized prompts whose mask is the component itself; components
/// whose overlaps all fall below min_overlap are dropped.
inline std::vector<RegionPrompt> select_rois(const BinaryMask& anomaly, const LabelVolume& labels,
                                             std::size_t min_overlap = 1,
                                             Connectivity connectivity = Connectivity::TwentySix) {
  require_same_dims(anomaly.dims(), labels.dims(), "select_rois");
  if (min_overlap < 1) throw ArgumentError("select_rois: min_overlap must be >= 1");
  const auto cl = label_components(anomaly, connectivity);
  const std::size_t n = cl.components.size();

  std::vector<std::map<std::int32_t, std::size_t>> overlaps(n);
  std::vector<BinaryMask> components(n, BinaryMask(anomaly.dims()));
  for (std::size_t i = 0; i < anomaly.size(); ++i) {
    const auto c = cl.labels[i];
    if (c == 0) continue;
    components[c - 1].set(i);
    if (labels[i] != 0) ++overlaps[c - 1][labels[i]];
  }

  std::vector<RegionPrompt> out;
  for (std::size_t k = 0; k < n; ++k) {
    RegionPrompt p;
    p.source = RegionPrompt::Source::Auto;
    p.component_index = k;
    p.anomaly_voxels = cl.components[k].voxels;
    p.id = "roi-" + std::to_string(out.size());
    if (overlaps[k].empty()) {
      p.unlocalized = true;
      p.mask = std::move(components[k]);
      out.push_back(std::move(p));
      continue;
    }
    std::vector<char> wanted(detail::max_label(labels) + 1, 0);
    for (const auto& [id, count] : overlaps[k]) {
      if (count < min_overlap) continue;
      wanted[id] = 1;
      p.structures.push_back({id, labels.name_of(id), count});
    }
    if (p.structures.empty()) continue;
    p.mask = detail::union_of_labels(labels, wanted);
    out.push_back(std::move(p));
  }
  return out;
}

/// Human prompt from structure names (case-insensitive exact match).
inline RegionPrompt prompt_from_names(const std::vector<std::string>& names, const LabelVolume& labels) {
  if (names.empty()) throw ArgumentError("prompt_from_names: no structure names given");
  std::map<std::string, std::int32_t> by_name;
  for (const auto& [id, name] : labels.table()) by_name[detail::lower(name)] = id;

  RegionPrompt p;
  p.source = RegionPrompt::Source::Human;
  p.names = names;
  p.id = "prompt";
  std::vector<char> wanted(detail::max_label(labels) + 1, 0);
  for (const auto& name : names) {
    auto it = by_name.find(detail::lower(name));
    if (it == by_name.end()) {
      std::string suggestions;
      for (const auto& [id, candidate] : labels.table())
        if (detail::edit_distance(detail::lower(name), detail::lower(candidate)) <= 2)
          suggestions += (suggestions.empty() ? "" : ", ") + ("\"" + candidate + "\"");
      throw LookupError("unknown structure name \"" + name + "\"" +
                        (suggestions.empty() ? std::string() : "; did you mean " + suggestions + "?"));
    }
    if (!wanted[it->second]) p.structures.push_back({it->second, labels.name_of(it->second), 0});
    wanted[it->second] = 1;
  }
  p.mask = detail::union_of_labels(labels, wanted);
  return p;
}

/// The all-ones prompt asking for a description of the whole scan.
inline RegionPrompt whole_image_prompt(const Dims& dims) {
  RegionPrompt p;
  p.id = "global";
  p.source = RegionPrompt::Source::Human;
  p.names = {std::string(kGlobalPromptName)};
  p.mask = BinaryMask::full(dims);
  return p;
}

/// JSON form of a prompt; the mask itself is stored separately at `mask_ref`.
inline nlohmann::ordered_json to_json(const RegionPrompt& p, const std::string& mask_ref) {
  nlohmann::ordered_json j;
  j["id"] = p.id;
  if (p.source == RegionPrompt::Source::Auto) {
    j["source"] = {{"kind", "auto"}, {"component", p.component_index}};
  } else {
    j["source"] = {{"kind", "human"}, {"names", p.names}};
  }
  j["structures"] = nlohmann::ordered_json::array();
  for (const auto& s : p.structures) j["structures"].push_back({{"id", s.id}, {"name", s.name}, {"overlap", s.overlap}});
  j["anomaly_voxels"] = p.anomaly_voxels;
  j["unlocalized"] = p.unlocalized;
  j["mask_ref"] = mask_ref;
  return j;
}

/// Inverse of to_json; `mask` is the already-loaded mask_ref volume.
template <class Json>
RegionPrompt prompt_from_json(const Json& j, BinaryMask mask) {
  try {
    RegionPrompt p;
    p.id = j.at("id").template get<std::string>();
    const auto& src = j.at("source");
    const auto kind = src.at("kind").template get<std::string>();
    if (kind == "auto") {
      p.source = RegionPrompt::Source::Auto;
      p.component_index = src.at("component").template get<std::size_t>();
    } else if (kind == "human") {
      p.source = RegionPrompt::Source::Human;
      p.names = src.at("names").template get<std::vector<std::string>>();
    } else {
      throw SchemaError("prompt source kind must be 'auto' or 'human', got '" + kind + "'");
    }
    for (const auto& s : j.at("structures"))
      p.structures.push_back({s.at("id").template get<std::int32_t>(), s.at("name").template get<std::string>(),
                              s.at("overlap").template get<std::size_t>()});
    p.anomaly_voxels = j.at("anomaly_voxels").template get<std::size_t>();
    p.unlocalized = j.value("unlocalized", false);
    p.mask = std::move(mask);
    return p;
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("region prompt: ") + e.what());
  }
}

}  // namespace lesionforge
