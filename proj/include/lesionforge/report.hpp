#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lesionforge/error.hpp"
#include "lesionforge/io.hpp"
#include "lesionforge/roi.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

enum class Modality { T1W, T2W, FLAIR, DWI, T1C, ADC, Other };

inline constexpr std::array<Modality, 7> kModalities{Modality::T1W, Modality::T2W, Modality::FLAIR, Modality::DWI,
                                                     Modality::T1C, Modality::ADC, Modality::Other};

inline const char* to_string(Modality m) {
  switch (m) {
    case Modality::T1W: return "T1W";
    case Modality::T2W: return "T2W";
    case Modality::FLAIR: return "FLAIR";
    case Modality::DWI: return "DWI";
    case Modality::T1C: return "T1C";
    case Modality::ADC: return "ADC";
    case Modality::Other: return "Other";
  }
  return "Other";
}

/// Case-insensitive; accepts the canonical names plus T1, T2, T2-FLAIR and T2FLAIR.
inline std::optional<Modality> parse_modality(std::string_view s) {
  const std::string k = detail::lower(s);
  for (auto m : kModalities)
    if (k == detail::lower(to_string(m))) return m;
  if (k == "t1") return Modality::T1W;
  if (k == "t2") return Modality::T2W;
  if (k == "t2-flair" || k == "t2flair") return Modality::FLAIR;
  return std::nullopt;
}

inline Modality modality_from_string(std::string_view s) {
  auto m = parse_modality(s);
  if (!m) throw ArgumentError("unknown modality '" + std::string(s) + "'");
  return *m;
}

struct RegionalReport {
  std::string region_name;
  std::map<Modality, std::string> findings;
  std::optional<std::string> prompt_ref;
};

/// Parses {"Region Name": {"FLAIR": "...", "T1": "...", ...}, ...}. The
/// reserved key "prompt_ref" inside a region links it to a RegionPrompt id.
inline std::vector<RegionalReport> parse_regional_reports(std::string_view doc) {
  nlohmann::ordered_json j;
  try {
    j = nlohmann::ordered_json::parse(doc);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError("regional reports: malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
  }
  if (!j.is_object()) throw SchemaError("regional reports: top level must be an object keyed by region name");
  std::vector<RegionalReport> out;
  for (const auto& [region, body] : j.items()) {
    if (!body.is_object()) throw SchemaError("region '" + region + "': value must be an object");
    RegionalReport r;
    r.region_name = region;
    for (const auto& [key, value] : body.items()) {
      if (key == "prompt_ref") {
        if (!value.is_string()) throw SchemaError("region '" + region + "': prompt_ref must be a string");
        r.prompt_ref = value.get<std::string>();
        continue;
      }
      auto m = parse_modality(key);
      if (!m) throw SchemaError("region '" + region + "': unknown modality key '" + key + "'");
      if (!value.is_string()) throw SchemaError("region '" + region + "': finding for '" + key + "' must be a string");
      if (!r.findings.emplace(*m, value.get<std::string>()).second)
        throw SchemaError("region '" + region + "': duplicate finding for " + to_string(*m));
    }
    if (r.findings.empty()) throw SchemaError("region '" + region + "': no findings");
    out.push_back(std::move(r));
  }
  return out;
}

/// Normal-finding sentences. Lookup falls back from exact structure name to
/// the longest matching family substring to the generic entry; within an
/// entry, from the requested modality to "default". "{name}" is replaced by
/// the structure name.
class TemplateStore {
 public:
  using Entry = std::map<std::string, std::string>;  // modality name or "default" -> sentence

  static TemplateStore from_json(std::string_view text) {
    nlohmann::ordered_json j;
    try {
      j = nlohmann::ordered_json::parse(text);
    } catch (const nlohmann::json::parse_error& e) {
      throw ParseError("templates: malformed JSON at byte " + std::to_string(e.byte) + ": " + e.what());
    }
    TemplateStore t;
    try {
      if (!j.is_object()) throw SchemaError("templates: top level must be an object");
      t.synthetic_ = j.value("synthetic", false);
      t.generic_ = entry(j.at("generic"), "generic");
      if (!t.generic_.count("default")) throw SchemaError("templates: generic entry needs a \"default\" sentence");
      if (j.contains("families"))
        for (const auto& [k, v] : j.at("families").items()) t.families_.emplace_back(detail::lower(k), entry(v, k));
      std::stable_sort(t.families_.begin(), t.families_.end(),
                       [](const auto& a, const auto& b) { return a.first.size() > b.first.size(); });
      if (j.contains("structures"))
        for (const auto& [k, v] : j.at("structures").items()) t.structures_[detail::lower(k)] = entry(v, k);
      if (j.contains("boilerplate"))
        for (const auto& [k, v] : j.at("boilerplate").items()) {
          if (k != "default" && !parse_modality(k)) throw SchemaError("templates: unknown boilerplate key '" + k + "'");
          t.boilerplate_[canonical(k)] = v.get<std::vector<std::string>>();
        }
    } catch (const nlohmann::json::exception& e) {
      throw SchemaError(std::string("templates: ") + e.what());
    }
    return t;
  }

  static TemplateStore load(const std::filesystem::path& path) { return from_json(io::read_text(path)); }

  bool synthetic() const { return synthetic_; }

  std::string sentence(std::string_view structure, Modality m) const {
    const std::string key = detail::lower(structure);
    const Entry* e = &generic_;
    if (auto it = structures_.find(key); it != structures_.end()) {
      e = &it->second;
    } else {
      for (const auto& [family, fe] : families_)
        if (key.find(family) != std::string::npos) {
          e = &fe;
          break;
        }
    }
    std::string s = pick(*e, m);
    if (s.empty()) s = pick(generic_, m);
    return substitute(s, structure);
  }

  std::vector<std::string> boilerplate(Modality m) const {
    if (auto it = boilerplate_.find(to_string(m)); it != boilerplate_.end()) return it->second;
    if (auto it = boilerplate_.find("default"); it != boilerplate_.end()) return it->second;
    return {};
  }

 private:
  static std::string canonical(const std::string& key) {
    if (key == "default") return key;
    auto m = parse_modality(key);
    if (!m) throw SchemaError("templates: unknown modality key '" + key + "'");
    return to_string(*m);
  }

  static Entry entry(const nlohmann::ordered_json& j, const std::string& where) {
    if (j.is_string()) return {{"default", j.get<std::string>()}};
    if (!j.is_object()) throw SchemaError("templates: entry '" + where + "' must be a string or object");
    Entry e;
    for (const auto& [k, v] : j.items()) e[canonical(k)] = v.get<std::string>();
    return e;
  }

  static std::string pick(const Entry& e, Modality m) {
    if (auto it = e.find(to_string(m)); it != e.end()) return it->second;
    if (auto it = e.find("default"); it != e.end()) return it->second;
    return {};
  }

  static std::string substitute(std::string s, std::string_view name) {
    for (std::size_t pos = s.find("{name}"); pos != std::string::npos; pos = s.find("{name}", pos + name.size()))
      s.replace(pos, 6, name);
    return s;
  }

  bool synthetic_ = false;
  Entry generic_;
  std::vector<std::pair<std::string, Entry>> families_;
  std::map<std::string, Entry> structures_;
  std::map<std::string, std::vector<std::string>> boilerplate_;
};

enum class AssemblyMode { Global, AutoSeg, Prompt };

inline const char* to_string(AssemblyMode m) {
  switch (m) {
    case AssemblyMode::Global: return "global";
    case AssemblyMode::AutoSeg: return "autoseg";
    case AssemblyMode::Prompt: return "prompt";
  }
  return "global";
}

inline AssemblyMode assembly_mode_from_string(std::string_view s) {
  if (s == "global") return AssemblyMode::Global;
  if (s == "autoseg") return AssemblyMode::AutoSeg;
  if (s == "prompt") return AssemblyMode::Prompt;
  throw ArgumentError("unknown mode '" + std::string(s) + "' (expected global, autoseg or prompt)");
}

struct Paragraph {
  enum class Kind { Finding, Template, Boilerplate };
  std::string text;
  std::optional<std::string> prompt_ref;
  Kind kind = Kind::Finding;
  std::optional<std::int32_t> structure;  // Template only
};

struct GlobalReport {
  Modality modality = Modality::Other;
  AssemblyMode mode = AssemblyMode::AutoSeg;
  std::vector<Paragraph> paragraphs;
  std::vector<std::int32_t> prompted;   // atlas ids covered by prompts, ascending
  std::vector<std::int32_t> templated;  // atlas ids filled from templates, ascending
};

/// Finding paragraphs in prompt order, then one template paragraph per atlas
/// structure no prompt covers (atlas id order), then boilerplate. A global
/// prompt covers the whole atlas and suppresses boilerplate.
///
/// Regionals link by prompt_ref when present, otherwise by position. A
/// regional with no finding for `modality` falls back to "Other"; with
/// neither it contributes no paragraph but its prompt still counts as covered.
inline GlobalReport assemble_global(const std::vector<RegionalReport>& regionals, const std::vector<RegionPrompt>& prompts,
                                    const TemplateStore& templates, Modality modality, const LabelTable& atlas) {
  std::map<std::string, std::size_t> by_id;
  for (std::size_t i = 0; i < prompts.size(); ++i)
    if (!by_id.emplace(prompts[i].id, i).second) throw LinkError("duplicate prompt id '" + prompts[i].id + "'");

  std::vector<std::pair<std::size_t, std::size_t>> links;  // (prompt, regional)
  for (std::size_t r = 0; r < regionals.size(); ++r) {
    const auto& rr = regionals[r];
    std::size_t p;
    if (rr.prompt_ref) {
      auto it = by_id.find(*rr.prompt_ref);
      if (it == by_id.end())
        throw LinkError("regional '" + rr.region_name + "' references unknown prompt id '" + *rr.prompt_ref + "'");
      p = it->second;
    } else {
      if (r >= prompts.size())
        throw LinkError("regional '" + rr.region_name + "' has no prompt_ref and no prompt at position " +
                        std::to_string(r));
      p = r;
    }
    links.emplace_back(p, r);
  }
  std::stable_sort(links.begin(), links.end(), [](const auto& a, const auto& b) { return a.first < b.first; });

  GlobalReport g;
  g.modality = modality;
  bool global_prompt = false;
  std::set<std::int32_t> covered;
  for (const auto& p : prompts) {
    if (p.is_global()) {
      global_prompt = true;
      for (const auto& [id, name] : atlas) covered.insert(id);
    }
    for (const auto& s : p.structures) {
      if (!atlas.count(s.id))
        throw LinkError("prompt '" + p.id + "' covers structure " + std::to_string(s.id) + " absent from the atlas");
      covered.insert(s.id);
    }
  }

  for (const auto& [p, r] : links) {
    const auto& f = regionals[r].findings;
    auto it = f.find(modality);
    if (it == f.end()) it = f.find(Modality::Other);
    if (it == f.end()) continue;
    g.paragraphs.push_back({it->second, prompts[p].id, Paragraph::Kind::Finding, std::nullopt});
  }

  g.prompted.assign(covered.begin(), covered.end());
  for (const auto& [id, name] : atlas) {
    if (covered.count(id)) continue;
    g.templated.push_back(id);
    g.paragraphs.push_back({templates.sentence(name, modality), std::nullopt, Paragraph::Kind::Template, id});
  }
  if (!global_prompt)
    for (auto& s : templates.boilerplate(modality))
      g.paragraphs.push_back({std::move(s), std::nullopt, Paragraph::Kind::Boilerplate, std::nullopt});
  return g;
}

/// assemble_global with the mode's prompt contract checked: global takes one
/// whole-image prompt and one regional, autoseg takes select_rois output,
/// prompt takes human prompts from named structures.
inline GlobalReport assemble_modes(AssemblyMode mode, const std::vector<RegionalReport>& regionals,
                                   const std::vector<RegionPrompt>& prompts, const TemplateStore& templates,
                                   Modality modality, const LabelTable& atlas) {
  switch (mode) {
    case AssemblyMode::Global:
      if (prompts.size() != 1 || !prompts[0].is_global())
        throw ArgumentError("global mode needs exactly one whole-image prompt");
      if (regionals.size() != 1) throw ArgumentError("global mode needs exactly one regional report");
      break;
    case AssemblyMode::AutoSeg:
      for (const auto& p : prompts)
        if (p.source != RegionPrompt::Source::Auto)
          throw ArgumentError("autoseg mode: prompt '" + p.id + "' was not produced by select_rois");
      break;
    case AssemblyMode::Prompt:
      if (prompts.empty()) throw ArgumentError("prompt mode needs at least one named prompt");
      for (const auto& p : prompts)
        if (p.source != RegionPrompt::Source::Human || p.is_global())
          throw ArgumentError("prompt mode: prompt '" + p.id + "' is not a named-structure prompt");
      break;
  }
  GlobalReport g = assemble_global(regionals, prompts, templates, modality, atlas);
  g.mode = mode;
  return g;
}

inline nlohmann::ordered_json to_json(const GlobalReport& g) {
  nlohmann::ordered_json j;
  j["modality"] = to_string(g.modality);
  j["mode"] = to_string(g.mode);
  j["paragraphs"] = nlohmann::ordered_json::array();
  for (const auto& p : g.paragraphs)
    j["paragraphs"].push_back(
        {{"text", p.text},
         {"prompt_ref", p.prompt_ref ? nlohmann::ordered_json(*p.prompt_ref) : nlohmann::ordered_json(nullptr)}});
  j["coverage"] = {{"prompted", g.prompted}, {"templated", g.templated}};
  return j;
}

/// One paragraph per line.
inline std::string render_text(const GlobalReport& g) {
  std::string s;
  for (const auto& p : g.paragraphs) s += p.text + "\n";
  return s;
}

}  // namespace lesionforge
