// lesionforge command-line tool.
//
// Every verb reads one JSON configuration assembled from, in increasing
// priority: --config <file>, --set key=value overrides, explicit flags.
// Exit codes: 0 success, 2 usage or input error, 3 computation error.

#include <CLI11.hpp>
#include <json.hpp>

#include <atomic>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "lesionforge/lesionforge.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;
using namespace lesionforge;

namespace {

// Keys holding file system paths; relative values in a config file are
// resolved against the config file's directory.
const std::set<std::string> kPathKeys{"volume", "labels", "label_table", "anomaly", "out", "templates",
                                      "regionals", "prompts", "candidate", "reference"};
const std::set<std::string> kPathListKeys{"pred", "gt"};

struct Options {
  std::string config_path;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::map<std::string, std::string> strings;              // flag key -> raw value
  std::map<std::string, std::vector<std::string>> lists;   // repeatable flags
  std::vector<std::size_t> dims;
};

void set_dotted(json& j, const std::string& key, json value) {
  json* node = &j;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ArgumentError("--set: malformed key '" + key + "'");
    if (!node->is_object()) throw ArgumentError("--set: '" + key + "' descends into a non-object");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return;
    }
    node = &(*node)[part];
    if (node->is_null()) *node = json::object();
    start = dot + 1;
  }
}

json build_config(const Options& o) {
  json cfg = json::object();
  if (!o.config_path.empty()) {
    const std::string text = io::read_text(o.config_path);
    try {
      cfg = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ParseError("config '" + o.config_path + "': malformed JSON at byte " + std::to_string(e.byte));
    }
    if (!cfg.is_object()) throw ValidationError("config '" + o.config_path + "' must be a JSON object");
    const fs::path base = fs::path(o.config_path).parent_path();
    for (auto& [k, v] : cfg.items()) {
      if (kPathKeys.count(k) && v.is_string() && fs::path(v.get<std::string>()).is_relative())
        v = (base / v.get<std::string>()).lexically_normal().string();
      if (kPathListKeys.count(k) && v.is_array())
        for (auto& e : v)
          if (e.is_string() && fs::path(e.get<std::string>()).is_relative())
            e = (base / e.get<std::string>()).lexically_normal().string();
    }
  }
  for (const auto& s : o.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos) throw ArgumentError("--set expects key=value, got '" + s + "'");
    const std::string raw = s.substr(eq + 1);
    json value = json::parse(raw, nullptr, false);
    if (value.is_discarded()) value = raw;
    set_dotted(cfg, s.substr(0, eq), std::move(value));
  }
  for (const auto& [k, v] : o.strings) cfg[k] = v;
  for (const auto& [k, v] : o.lists) cfg[k] = v;
  if (o.seed) cfg["seed"] = *o.seed;
  if (o.out) cfg["out"] = *o.out;
  if (!o.dims.empty()) cfg["dims"] = o.dims;
  return cfg;
}

std::string need_string(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) throw ArgumentError("missing required setting '" + key + "'");
  if (!cfg[key].is_string()) throw ArgumentError("setting '" + key + "' must be a string");
  return cfg[key].get<std::string>();
}

std::string string_or(const json& cfg, const std::string& key, const std::string& fallback) {
  return cfg.contains(key) ? need_string(cfg, key) : fallback;
}

std::uint64_t seed_of(const json& cfg) {
  if (!cfg.contains("seed")) return 0;
  if (!cfg["seed"].is_number_unsigned()) throw ArgumentError("seed must be a non-negative integer");
  return cfg["seed"].get<std::uint64_t>();
}

fs::path out_dir(const json& cfg) {
  fs::path dir = need_string(cfg, "out");
  fs::create_directories(dir);
  return dir;
}

void require_file(const std::string& path, const std::string& what) {
  std::error_code ec;
  if (!fs::is_regular_file(path, ec)) throw IoError(what + " file '" + path + "' does not exist");
}

LabelVolume load_labels(const json& cfg) {
  const auto labels = need_string(cfg, "labels");
  const auto table = need_string(cfg, "label_table");
  require_file(labels, "label volume");
  require_file(table, "label table");
  return load_label_volume(labels, table);
}

SynthConfig synth_config(const json& cfg) {
  json s = cfg.value("synth", json::object());
  if (!s.is_object()) throw ValidationError("'synth' must be an object");
  if (cfg.contains("seed") || !s.contains("seed")) s["seed"] = derive_seed(seed_of(cfg), "synth");
  return synth_config_from_json(s);
}

Connectivity connectivity_of(const json& cfg) {
  const int c = cfg.value("connectivity", 26);
  if (c == 6) return Connectivity::Six;
  if (c == 26) return Connectivity::TwentySix;
  throw ArgumentError("connectivity must be 6 or 26");
}

std::size_t min_overlap_of(const json& cfg) {
  const auto v = cfg.value("min_overlap", json(1));
  if (!v.is_number_integer() || v.get<std::int64_t>() < 1) throw ArgumentError("min_overlap must be an integer >= 1");
  return v.get<std::size_t>();
}

void write_json(const fs::path& path, const ordered_json& j) { io::write_text_atomic(path, j.dump(2) + "\n"); }

std::vector<std::string> string_list(const json& cfg, const std::string& key) {
  if (!cfg.contains(key)) return {};
  const auto& v = cfg[key];
  if (v.is_string()) return {v.get<std::string>()};
  if (!v.is_array()) throw ArgumentError("setting '" + key + "' must be a string list");
  std::vector<std::string> out;
  for (const auto& e : v) {
    if (!e.is_string()) throw ArgumentError("setting '" + key + "' must be a string list");
    out.push_back(e.get<std::string>());
  }
  return out;
}

// Shared stages ----------------------------------------------------------------

struct SynthOutputs {
  SynthResult result;
  SynthConfig config;
};

SynthOutputs run_synth(const json& cfg, const fs::path& dir) {
  const auto vol_path = need_string(cfg, "volume");
  require_file(vol_path, "volume");
  const LabelVolume labels = load_labels(cfg);
  const Volume v = load_volume(vol_path);
  const SynthConfig sc = synth_config(cfg);
  SynthResult r = synthesize(v, labels, sc);
  save_volume(r.volume, dir / "abnormal.nii.gz");
  save_mask(r.mask, dir / "anomaly_mask.nii.gz", v.spacing(), v.affine());
  ordered_json j;
  j["config"] = to_json(sc);
  j["lesions"] = ordered_json::array();
  for (const auto& rec : r.records) j["lesions"].push_back(to_json(rec));
  write_json(dir / "lesions.json", j);
  return {std::move(r), sc};
}

std::vector<RegionPrompt> build_prompts(const json& cfg, const BinaryMask* anomaly, const LabelVolume& labels,
                                        AssemblyMode mode) {
  switch (mode) {
    case AssemblyMode::Global: return {whole_image_prompt(labels.dims())};
    case AssemblyMode::Prompt: {
      const auto names = string_list(cfg, "prompt_names");
      if (names.empty()) throw ArgumentError("mode 'prompt' needs a non-empty prompt_names list");
      std::vector<RegionPrompt> out;
      for (std::size_t i = 0; i < names.size(); ++i) {
        auto p = prompt_from_names({names[i]}, labels);
        p.id = "prompt-" + std::to_string(i);
        out.push_back(std::move(p));
      }
      return out;
    }
    case AssemblyMode::AutoSeg:
      if (!anomaly) throw ArgumentError("mode 'autoseg' needs an anomaly mask");
      return select_rois(*anomaly, labels, min_overlap_of(cfg), connectivity_of(cfg));
  }
  return {};
}

void write_prompts(const std::vector<RegionPrompt>& prompts, const LabelVolume& labels, const fs::path& dir) {
  fs::create_directories(dir / "prompt_masks");
  ordered_json j;
  j["prompts"] = ordered_json::array();
  for (const auto& p : prompts) {
    const std::string ref = "prompt_masks/" + p.id + ".nii.gz";
    save_mask(p.mask, dir / ref, labels.spacing(), labels.affine());
    j["prompts"].push_back(to_json(p, ref));
  }
  write_json(dir / "prompts.json", j);
}

std::vector<RegionPrompt> read_prompts(const std::string& path, bool with_masks) {
  require_file(path, "prompts");
  const auto text = io::read_text(path);
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const json::parse_error& e) {
    throw ParseError("prompts '" + path + "': malformed JSON at byte " + std::to_string(e.byte));
  }
  if (!j.is_object() || !j.contains("prompts") || !j["prompts"].is_array())
    throw SchemaError("prompts '" + path + "': expected {\"prompts\": [...]}");
  std::vector<RegionPrompt> out;
  const fs::path base = fs::path(path).parent_path();
  for (const auto& e : j["prompts"]) {
    BinaryMask m;
    if (with_masks) m = load_mask(base / e.at("mask_ref").get<std::string>());
    out.push_back(prompt_from_json(e, std::move(m)));
  }
  return out;
}

std::string join_names(const RegionPrompt& p) {
  if (p.is_global()) return "whole brain";
  if (p.structures.empty()) return "unlocalized region " + p.id;
  std::string s;
  for (std::size_t i = 0; i < p.structures.size(); ++i) {
    if (i) s += i + 1 == p.structures.size() ? " and " : ", ";
    s += p.structures[i].name;
  }
  return s;
}

// Stand-in for the learned report generator: one deterministic finding per
// prompt built from the lesion records it overlaps. Auto prompts only count
// lesions inside their own anomaly component.
ordered_json placeholder_regionals(const std::vector<RegionPrompt>& prompts, const SynthResult& r, Modality modality,
                                   Connectivity connectivity) {
  const auto components = connected_components(r.mask, connectivity);
  ordered_json j = ordered_json::object();
  for (const auto& p : prompts) {
    const BinaryMask& region =
        p.source == RegionPrompt::Source::Auto && p.component_index < components.size() ? components[p.component_index]
                                                                                         : p.mask;
    std::size_t hyper = 0, hypo = 0;
    for (std::size_t k = 0; k < r.records.size(); ++k) {
      if (!region.size() || intersection_count(region, r.lesion_masks[k]) == 0) continue;
      (r.records[k].polarity == Polarity::Hyper ? hyper : hypo)++;
    }
    std::string text;
    const std::string where = join_names(p);
    if (hyper + hypo == 0) {
      text = "No lesion is identified in the " + where + ".";
    } else {
      const std::string sig = hyper && hypo ? "mixed hyperintense and hypointense" : hyper ? "hyperintense" : "hypointense";
      const std::size_t n = hyper + hypo;
      text = (n == 1 ? std::string("A ") + sig + " lesion is" : std::to_string(n) + " " + sig + " lesions are") +
             " seen in the " + where + ".";
    }
    std::string key = where;
    for (int dup = 2; j.contains(key); ++dup) key = where + " (" + std::to_string(dup) + ")";
    j[key] = {{to_string(modality), text}, {"prompt_ref", p.id}};
  }
  return j;
}

void write_report(const GlobalReport& g, const fs::path& dir) {
  write_json(dir / "report.json", to_json(g));
  io::write_text_atomic(dir / "report.txt", render_text(g));
}

std::string templates_path(const json& cfg) { return string_or(cfg, "templates", LESIONFORGE_DATA_DIR "/templates.json"); }

std::size_t thread_count() {
  if (const char* env = std::getenv("LESIONFORGE_THREADS")) {
    char* end = nullptr;
    const long n = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || n < 1) throw ArgumentError("LESIONFORGE_THREADS must be a positive integer");
    return static_cast<std::size_t>(n);
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Verbs ------------------------------------------------------------------------

void cmd_fixture(const json& cfg) {
  const fs::path dir = out_dir(cfg);
  std::vector<std::size_t> d{48, 48, 40};
  if (cfg.contains("dims")) d = cfg["dims"].get<std::vector<std::size_t>>();
  if (d.size() != 3) throw ArgumentError("dims must have 3 entries");
  const Phantom p = make_phantom({d[0], d[1], d[2]}, derive_seed(seed_of(cfg), "fixture"));
  save_volume(p.volume, dir / "brain.nii.gz");
  save_label_volume(p.labels, dir / "atlas.nii.gz", dir / "atlas.json");
}

void cmd_synth(const json& cfg) { run_synth(cfg, out_dir(cfg)); }

void cmd_roi(const json& cfg) {
  const LabelVolume labels = load_labels(cfg);
  const AssemblyMode mode = assembly_mode_from_string(string_or(cfg, "mode", "autoseg"));
  std::optional<BinaryMask> anomaly;
  if (mode == AssemblyMode::AutoSeg) {
    const auto path = need_string(cfg, "anomaly");
    require_file(path, "anomaly mask");
    anomaly = load_mask(path);
  }
  const auto prompts = build_prompts(cfg, anomaly ? &*anomaly : nullptr, labels, mode);
  write_prompts(prompts, labels, out_dir(cfg));
}

void cmd_eval_seg(const json& cfg) {
  const auto pred = string_list(cfg, "pred"), gt = string_list(cfg, "gt");
  if (pred.empty() || pred.size() != gt.size()) throw ArgumentError("eval-seg needs matching, non-empty pred and gt lists");
  for (const auto& p : pred) require_file(p, "prediction");
  for (const auto& g : gt) require_file(g, "ground-truth");
  const double pct = cfg.value("hd_percentile", 100.0);
  if (pct != 100.0 && pct != 95.0) throw ArgumentError("hd_percentile must be 100 or 95");

  std::vector<SegScore> scores(pred.size());
  std::vector<std::string> errors(pred.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next++) < pred.size();) {
      try {
        const Spacing sp = read_header(gt[i]).spacing;
        scores[i] = seg_score(load_mask(pred[i]), load_mask(gt[i]), sp, pct);
      } catch (const std::exception& e) {
        errors[i] = e.what();
      }
    }
  };
  std::vector<std::thread> pool;
  const std::size_t n = std::min(thread_count(), pred.size());
  for (std::size_t t = 0; t < n; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
  for (std::size_t i = 0; i < errors.size(); ++i)
    if (!errors[i].empty()) throw ArgumentError("case " + std::to_string(i) + " (" + pred[i] + "): " + errors[i]);

  std::vector<std::string> ids;
  for (const auto& p : pred) ids.push_back(fs::path(p).filename().string());
  const auto report = seg_report_json(ids, scores);
  if (cfg.contains("out")) write_json(out_dir(cfg) / "seg_metrics.json", report);
  else std::cout << report.dump(2) << "\n";
}

void cmd_eval_report(const json& cfg) {
  const auto cand = need_string(cfg, "candidate"), ref = need_string(cfg, "reference");
  require_file(cand, "candidate");
  require_file(ref, "reference");
  const std::string c = io::read_text(cand), r = io::read_text(ref);
  ordered_json j = to_json(text_score(c, r));
  if (cfg.contains("external_scorer")) j["external"] = ExternalScorer(need_string(cfg, "external_scorer")).score(c, r);
  if (cfg.contains("out")) write_json(out_dir(cfg) / "text_metrics.json", j);
  else std::cout << j.dump(2) << "\n";
}

void cmd_assemble(const json& cfg) {
  const auto table_path = need_string(cfg, "label_table");
  require_file(table_path, "label table");
  const LabelTable atlas = parse_label_table(io::read_text(table_path));
  const auto reg_path = need_string(cfg, "regionals");
  require_file(reg_path, "regional reports");
  const auto regionals = parse_regional_reports(io::read_text(reg_path));
  const auto prompts = read_prompts(need_string(cfg, "prompts"), false);
  const auto templates = TemplateStore::load(templates_path(cfg));
  const auto mode = assembly_mode_from_string(string_or(cfg, "mode", "autoseg"));
  const auto modality = modality_from_string(string_or(cfg, "modality", "FLAIR"));
  write_report(assemble_modes(mode, regionals, prompts, templates, modality, atlas), out_dir(cfg));
}

void cmd_pipeline(const json& cfg) {
  const fs::path dir = out_dir(cfg);
  const auto mode = assembly_mode_from_string(string_or(cfg, "mode", "autoseg"));
  const auto modality = modality_from_string(string_or(cfg, "modality", "FLAIR"));
  if (mode == AssemblyMode::Prompt && string_list(cfg, "prompt_names").empty())
    throw ArgumentError("mode 'prompt' needs a non-empty prompt_names list");
  const auto templates = TemplateStore::load(templates_path(cfg));
  const LabelVolume labels = load_labels(cfg);

  const SynthOutputs s = run_synth(cfg, dir);
  const auto prompts = build_prompts(cfg, &s.result.mask, labels, mode);
  write_prompts(prompts, labels, dir);
  const ordered_json regionals = placeholder_regionals(prompts, s.result, modality, connectivity_of(cfg));
  write_json(dir / "regionals.json", regionals);
  const auto parsed = parse_regional_reports(regionals.dump());
  write_report(assemble_modes(mode, parsed, prompts, templates, modality, labels.table()), dir);
}

int exit_code_for(const Error& e) {
  if (dynamic_cast<const SynthesisError*>(&e) || dynamic_cast<const DegenerateIntervalError*>(&e)) return 3;
  return 2;
}

void report_error(const std::string& kind, const std::string& message) {
  std::cerr << ordered_json{{"error", kind}, {"message", message}}.dump() << "\n";
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"lesionforge: synthetic lesions, ROI prompts, metrics and grounded report assembly"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "JSON configuration file");
    sub->add_option("--set", o.sets, "Override a config key: key.sub=value (value parsed as JSON)");
    sub->add_option_function<std::uint64_t>("--seed", [&](std::uint64_t v) { o.seed = v; }, "Master seed");
    sub->add_option_function<std::string>("--out", [&](const std::string& v) { o.out = v; }, "Output directory");
  };
  auto add_string = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::string>(flag, [&o, key](const std::string& v) { o.strings[key] = v; }, help);
  };
  auto add_list = [&](CLI::App* sub, const std::string& flag, const std::string& key, const std::string& help) {
    sub->add_option_function<std::vector<std::string>>(
        flag, [&o, key](const std::vector<std::string>& v) { o.lists[key] = v; }, help);
  };

  std::map<CLI::App*, void (*)(const json&)> handlers;
  auto verb = [&](const std::string& name, const std::string& help, void (*fn)(const json&)) {
    CLI::App* sub = app.add_subcommand(name, help);
    add_common(sub);
    handlers[sub] = fn;
    return sub;
  };

  auto* fixture = verb("fixture", "Write a synthetic brain volume and atlas", cmd_fixture);
  fixture->add_option_function<std::vector<std::size_t>>(
      "--dims", [&](const std::vector<std::size_t>& v) { o.dims = v; },
      "Grid size nx ny nz")->expected(3);

  auto* synth = verb("synth", "Insert synthetic lesions into a volume", cmd_synth);
  add_string(synth, "--volume", "volume", "Input volume (NIfTI-1)");
  add_string(synth, "--labels", "labels", "Atlas label volume");
  add_string(synth, "--label-table", "label_table", "Atlas label table (JSON)");

  auto* roi = verb("roi", "Build region prompts", cmd_roi);
  add_string(roi, "--anomaly", "anomaly", "Anomaly mask (autoseg mode)");
  add_string(roi, "--labels", "labels", "Atlas label volume");
  add_string(roi, "--label-table", "label_table", "Atlas label table (JSON)");
  add_string(roi, "--mode", "mode", "autoseg | prompt | global");
  add_list(roi, "--names", "prompt_names", "Structure names (prompt mode)");

  auto* eval_seg = verb("eval-seg", "Segmentation metrics", cmd_eval_seg);
  add_list(eval_seg, "--pred", "pred", "Predicted masks");
  add_list(eval_seg, "--gt", "gt", "Ground-truth masks");

  auto* eval_report = verb("eval-report", "Text metrics between two reports", cmd_eval_report);
  add_string(eval_report, "--candidate", "candidate", "Candidate report text file");
  add_string(eval_report, "--reference", "reference", "Reference report text file");
  add_string(eval_report, "--external-scorer", "external_scorer", "Command for a learned text metric");

  auto* assemble = verb("assemble", "Assemble a global report from regional findings", cmd_assemble);
  add_string(assemble, "--regionals", "regionals", "Regional report JSON");
  add_string(assemble, "--prompts", "prompts", "prompts.json from the roi verb");
  add_string(assemble, "--label-table", "label_table", "Atlas label table (JSON)");
  add_string(assemble, "--templates", "templates", "Template store JSON");
  add_string(assemble, "--mode", "mode", "autoseg | prompt | global");
  add_string(assemble, "--modality", "modality", "Report modality (default FLAIR)");

  auto* pipeline = verb("pipeline", "synth -> roi -> assemble end to end", cmd_pipeline);
  add_string(pipeline, "--volume", "volume", "Input volume (NIfTI-1)");
  add_string(pipeline, "--labels", "labels", "Atlas label volume");
  add_string(pipeline, "--label-table", "label_table", "Atlas label table (JSON)");
  add_string(pipeline, "--templates", "templates", "Template store JSON");
  add_string(pipeline, "--mode", "mode", "autoseg | prompt | global");
  add_string(pipeline, "--modality", "modality", "Report modality (default FLAIR)");
  add_list(pipeline, "--names", "prompt_names", "Structure names (prompt mode)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    report_error("usage", e.what());
    return 2;
  }

  try {
    for (const auto& [sub, fn] : handlers)
      if (sub->parsed()) {
        fn(build_config(o));
      }
  } catch (const Error& e) {
    report_error(e.kind(), e.what());
    return exit_code_for(e);
  } catch (const json::exception& e) {
    report_error("config", e.what());
    return 2;
  } catch (const fs::filesystem_error& e) {
    report_error("io", e.what());
    return 2;
  } catch (const std::exception& e) {
    report_error("internal", e.what());
    return 3;
  }
  return 0;
}
