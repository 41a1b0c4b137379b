#pragma once

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <limits>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "lesionforge/error.hpp"
#include "lesionforge/io.hpp"
#include "lesionforge/morphology.hpp"
#include "lesionforge/volume.hpp"

namespace lesionforge {

// Segmentation overlap ------------------------------------------------------

struct OverlapCounts {
  std::size_t pred = 0, truth = 0, both = 0;
};

inline OverlapCounts overlap_counts(const BinaryMask& pred, const BinaryMask& truth) {
  require_same_dims(pred.dims(), truth.dims(), "overlap");
  OverlapCounts c;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred.test(i), g = truth.test(i);
    c.pred += p;
    c.truth += g;
    c.both += p && g;
  }
  return c;
}

/// 2|P∩G| / (|P| + |G|); 1.0 when both masks are empty.
inline double dsc(const BinaryMask& pred, const BinaryMask& truth) {
  const auto c = overlap_counts(pred, truth);
  if (c.pred + c.truth == 0) return 1.0;
  return 2.0 * static_cast<double>(c.both) / static_cast<double>(c.pred + c.truth);
}

/// |P∩G| / (|P∩G| + |P−G|); empty P gives 1.0 if G is empty too, else 0.0.
inline double precision(const BinaryMask& pred, const BinaryMask& truth) {
  const auto c = overlap_counts(pred, truth);
  if (c.pred == 0) return c.truth == 0 ? 1.0 : 0.0;
  return static_cast<double>(c.both) / static_cast<double>(c.pred);
}

/// |P∩G| / (|P∩G| + |G−P|); undefined (nullopt) when G is empty but P is not.
inline std::optional<double> sensitivity(const BinaryMask& pred, const BinaryMask& truth) {
  const auto c = overlap_counts(pred, truth);
  if (c.truth == 0) return c.pred == 0 ? std::optional<double>(1.0) : std::nullopt;
  return static_cast<double>(c.both) / static_cast<double>(c.truth);
}

// Hausdorff distance --------------------------------------------------------

/// Mask voxels with at least one 6-neighbour outside the mask (or the grid).
inline BinaryMask surface(const BinaryMask& m) { return m - erode(m, StructuringElement::ball(1)); }

namespace detail {

// Squared distance transform along one line (Felzenszwalb & Huttenlocher),
// sample positions scaled by `step` millimetres.
inline void edt_line(std::vector<double>& f, double step, std::vector<double>& out, std::vector<std::size_t>& v,
                     std::vector<double>& z) {
  const std::size_t n = f.size();
  constexpr double inf = std::numeric_limits<double>::infinity();
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < inf) {
      first = q;
      break;
    }
  out.assign(n, inf);
  if (first == n) return;
  v[0] = first;
  z[0] = -inf;
  z[1] = inf;
  auto pos = [step](std::size_t q) { return step * static_cast<double>(q); };
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == inf) continue;
    for (;;) {
      const std::size_t r = v[k];
      const double s = ((f[q] + pos(q) * pos(q)) - (f[r] + pos(r) * pos(r))) / (2.0 * (pos(q) - pos(r)));
      if (s <= z[k]) {
        if (k == 0) {
          v[0] = q;
          z[0] = -inf;
          z[1] = inf;
          break;
        }
        --k;
        continue;
      }
      ++k;
      v[k] = q;
      z[k] = s;
      z[k + 1] = inf;
      break;
    }
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < pos(q)) ++k;
    const double d = pos(q) - pos(v[k]);
    out[q] = d * d + f[v[k]];
  }
}

}  // namespace detail

/// Exact squared Euclidean distance (mm^2) from every voxel to the nearest
/// set voxel of `sites`.
inline Grid<double> squared_distance_transform(const BinaryMask& sites, const Spacing& spacing) {
  const Dims& d = sites.dims();
  Grid<double> g(d, std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < sites.size(); ++i)
    if (sites.test(i)) g[i] = 0.0;
  std::vector<double> line, out, z;
  std::vector<std::size_t> v;
  for (int axis = 0; axis < 3; ++axis) {
    const std::size_t n = d[axis];
    const std::size_t stride = axis == 0 ? 1 : (axis == 1 ? d.nx : d.nx * d.ny);
    const std::size_t lines = d.size() / n;
    line.resize(n);
    for (std::size_t l = 0; l < lines; ++l) {
      std::size_t start;
      if (axis == 0) start = l * d.nx;
      else if (axis == 1) start = (l % d.nx) + (l / d.nx) * d.nx * d.ny;
      else start = l;
      for (std::size_t i = 0; i < n; ++i) line[i] = g[start + i * stride];
      detail::edt_line(line, spacing[axis], out, v, z);
      for (std::size_t i = 0; i < n; ++i) g[start + i * stride] = out[i];
    }
  }
  return g;
}

/// Linear-interpolated percentile (the numpy default) of unsorted values.
inline double percentile(std::vector<double> values, double q) {
  if (values.empty()) throw ArgumentError("percentile of empty set");
  std::sort(values.begin(), values.end());
  const double rank = q / 100.0 * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(rank));
  const auto hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (rank - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

/// Distances (mm) from each surface voxel of `from` to the surface of `to`.
inline std::vector<double> directed_surface_distances(const BinaryMask& from, const BinaryMask& to,
                                                      const Spacing& spacing) {
  const BinaryMask sf = surface(from);
  const Grid<double> dt = squared_distance_transform(surface(to), spacing);
  std::vector<double> out;
  for (std::size_t i = 0; i < sf.size(); ++i)
    if (sf.test(i)) out.push_back(std::sqrt(dt[i]));
  return out;
}

/// Symmetric surface Hausdorff distance in mm. percentile 100 is the classic
/// maximum; 95 takes the larger of the two directed 95th percentiles.
/// Undefined (nullopt) when either mask is empty.
inline std::optional<double> hausdorff(const BinaryMask& pred, const BinaryMask& truth, const Spacing& spacing,
                                       double pct = 100.0) {
  require_same_dims(pred.dims(), truth.dims(), "hausdorff");
  validate_spacing(spacing);
  if (!(pct > 0.0 && pct <= 100.0)) throw ArgumentError("hausdorff: percentile must lie in (0, 100]");
  if (pred.empty() || truth.empty()) return std::nullopt;
  const auto a = directed_surface_distances(pred, truth, spacing);
  const auto b = directed_surface_distances(truth, pred, spacing);
  return std::max(percentile(a, pct), percentile(b, pct));
}

struct SegScore {
  double dsc = 0.0, pre = 0.0;
  std::optional<double> se;
  std::optional<double> hd;  // mm
};

inline SegScore seg_score(const BinaryMask& pred, const BinaryMask& truth, const Spacing& spacing,
                          double hd_percentile = 100.0) {
  return {dsc(pred, truth), precision(pred, truth), sensitivity(pred, truth),
          hausdorff(pred, truth, spacing, hd_percentile)};
}

// Text metrics --------------------------------------------------------------

/// Lowercase, split on whitespace, and emit every ASCII punctuation character
/// as its own token.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) out.push_back(std::move(cur));
    cur.clear();
  };
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isspace(c)) {
      flush();
    } else if (c < 128 && std::ispunct(c)) {
      flush();
      out.emplace_back(1, ch);
    } else {
      cur.push_back(static_cast<char>(std::tolower(c)));
    }
  }
  flush();
  return out;
}

namespace detail {

inline std::map<std::vector<std::string>, std::size_t> ngram_counts(const std::vector<std::string>& toks, std::size_t n) {
  std::map<std::vector<std::string>, std::size_t> m;
  if (toks.size() < n) return m;
  for (std::size_t i = 0; i + n <= toks.size(); ++i) ++m[std::vector<std::string>(toks.begin() + i, toks.begin() + i + n)];
  return m;
}

inline std::size_t clipped_matches(const std::map<std::vector<std::string>, std::size_t>& a,
                                   const std::map<std::vector<std::string>, std::size_t>& b) {
  std::size_t n = 0;
  for (const auto& [g, c] : a) {
    auto it = b.find(g);
    if (it != b.end()) n += std::min(c, it->second);
  }
  return n;
}

}  // namespace detail

/// Sentence BLEU with weights (0, 0, 0, 1): clipped 4-gram precision times
/// the brevity penalty exp(min(0, 1 - r/c)). No smoothing.
inline double bleu4(const std::vector<std::string>& candidate, const std::vector<std::string>& reference) {
  if (reference.empty()) throw ArgumentError("bleu4: empty reference");
  if (candidate.size() < 4) return 0.0;
  const auto cand = detail::ngram_counts(candidate, 4);
  const auto ref = detail::ngram_counts(reference, 4);
  const std::size_t matched = detail::clipped_matches(cand, ref);
  if (matched == 0) return 0.0;
  const double p4 = static_cast<double>(matched) / static_cast<double>(candidate.size() - 3);
  const double c = static_cast<double>(candidate.size()), r = static_cast<double>(reference.size());
  return p4 * std::exp(std::min(0.0, 1.0 - r / c));
}

inline double bleu4(std::string_view candidate, std::string_view reference) {
  return bleu4(tokenize(candidate), tokenize(reference));
}

/// ROUGE-N recall: clipped reference n-gram matches over reference n-grams.
inline double rouge_n(const std::vector<std::string>& candidate, const std::vector<std::string>& reference,
                      std::size_t n = 1) {
  if (n == 0) throw ArgumentError("rouge_n: n must be >= 1");
  const auto ref = detail::ngram_counts(reference, n);
  std::size_t total = 0;
  for (const auto& [g, c] : ref) total += c;
  if (total == 0) throw ArgumentError("rouge_n: empty reference");
  return static_cast<double>(detail::clipped_matches(ref, detail::ngram_counts(candidate, n))) /
         static_cast<double>(total);
}

inline double rouge_n(std::string_view candidate, std::string_view reference, std::size_t n = 1) {
  return rouge_n(tokenize(candidate), tokenize(reference), n);
}

struct TextScore {
  double bleu4 = 0.0, rouge1 = 0.0;
};

inline TextScore text_score(std::string_view candidate, std::string_view reference) {
  const auto c = tokenize(candidate), r = tokenize(reference);
  return {bleu4(c, r), rouge_n(c, r, 1)};
}

/// Learned text metrics (BERT-Score, RadGraph, ...) run out of process. The
/// command receives the path of a JSON file {"candidate": ..., "reference": ...}
/// as its last argument and must print {"score": <number>} on stdout.
class ExternalScorer {
 public:
  explicit ExternalScorer(std::string command) : command_(std::move(command)) {}

  double score(std::string_view candidate, std::string_view reference) const {
    namespace fs = std::filesystem;
    const fs::path req = fs::temp_directory_path() /
                         ("lesionforge-score-" + std::to_string(fnv(candidate, reference)) + ".json");
    nlohmann::json j{{"candidate", candidate}, {"reference", reference}};
    io::write_text_atomic(req, j.dump());
    const std::string cmd = command_ + " '" + req.string() + "'";
    std::string output;
    FILE* pipe = popen(cmd.c_str(), "r");
    if (!pipe) {
      fs::remove(req);
      throw IoError("cannot run external scorer '" + command_ + "'");
    }
    std::array<char, 4096> buf{};
    std::size_t n;
    while ((n = fread(buf.data(), 1, buf.size(), pipe)) > 0) output.append(buf.data(), n);
    const int status = pclose(pipe);
    fs::remove(req);
    if (status != 0) throw IoError("external scorer '" + command_ + "' exited with status " + std::to_string(status));
    try {
      auto r = nlohmann::json::parse(output);
      return r.at("score").get<double>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("external scorer output: ") + e.what());
    }
  }

 private:
  static std::size_t fnv(std::string_view a, std::string_view b) {
    std::size_t h = 1469598103934665603ULL;
    for (auto s : {a, b})
      for (unsigned char c : s) h = (h ^ c) * 1099511628211ULL;
    return h;
  }
  std::string command_;
};

// Batch summaries -------------------------------------------------------------

struct MeanStd {
  double mean = 0.0, std = 0.0;
  std::size_t n = 0;
};

/// Mean and population standard deviation of the defined values.
inline MeanStd mean_std(const std::vector<std::optional<double>>& xs) {
  MeanStd r;
  double sum = 0.0;
  for (const auto& x : xs)
    if (x) {
      sum += *x;
      ++r.n;
    }
  if (r.n == 0) return r;
  r.mean = sum / static_cast<double>(r.n);
  double ss = 0.0;
  for (const auto& x : xs)
    if (x) ss += (*x - r.mean) * (*x - r.mean);
  r.std = std::sqrt(ss / static_cast<double>(r.n));
  return r;
}

inline nlohmann::ordered_json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::ordered_json(*v) : nlohmann::ordered_json(nullptr);
}

inline nlohmann::ordered_json to_json(const SegScore& s) {
  return {{"dsc", s.dsc}, {"pre", s.pre}, {"se", optional_json(s.se)}, {"hd", optional_json(s.hd)}};
}

inline nlohmann::ordered_json to_json(const TextScore& s) { return {{"bleu4", s.bleu4}, {"rouge1", s.rouge1}}; }

inline nlohmann::ordered_json summary_json(const MeanStd& m) {
  return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}};
}

/// {"cases": [...], "summary": {"dsc": {"mean", "std", "n"}, ...}}
inline nlohmann::ordered_json seg_report_json(const std::vector<std::string>& case_ids, const std::vector<SegScore>& scores) {
  nlohmann::ordered_json j;
  j["cases"] = nlohmann::ordered_json::array();
  std::vector<std::optional<double>> d, p, s, h;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    auto c = to_json(scores[i]);
    c["case"] = i < case_ids.size() ? case_ids[i] : std::to_string(i);
    j["cases"].push_back(c);
    d.push_back(scores[i].dsc);
    p.push_back(scores[i].pre);
    s.push_back(scores[i].se);
    h.push_back(scores[i].hd);
  }
  j["summary"] = {{"dsc", summary_json(mean_std(d))},
                  {"pre", summary_json(mean_std(p))},
                  {"se", summary_json(mean_std(s))},
                  {"hd", summary_json(mean_std(h))}};
  return j;
}

}  // namespace lesionforge
