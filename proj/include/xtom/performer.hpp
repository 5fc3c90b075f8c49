#pragma once

// Simulated image interpretation. A scene carries ground-truth part regions;
// the performer turns it into the machine's parse graph through direct
// detection (alpha), bottom-up binding (beta) and top-down context (gamma),
// with a configurable error model standing in for a real vision system.

#include <cmath>
#include <map>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "xtom/aog.hpp"
#include "xtom/rng.hpp"

namespace xtom {

struct Scene {
  std::string id;
  std::string task_label;
  std::map<NodeId, Region> parts;
  std::string image_ref;

  const Region* part(NodeId v) const {
    auto it = parts.find(v);
    return it == parts.end() ? nullptr : &it->second;
  }
};

struct NoiseConfig {
  double miss_rate = 0.0;
  double corrupt_rate = 0.0;
  double region_jitter = 0.0;
  std::uint64_t seed = 0;
  double binding_threshold = 0.5;
  double gamma_discount = 0.8;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(miss_rate) || !prob(corrupt_rate) || !prob(binding_threshold) || !prob(gamma_discount) ||
        region_jitter < 0.0)
      fail(ErrorCode::ConfigError, "noise parameters out of range");
  }
};

namespace detail {

inline Region clamp_region(Region r) {
  r.cx = clamp01(r.cx);
  r.cy = clamp01(r.cy);
  if (r.r > 0.5) r.r = 0.5;
  return r;
}

/// Smallest axis-aligned-box-centred circle enclosing the given circles.
inline Region bounding_circle(std::span<const Region> rs) {
  double x0 = 1.0, y0 = 1.0, x1 = 0.0, y1 = 0.0;
  for (const auto& r : rs) {
    x0 = std::min(x0, r.cx - r.r);
    y0 = std::min(y0, r.cy - r.r);
    x1 = std::max(x1, r.cx + r.r);
    y1 = std::max(y1, r.cy + r.r);
  }
  Region out{clamp01((x0 + x1) / 2), clamp01((y0 + y1) / 2), 0.0};
  for (const auto& r : rs) out.r = std::max(out.r, std::hypot(r.cx - out.cx, r.cy - out.cy) + r.r);
  if (out.r > 0.5) out.r = 0.5;
  return out;
}

}  // namespace detail

/// Direct detection of an annotated terminal.
///
/// Draw order: miss test (1 draw); if detected, corruption test (1), jitter
/// (2 normals = 4 draws), and for corrupted detections a displacement angle (1).
inline std::optional<DetectionRecord> alpha_detect(NodeId node, const Scene& scene, const NoiseConfig& noise,
                                                   const AogGrammar& g, Rng& rng) {
  if (!g.is_terminal(node)) fail(ErrorCode::NotTerminal, "'" + g.name_of(node) + "' is not a terminal");
  const Region* truth = scene.part(node);
  if (!truth) return std::nullopt;
  if (rng.uniform() < noise.miss_rate) return std::nullopt;
  bool correct = !(rng.uniform() < noise.corrupt_rate);
  Region reg = *truth;
  reg.cx += noise.region_jitter * rng.normal();
  reg.cy += noise.region_jitter * rng.normal();
  if (!correct) {
    double angle = 2.0 * std::numbers::pi * rng.uniform();
    reg.cx += 2.0 * truth->r * std::cos(angle);
    reg.cy += 2.0 * truth->r * std::sin(angle);
  }
  reg = detail::clamp_region(reg);
  double d = std::hypot(reg.cx - truth->cx, reg.cy - truth->cy);
  double conf = std::exp(-d * d / (2.0 * truth->r * truth->r));
  return DetectionRecord{Process::Alpha, conf, reg, correct};
}

/// Bottom-up binding from the node's decomposition children.
/// `child_records` is aligned with `g.children(node)`. An OR node is covered
/// as soon as one alternative is detected.
inline std::optional<DetectionRecord> beta_infer(NodeId node, const AogGrammar& g,
                                                 std::span<const std::optional<DetectionRecord>> child_records,
                                                 double binding_threshold = 0.5) {
  const auto& children = g.children(node);
  if (children.empty()) fail(ErrorCode::NoChildren, "'" + g.name_of(node) + "' has no children to bind");
  if (child_records.size() != children.size())
    fail(ErrorCode::NoChildren, "child record count does not match children of '" + g.name_of(node) + "'");
  std::vector<Region> regions;
  double conf = 0.0;
  bool all_correct = true;
  for (const auto& rec : child_records) {
    if (!rec) continue;
    regions.push_back(rec->region);
    conf += rec->confidence;
    all_correct = all_correct && rec->correct;
  }
  if (regions.empty()) return std::nullopt;
  double coverage = g.node(node).kind == NodeKind::Or
                        ? 1.0
                        : static_cast<double>(regions.size()) / static_cast<double>(children.size());
  if (coverage < binding_threshold) return std::nullopt;
  return DetectionRecord{Process::Beta, conf / static_cast<double>(regions.size()),
                         detail::bounding_circle(regions), all_correct};
}

/// Top-down inference from a detected parent. Draw order: corruption test (1),
/// taken only when the node is annotated.
inline std::optional<DetectionRecord> gamma_infer(NodeId node, const DetectionRecord& parent_record,
                                                  const Scene& scene, const NoiseConfig& noise,
                                                  const AogGrammar& g, Rng& rng) {
  if (g.parents(node).empty()) fail(ErrorCode::NoParent, "'" + g.name_of(node) + "' has no parent");
  const Region* truth = scene.part(node);
  if (!truth) return std::nullopt;
  bool own_ok = !(rng.uniform() < noise.corrupt_rate);
  return DetectionRecord{Process::Gamma, parent_record.confidence * noise.gamma_discount, *truth,
                         parent_record.correct && own_ok};
}

/// Produces the machine's parse graph for a scene.
///
/// Pass 1 walks the grammar in post-order: terminals try alpha_detect,
/// non-terminals try beta_infer over their children. Pass 2 walks in
/// pre-order and gives every still-undetected annotated node a gamma_infer
/// from its first detected decomposition parent. All randomness comes from
/// `Rng(noise.seed)` in that order.
inline ParseGraph interpret(const Scene& scene, const AogGrammar& g, const NoiseConfig& noise) {
  noise.validate();
  for (const auto& [v, reg] : scene.parts) {
    if (v.value >= g.node_count()) fail(ErrorCode::GrammarMismatch, "scene part outside grammar");
    if (!reg.valid()) fail(ErrorCode::GrammarMismatch, "scene '" + scene.id + "' has an invalid region");
  }
  Rng rng(noise.seed);
  std::vector<std::optional<DetectionRecord>> rec(g.node_count());

  auto pre = g.preorder();
  for (auto it = pre.rbegin(); it != pre.rend(); ++it) {
    NodeId v = *it;
    if (g.is_terminal(v)) {
      rec[v.value] = alpha_detect(v, scene, noise, g, rng);
    } else {
      std::vector<std::optional<DetectionRecord>> kids;
      for (NodeId c : g.children(v)) kids.push_back(rec[c.value]);
      rec[v.value] = beta_infer(v, g, kids, noise.binding_threshold);
    }
  }
  for (NodeId v : pre) {
    if (rec[v.value] || !scene.part(v)) continue;
    for (NodeId p : g.parents(v)) {
      if (rec[p.value]) {
        rec[v.value] = gamma_infer(v, *rec[p.value], scene, noise, g, rng);
        break;
      }
    }
  }

  std::set<NodeId> nodes;
  for (std::uint32_t i = 0; i < g.node_count(); ++i)
    if (rec[i]) nodes.insert(NodeId{i});
  ParseGraph pg = induced_pg(g, nodes);
  for (NodeId v : nodes) pg.detections.emplace(v, *rec[v.value]);
  if (pg.contains(g.root())) {
    auto actions = g.slot_values(g.root(), "action");
    if (std::find(actions.begin(), actions.end(), scene.task_label) != actions.end())
      pg.attributes[g.root()]["action"] = scene.task_label;
  }
  return pg;
}

/// Parses `scene <id> <task-label> [image-ref]` records each followed by
/// `part <node-id> <cx> <cy> <r>` lines.
inline std::vector<Scene> load_scenes(std::string_view document, const AogGrammar& g) {
  std::vector<Scene> out;
  std::istringstream in{std::string(document)};
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto toks = detail::split_ws(detail::strip_comment(line));
    if (toks.empty()) continue;
    auto where = " (line " + std::to_string(lineno) + ")";
    if (toks[0] == "scene") {
      if (toks.size() < 3 || toks.size() > 4) fail(ErrorCode::SchemaError, "bad scene record" + where);
      out.push_back(Scene{toks[1], toks[2], {}, toks.size() == 4 ? toks[3] : std::string{}});
    } else if (toks[0] == "part") {
      if (out.empty()) fail(ErrorCode::SchemaError, "part before any scene" + where);
      if (toks.size() != 5) fail(ErrorCode::SchemaError, "bad part record" + where);
      Region r;
      try {
        r = Region{std::stod(toks[2]), std::stod(toks[3]), std::stod(toks[4])};
      } catch (const std::exception&) {
        fail(ErrorCode::SchemaError, "bad number in part record" + where);
      }
      if (!r.valid()) fail(ErrorCode::SchemaError, "region out of range" + where);
      auto id = g.find(toks[1]);
      if (!id) fail(ErrorCode::DanglingRef, "part '" + toks[1] + "' not in grammar" + where);
      out.back().parts[*id] = r;
    } else {
      fail(ErrorCode::SchemaError, "unknown record '" + toks[0] + "'" + where);
    }
  }
  return out;
}

inline std::vector<Scene> load_scenes_file(const std::string& path, const AogGrammar& g) {
  return load_scenes(detail::read_file(path), g);
}

inline std::string format_scenes(const std::vector<Scene>& scenes, const AogGrammar& g) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(6);
  for (const auto& s : scenes) {
    out << "scene " << s.id << ' ' << s.task_label;
    if (!s.image_ref.empty()) out << ' ' << s.image_ref;
    out << '\n';
    for (const auto& [v, r] : s.parts) out << "part " << g.name_of(v) << ' ' << r.cx << ' ' << r.cy << ' ' << r.r << '\n';
  }
  return out.str();
}

/// Random scenes with a nested layout: each child circle (0.2 to 0.35 of the
/// parent's radius) sits inside its parent's, and non-terminals are annotated with the bounding circle of
/// their children.
inline std::vector<Scene> generate_scenes(const AogGrammar& g, std::size_t count, std::uint64_t seed,
                                          const std::vector<std::string>& labels, const std::string& prefix = "s") {
  Rng rng(seed);
  std::vector<Scene> out;
  auto pre = g.preorder();
  for (std::size_t k = 0; k < count; ++k) {
    Scene s;
    s.id = prefix + std::to_string(k);
    s.task_label = labels.empty() ? "unknown" : labels[rng.index(labels.size())];
    std::map<NodeId, Region> place;
    for (NodeId v : pre) {
      if (v == g.root()) {
        double cx = 0.4 + 0.2 * rng.uniform(), cy = 0.4 + 0.2 * rng.uniform();
        place[v] = Region{cx, cy, 0.3 + 0.1 * rng.uniform()};
        continue;
      }
      const Region& par = place.at(g.parents(v).front());
      double r = par.r * (0.2 + 0.15 * rng.uniform());
      double ang = 2.0 * std::numbers::pi * rng.uniform();
      double rad = (par.r - r) * std::sqrt(rng.uniform());
      place[v] = detail::clamp_region(Region{par.cx + rad * std::cos(ang), par.cy + rad * std::sin(ang), r});
    }
    for (auto it = pre.rbegin(); it != pre.rend(); ++it) {
      if (g.is_terminal(*it)) continue;
      std::vector<Region> kids;
      for (NodeId c : g.children(*it)) kids.push_back(place.at(c));
      place[*it] = detail::bounding_circle(kids);
    }
    s.parts = std::move(place);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace xtom
