#pragma once

// The explanation action space: bubbles, their information content, the
// discourse relation a new bubble bears to the dialog so far, and the
// accumulated cost of a dialog.

#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <string_view>
#include <vector>

#include "xtom/aog.hpp"
#include "xtom/task.hpp"

namespace xtom {

inline constexpr std::array<double, 3> kSpaceSigmas{1.15, 3.15, 4.5};
inline constexpr std::array<double, 3> kScaleSigmas{1.0, 9.0, 15.0};

/// Listed in report-column order.
enum class Discourse { Elaboration, Sequence, Recurrence, Restatement, Summary };

inline constexpr Discourse kDiscourses[] = {Discourse::Elaboration, Discourse::Sequence, Discourse::Recurrence,
                                            Discourse::Restatement, Discourse::Summary};

constexpr std::string_view discourse_name(Discourse d) {
  switch (d) {
    case Discourse::Elaboration: return "ELABORATION";
    case Discourse::Sequence: return "SEQUENCE";
    case Discourse::Recurrence: return "RECURRENCE";
    case Discourse::Restatement: return "RESTATEMENT";
    case Discourse::Summary: return "SUMMARY";
  }
  return "?";
}

inline Discourse parse_discourse(std::string_view s) {
  for (Discourse d : kDiscourses)
    if (discourse_name(d) == s) return d;
  fail(ErrorCode::SchemaError, "unknown discourse relation '" + std::string(s) + "'");
}

/// Differential entropy of the space/scale Gaussian pair, in nats.
inline double content(double sigma1, double sigma2) {
  if (!(sigma1 > 0.0) || !(sigma2 > 0.0)) fail(ErrorCode::NonpositiveSigma, "sigmas must be positive");
  return 1.0 + 0.5 * std::log(4.0 * std::numbers::pi * std::numbers::pi * sigma1 * sigma1 * sigma2 * sigma2);
}

struct Bubble {
  NodeId attention;
  Process act = Process::Alpha;
  int space = 0;  // index into kSpaceSigmas
  int scale = 0;  // index into kScaleSigmas
  double content = 0.0;
  Discourse discourse = Discourse::Sequence;
  Region region;

  double sigma1() const { return kSpaceSigmas.at(space); }
  double sigma2() const { return kScaleSigmas.at(scale); }

  /// Same (attention, act, sigma1, sigma2).
  bool same_action(const Bubble& o) const {
    return attention == o.attention && act == o.act && space == o.space && scale == o.scale;
  }
};

struct DialogHistory {
  std::vector<Bubble> bubbles;
  std::vector<std::string> questions;

  std::size_t turns() const { return bubbles.size(); }
};

/// Flat index over every (node, act, space, scale) combination of a grammar.
class ActionSpace {
 public:
  explicit ActionSpace(std::size_t node_count) : nodes_(node_count) {}

  std::size_t size() const { return nodes_ * 27; }

  std::size_t index(const Bubble& b) const {
    return ((static_cast<std::size_t>(b.attention.value) * 3 + static_cast<std::size_t>(b.act)) * 3 +
            static_cast<std::size_t>(b.space)) * 3 + static_cast<std::size_t>(b.scale);
  }

  Bubble decode(std::size_t index) const {
    Bubble b;
    b.scale = static_cast<int>(index % 3);
    index /= 3;
    b.space = static_cast<int>(index % 3);
    index /= 3;
    b.act = static_cast<Process>(index % 3);
    b.attention = NodeId{static_cast<std::uint32_t>(index / 3)};
    return b;
  }

 private:
  std::size_t nodes_;
};

/// Acts a node in the parse graph can be explained with: its own detection
/// process, BETA when any decomposition child is present, GAMMA when any
/// decomposition parent is present.
inline std::vector<Process> supported_acts(NodeId v, const ParseGraph& pg, const AogGrammar& g) {
  bool ok[3] = {false, false, false};
  if (const auto* det = pg.detection(v)) ok[static_cast<int>(det->process)] = true;
  for (NodeId c : g.children(v))
    if (pg.contains(c)) ok[static_cast<int>(Process::Beta)] = true;
  for (NodeId p : g.parents(v))
    if (pg.contains(p)) ok[static_cast<int>(Process::Gamma)] = true;
  std::vector<Process> out;
  for (Process p : kProcesses)
    if (ok[static_cast<int>(p)]) out.push_back(p);
  return out;
}

/// Every bubble the parse graph can back for the task, in action-index order.
/// Content, discourse and region are filled at selection time.
inline std::vector<Bubble> enumerate_actions(const ParseGraph& pg, const AogGrammar& g, const Task& task) {
  if (pg.nodes.empty()) fail(ErrorCode::EmptyPg, "no detections to explain");
  auto relevant = task_relevant_nodes(g, task);
  std::vector<Bubble> out;
  for (NodeId v : pg.nodes) {
    if (!relevant.count(v)) continue;
    for (Process act : supported_acts(v, pg, g))
      for (int s1 = 0; s1 < 3; ++s1)
        for (int s2 = 0; s2 < 3; ++s2) {
          Bubble b;
          b.attention = v;
          b.act = act;
          b.space = s1;
          b.scale = s2;
          out.push_back(b);
        }
  }
  return out;
}

/// Relation of a candidate to the dialog so far. Rules, first match wins:
///   RECURRENCE  an identical (attention, act, sigma1, sigma2) bubble exists;
///   SEQUENCE    the attention is new to the dialog;
/// otherwise compared against the most recent bubble on the same attention:
///   SUMMARY     lower sigma2 and higher sigma1;
///   ELABORATION higher sigma1 or higher sigma2;
///   RESTATEMENT anything else.
inline Discourse classify_discourse(const Bubble& candidate, const DialogHistory& history) {
  const Bubble* prior = nullptr;
  for (const auto& b : history.bubbles) {
    if (b.same_action(candidate)) return Discourse::Recurrence;
    if (b.attention == candidate.attention) prior = &b;
  }
  if (!prior) return Discourse::Sequence;
  if (candidate.scale < prior->scale && candidate.space > prior->space) return Discourse::Summary;
  if (candidate.space > prior->space || candidate.scale > prior->scale) return Discourse::Elaboration;
  return Discourse::Restatement;
}

/// Sum of inverse contents over the dialog.
inline double dialog_cost(const DialogHistory& history) {
  double c = 0.0;
  for (const auto& b : history.bubbles) {
    if (!(b.content > 0.0)) fail(ErrorCode::ZeroContent, "bubble without positive content");
    c += 1.0 / b.content;
  }
  return c;
}

/// Circle revealed by a bubble: the attention's detected region scaled by
/// sigma1 relative to the smallest space setting, capped at radius 0.5.
inline Region bubble_region(NodeId attention, double sigma1, const ParseGraph& pg) {
  const auto* det = pg.detection(attention);
  if (!det) fail(ErrorCode::NotDetected, "attention node has no detection");
  Region r = det->region;
  r.r = std::min(0.5, r.r * (sigma1 / kSpaceSigmas[0]));
  return r;
}

/// Fills content, discourse and region for a chosen bubble.
inline Bubble finalize_bubble(Bubble b, const DialogHistory& history, const ParseGraph& pg) {
  b.content = content(b.sigma1(), b.sigma2());
  b.discourse = classify_discourse(b, history);
  b.region = bubble_region(b.attention, b.sigma1(), pg);
  return b;
}

}  // namespace xtom
