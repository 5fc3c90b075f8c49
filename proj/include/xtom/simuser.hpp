#pragma once

// Parameterized stand-in for a human player: picks questions from the task's
// catalog, attempts the task from what the bubbles have revealed, and rates
// the dialog.

#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xtom/aog.hpp"
#include "xtom/bubble.hpp"
#include "xtom/performer.hpp"
#include "xtom/rng.hpp"
#include "xtom/task.hpp"

namespace xtom {

enum class Curiosity { Breadth, Depth, Random };

struct UserProfile {
  Curiosity curiosity = Curiosity::Random;
  double evidence_threshold = 0.75;
  double accuracy_given_evidence = 0.9;
  int patience = 30;
  std::uint64_t seed = 0;

  void validate() const {
    auto prob = [](double p) { return p >= 0.0 && p <= 1.0; };
    if (!prob(evidence_threshold) || !prob(accuracy_given_evidence) || patience < 1)
      fail(ErrorCode::ConfigError, "user profile out of range");
  }
};

/// key=value lines; unknown keys are rejected, missing keys keep defaults.
inline UserProfile parse_profile(std::string_view text) {
  UserProfile p;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    auto body = detail::split_ws(detail::strip_comment(line));
    if (body.empty()) continue;
    std::string kv;
    for (const auto& t : body) kv += t;
    auto eq = kv.find('=');
    if (eq == std::string::npos) fail(ErrorCode::ConfigError, "profile line without '=': " + line);
    std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    try {
      if (key == "curiosity") {
        if (val == "breadth") p.curiosity = Curiosity::Breadth;
        else if (val == "depth") p.curiosity = Curiosity::Depth;
        else if (val == "random") p.curiosity = Curiosity::Random;
        else fail(ErrorCode::ConfigError, "bad curiosity '" + val + "'");
      } else if (key == "evidence_threshold") {
        p.evidence_threshold = std::stod(val);
      } else if (key == "accuracy_given_evidence") {
        p.accuracy_given_evidence = std::stod(val);
      } else if (key == "patience") {
        p.patience = std::stoi(val);
      } else if (key == "seed") {
        p.seed = std::stoull(val);
      } else {
        fail(ErrorCode::ConfigError, "unknown profile key '" + key + "'");
      }
    } catch (const std::logic_error&) {
      fail(ErrorCode::ConfigError, "bad value for '" + key + "'");
    }
  }
  p.validate();
  return p;
}

struct Question {
  std::string id;
  std::string text;
  NodeId subject;
};

struct QuestionCatalog {
  std::vector<Question> questions;

  const Question* find(std::string_view id) const {
    for (const auto& q : questions)
      if (q.id == id) return &q;
    return nullptr;
  }
};

inline std::string question_id(const AogGrammar& g, NodeId v) { return "where-" + g.name_of(v); }

/// One question per task-relevant node; critical subjects first (task order),
/// then the rest in breadth-first order from the root.
inline QuestionCatalog build_catalog(const AogGrammar& g, const Task& task) {
  auto relevant = task_relevant_nodes(g, task);
  std::vector<NodeId> order;
  std::set<NodeId> added;
  for (NodeId c : task.critical)
    if (relevant.count(c) && added.insert(c).second) order.push_back(c);
  std::vector<NodeId> bfs{g.root()};
  std::set<NodeId> seen{g.root()};
  for (std::size_t i = 0; i < bfs.size(); ++i)
    for (NodeId c : g.children(bfs[i]))
      if (seen.insert(c).second) bfs.push_back(c);
  for (std::uint32_t i = 0; i < g.node_count(); ++i)
    if (seen.insert(NodeId{i}).second) bfs.push_back(NodeId{i});
  for (NodeId v : bfs)
    if (relevant.count(v) && added.insert(v).second) order.push_back(v);
  QuestionCatalog cat;
  for (NodeId v : order) {
    std::string text = (g.is_terminal(v) ? "where is the " : "what is the ") + g.node(v).label + "?";
    cat.questions.push_back(Question{question_id(g, v), std::move(text), v});
  }
  return cat;
}

/// Nodes whose true region lies fully inside some bubble that unblurs
/// strongly (sigma2 >= 9). This is what the user has actually seen.
inline std::set<NodeId> revealed_nodes(const DialogHistory& history, const Scene& scene) {
  std::set<NodeId> out;
  for (const auto& b : history.bubbles) {
    if (b.sigma2() < 9.0) continue;
    for (const auto& [v, reg] : scene.parts)
      if (region_contains(b.region, reg)) out.insert(v);
  }
  return out;
}

inline double revealed_critical_fraction(const Task& task, const std::set<NodeId>& revealed) {
  if (task.critical.empty()) return 1.0;
  std::size_t n = 0;
  for (NodeId c : task.critical) n += revealed.count(c);
  return static_cast<double>(n) / static_cast<double>(task.critical.size());
}

/// Next question the simulated user asks.
///   BREADTH: shallowest unrevealed critical subject, else shallowest unrevealed.
///   DEPTH:   first unrevealed descendant of the last bubble's attention, else BREADTH.
///   RANDOM:  uniform over unrevealed subjects (one draw).
/// Ties keep catalog order.
inline std::string next_question(const UserProfile& profile, const QuestionCatalog& catalog,
                                 const std::set<NodeId>& revealed, const DialogHistory& history,
                                 const AogGrammar& g, const Task& task, Rng& rng) {
  std::vector<const Question*> open;
  for (const auto& q : catalog.questions)
    if (!revealed.count(q.subject)) open.push_back(&q);
  if (open.empty()) fail(ErrorCode::Exhausted, "every subject has been revealed");

  auto breadth = [&]() {
    const Question* best = nullptr;
    for (bool critical_only : {true, false}) {
      for (const Question* q : open) {
        if (critical_only && !task.is_critical(q->subject)) continue;
        if (!best || g.depth(q->subject) < g.depth(best->subject)) best = q;
      }
      if (best) break;
    }
    return best->id;
  };

  switch (profile.curiosity) {
    case Curiosity::Breadth:
      return breadth();
    case Curiosity::Depth: {
      if (history.bubbles.empty()) return breadth();
      NodeId last = history.bubbles.back().attention;
      std::vector<NodeId> stack(g.children(last).rbegin(), g.children(last).rend());
      while (!stack.empty()) {
        NodeId v = stack.back();
        stack.pop_back();
        for (const Question* q : open)
          if (q->subject == v) return q->id;
        for (auto it = g.children(v).rbegin(); it != g.children(v).rend(); ++it) stack.push_back(*it);
      }
      return breadth();
    }
    case Curiosity::Random:
      return open[rng.index(open.size())]->id;
  }
  return breadth();
}

struct Attempt {
  std::string answer;
  int cf = 1;
};

/// With enough critical evidence the user answers correctly with the
/// profile's accuracy (one draw; a wrong answer takes a second draw over the
/// other labels) and cf = 1 + round(4 f). Otherwise the user guesses
/// uniformly (one draw) with cf = min(2, 1 + round(4 f)).
inline Attempt attempt_task(const UserProfile& profile, const Task& task, const std::string& true_label,
                            const std::set<NodeId>& revealed, Rng& rng) {
  double f = revealed_critical_fraction(task, revealed);
  int cf = 1 + static_cast<int>(std::lround(4.0 * f));
  if (f >= profile.evidence_threshold) {
    if (rng.uniform() < profile.accuracy_given_evidence) return {true_label, cf};
    std::vector<std::string> others;
    for (const auto& l : task.labels)
      if (l != true_label) others.push_back(l);
    if (others.empty()) return {true_label, cf};
    return {others[rng.index(others.size())], cf};
  }
  return {task.labels[rng.index(task.labels.size())], std::min(cf, 2)};
}

/// sf = 1 + round(4 * relevance * coherence), where relevance is the share of
/// bubbles on critical nodes and coherence is one minus the share of
/// recurrences and restatements.
inline int rate_satisfaction(const DialogHistory& history, const Task& task) {
  if (history.bubbles.empty()) return 1;
  double n = static_cast<double>(history.bubbles.size());
  double critical = 0.0, repeats = 0.0;
  for (const auto& b : history.bubbles) {
    if (task.is_critical(b.attention)) critical += 1.0;
    if (b.discourse == Discourse::Recurrence || b.discourse == Discourse::Restatement) repeats += 1.0;
  }
  double score = (critical / n) * (1.0 - repeats / n);
  return 1 + static_cast<int>(std::lround(4.0 * score));
}

}  // namespace xtom
