#pragma once

#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "xtom/aog.hpp"

namespace xtom {

enum class TaskKind { BodyPartId, PoseEstimation, ActionId };

constexpr std::string_view task_kind_name(TaskKind k) {
  switch (k) {
    case TaskKind::BodyPartId: return "BODY_PART_ID";
    case TaskKind::PoseEstimation: return "POSE_ESTIMATION";
    case TaskKind::ActionId: return "ACTION_ID";
  }
  return "?";
}

/// A recognition task posed to the user on a blurred scene.
struct Task {
  std::string id;
  TaskKind kind = TaskKind::ActionId;
  std::vector<std::string> labels;
  std::vector<NodeId> critical;  // nodes whose evidence decides the task

  bool is_critical(NodeId v) const {
    for (NodeId c : critical)
      if (c == v) return true;
    return false;
  }
};

/// Parses `task <id> <kind> <label|label...> <node|node...>` records.
inline std::vector<Task> load_tasks(std::string_view document, const AogGrammar& g) {
  std::vector<Task> out;
  std::istringstream in{std::string(document)};
  std::string line;
  while (std::getline(in, line)) {
    auto toks = detail::split_ws(detail::strip_comment(line));
    if (toks.empty()) continue;
    if (toks[0] != "task" || toks.size() != 5) fail(ErrorCode::SchemaError, "bad task record: " + line);
    Task t;
    t.id = toks[1];
    if (toks[2] == "ACTION_ID") t.kind = TaskKind::ActionId;
    else if (toks[2] == "POSE_ESTIMATION") t.kind = TaskKind::PoseEstimation;
    else if (toks[2] == "BODY_PART_ID") t.kind = TaskKind::BodyPartId;
    else fail(ErrorCode::SchemaError, "bad task kind '" + toks[2] + "'");
    t.labels = detail::split_on(toks[3], '|');
    for (const auto& name : detail::split_on(toks[4], '|')) t.critical.push_back(g.id_of(name));
    if (t.labels.empty() || t.labels.front().empty()) fail(ErrorCode::SchemaError, "task needs labels");
    for (const auto& other : out)
      if (other.id == t.id) fail(ErrorCode::SchemaError, "duplicate task '" + t.id + "'");
    out.push_back(std::move(t));
  }
  return out;
}

/// Fallback when no task file is given: an action task over the root's
/// `action` slot with every terminal critical.
inline Task default_action_task(const AogGrammar& g) {
  Task t;
  t.id = "action";
  t.kind = TaskKind::ActionId;
  t.labels = g.slot_values(g.root(), "action");
  if (t.labels.empty()) t.labels = {"yes", "no"};
  for (std::uint32_t i = 0; i < g.node_count(); ++i)
    if (g.is_terminal(NodeId{i})) t.critical.push_back(NodeId{i});
  return t;
}

/// Every node connected (through decomposition edges, in either direction) to
/// a topmost ancestor of a critical node.
inline std::set<NodeId> task_relevant_nodes(const AogGrammar& g, const Task& task) {
  std::set<NodeId> tops;
  for (NodeId c : task.critical) {
    std::vector<NodeId> stack{c};
    std::set<NodeId> seen{c};
    while (!stack.empty()) {
      NodeId v = stack.back();
      stack.pop_back();
      if (g.parents(v).empty()) tops.insert(v);
      for (NodeId p : g.parents(v))
        if (seen.insert(p).second) stack.push_back(p);
    }
  }
  std::set<NodeId> out;
  std::vector<NodeId> stack(tops.begin(), tops.end());
  out.insert(tops.begin(), tops.end());
  while (!stack.empty()) {
    NodeId v = stack.back();
    stack.pop_back();
    for (NodeId c : g.children(v))
      if (out.insert(c).second) stack.push_back(c);
  }
  return out;
}

}  // namespace xtom
