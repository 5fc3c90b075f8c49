#pragma once

// Phase-two instrument. The user predicts, per image and per inference
// process, what the machine will detect; those predictions form the user's
// model of the machine, which is compared against the machine's actual parse
// graph to give justified positive trust (JPT), justified negative trust
// (JNT) and reliance (Rc).

#include <array>
#include <iomanip>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "xtom/aog.hpp"

namespace xtom {

enum class EvalKind { DetectSuccess, Influence };

struct EvalQuestion {
  std::string id;
  std::size_t game = 0;
  EvalKind kind = EvalKind::DetectSuccess;
  NodeId subject;
  Process process = Process::Alpha;
  std::vector<std::string> choices;
};

struct EvalAnswer {
  std::string question_id;
  std::string choice;
};

/// Per game, per process: nodes (and influence edges) the user predicts the
/// machine gets right (positive) or wrong (negative).
struct MinUEstimate {
  std::vector<std::array<ParseGraph, 3>> positive;
  std::vector<std::array<ParseGraph, 3>> negative;

  std::size_t games() const { return positive.size(); }
};

struct TrustReport {
  double jpt = 0.0;
  double jnt = 0.0;
  double rc = 0.0;
  std::array<double, 3> jpt_by_process{};
  std::array<double, 3> jnt_by_process{};
  std::array<double, 3> rc_by_process{};
  std::size_t games = 0;
};

/// One yes/no question per detected node, plus one influence question per
/// non-terminal: which present child drove a BETA binding, or which present
/// parent drove a GAMMA inference.
inline std::vector<EvalQuestion> generate_eval_questions(const ParseGraph& pg_m, const AogGrammar& g,
                                                         std::size_t game = 0) {
  if (pg_m.nodes.empty()) fail(ErrorCode::EmptyPg, "nothing detected to ask about");
  std::vector<EvalQuestion> out;
  auto prefix = "g" + std::to_string(game) + "-";
  for (NodeId v : pg_m.nodes) {
    const auto* det = pg_m.detection(v);
    if (!det) fail(ErrorCode::MissingDetection, "node '" + g.name_of(v) + "' has no detection record");
    out.push_back({prefix + "detect-" + g.name_of(v), game, EvalKind::DetectSuccess, v, det->process, {"yes", "no"}});
  }
  for (NodeId v : pg_m.nodes) {
    if (g.is_terminal(v)) continue;
    const auto* det = pg_m.detection(v);
    std::vector<std::string> choices;
    const auto& pool = det->process == Process::Gamma ? g.parents(v) : g.children(v);
    for (NodeId w : pool)
      if (pg_m.contains(w)) choices.push_back(g.name_of(w));
    if (choices.empty()) continue;
    out.push_back({prefix + "influence-" + g.name_of(v), game, EvalKind::Influence, v, det->process, choices});
  }
  return out;
}

/// Routes answers into the per-(game, process) prediction graphs. Detection
/// answers are applied before influence answers so input order is irrelevant.
inline MinUEstimate assemble_minu(const std::vector<EvalQuestion>& questions, const std::vector<EvalAnswer>& answers,
                                  std::size_t games, const AogGrammar& g) {
  MinUEstimate m;
  m.positive.resize(games);
  m.negative.resize(games);
  for (std::size_t i = 0; i < games; ++i)
    for (int z = 0; z < 3; ++z) {
      m.positive[i][z] = empty_pg(g);
      m.negative[i][z] = empty_pg(g);
    }
  std::map<std::string, const EvalQuestion*> by_id;
  for (const auto& q : questions) by_id[q.id] = &q;
  std::vector<std::pair<const EvalQuestion*, const EvalAnswer*>> resolved;
  for (const auto& a : answers) {
    auto it = by_id.find(a.question_id);
    if (it == by_id.end()) fail(ErrorCode::UnknownQuestion, "no evaluator question '" + a.question_id + "'");
    const auto* q = it->second;
    if (q->game >= games) fail(ErrorCode::NoGames, "question refers to game outside the set");
    if (std::find(q->choices.begin(), q->choices.end(), a.choice) == q->choices.end())
      fail(ErrorCode::Range, "'" + a.choice + "' is not a choice of " + q->id);
    resolved.emplace_back(q, &a);
  }
  for (auto [q, a] : resolved) {
    if (q->kind != EvalKind::DetectSuccess) continue;
    int z = static_cast<int>(q->process);
    auto& pos = m.positive[q->game][z];
    auto& neg = m.negative[q->game][z];
    bool yes = a->choice == "yes";
    if ((yes && neg.contains(q->subject)) || (!yes && pos.contains(q->subject)))
      fail(ErrorCode::ConflictingAnswer, "'" + g.name_of(q->subject) + "' answered both ways");
    (yes ? pos : neg).nodes.insert(q->subject);
  }
  for (auto [q, a] : resolved) {
    if (q->kind != EvalKind::Influence) continue;
    int z = static_cast<int>(q->process);
    auto edge = g.find_edge(q->subject, g.id_of(a->choice));
    if (!edge) fail(ErrorCode::DanglingRef, "no grammar edge for influence answer " + q->id);
    auto& neg = m.negative[q->game][z];
    (neg.contains(q->subject) ? neg : m.positive[q->game][z]).edges.insert(*edge);
  }
  return m;
}

namespace detail {

struct TrustTerms {
  std::array<double, 3> by_process{};
  double total = 0.0;
};

inline void check_games(const MinUEstimate& minu, const std::vector<ParseGraph>& pgms) {
  if (pgms.empty()) fail(ErrorCode::NoGames, "no games to evaluate");
  if (minu.games() != pgms.size()) fail(ErrorCode::NoGames, "prediction and game counts differ");
}

/// Shared body of JPT and JNT; terms with an empty denominator are skipped.
inline TrustTerms justified_trust(const MinUEstimate& minu, const std::vector<ParseGraph>& pgms,
                                  const AogGrammar& g, bool positive) {
  check_games(minu, pgms);
  TrustTerms t;
  for (std::size_t i = 0; i < pgms.size(); ++i) {
    auto [mpos, mneg] = signed_partition(pgms[i], g);
    const ParseGraph& machine = positive ? mpos : mneg;
    double denom = static_cast<double>(pg_size(machine));
    if (denom == 0.0) continue;
    for (int z = 0; z < 3; ++z) {
      const ParseGraph& user = positive ? minu.positive[i][z] : minu.negative[i][z];
      t.by_process[z] += static_cast<double>(pg_size(pg_intersect(user, machine, g))) / denom;
    }
  }
  double n = static_cast<double>(pgms.size());
  for (double& x : t.by_process) {
    x /= n;
    t.total += x;
  }
  return t;
}

}  // namespace detail

inline double jpt(const MinUEstimate& minu, const std::vector<ParseGraph>& pgms, const AogGrammar& g) {
  return detail::justified_trust(minu, pgms, g, true).total;
}

inline double jnt(const MinUEstimate& minu, const std::vector<ParseGraph>& pgms, const AogGrammar& g) {
  return detail::justified_trust(minu, pgms, g, false).total;
}

/// Process that an edge of the machine's parse graph is credited to: the
/// child's when the child was inferred top-down, otherwise the parent's.
inline NodeId edge_owner(EdgeId e, const ParseGraph& pg_m, const AogGrammar& g) {
  const auto& ed = g.edge(e);
  const auto* child = pg_m.detection(ed.child);
  return child && child->process == Process::Gamma ? ed.child : ed.parent;
}

/// Nodes produced by process z with the given correctness, plus the edges
/// they own. The cells over all (z, polarity) partition pg_m exactly.
struct ElementSet {
  std::set<NodeId> nodes;
  std::set<EdgeId> edges;
  std::size_t size() const { return nodes.size() + edges.size(); }
};

inline ElementSet process_cell(const ParseGraph& pg_m, Process z, bool correct, const AogGrammar& g) {
  ElementSet out;
  auto in_cell = [&](NodeId v) {
    const auto* det = pg_m.detection(v);
    if (!det) fail(ErrorCode::MissingDetection, "node '" + g.name_of(v) + "' has no detection record");
    return det->process == z && det->correct == correct;
  };
  for (NodeId v : pg_m.nodes)
    if (in_cell(v)) out.nodes.insert(v);
  for (EdgeId e : pg_m.edges)
    if (in_cell(edge_owner(e, pg_m, g))) out.edges.insert(e);
  return out;
}

inline std::size_t overlap(const ParseGraph& user, const ElementSet& cell) {
  std::size_t n = 0;
  for (NodeId v : user.nodes) n += cell.nodes.count(v);
  for (EdgeId e : user.edges) n += cell.edges.count(e);
  return n;
}

namespace detail {

inline TrustTerms reliance_terms(const MinUEstimate& minu, const std::vector<ParseGraph>& pgms,
                                 const AogGrammar& g) {
  check_games(minu, pgms);
  TrustTerms t;
  for (std::size_t i = 0; i < pgms.size(); ++i) {
    if (pgms[i].grammar_hash != g.hash()) fail(ErrorCode::GrammarMismatch, "parse graph is from another grammar");
    double denom = static_cast<double>(pg_size(pgms[i]));
    if (denom == 0.0) continue;
    for (Process z : kProcesses) {
      int k = static_cast<int>(z);
      std::size_t hit = overlap(minu.positive[i][k], process_cell(pgms[i], z, true, g)) +
                        overlap(minu.negative[i][k], process_cell(pgms[i], z, false, g));
      t.by_process[k] += static_cast<double>(hit) / denom;
    }
  }
  double n = static_cast<double>(pgms.size());
  for (double& x : t.by_process) {
    x /= n;
    t.total += x;
  }
  return t;
}

}  // namespace detail

/// Share of the machine's parse graph the user predicted under the right
/// process with the right polarity, summed over processes.
inline double reliance(const MinUEstimate& minu, const std::vector<ParseGraph>& pgms, const AogGrammar& g) {
  return detail::reliance_terms(minu, pgms, g).total;
}

inline TrustReport trust_report(const MinUEstimate& minu, const std::vector<ParseGraph>& pgms, const AogGrammar& g) {
  auto p = detail::justified_trust(minu, pgms, g, true);
  auto n = detail::justified_trust(minu, pgms, g, false);
  auto r = detail::reliance_terms(minu, pgms, g);
  TrustReport out;
  out.jpt = p.total;
  out.jnt = n.total;
  out.rc = r.total;
  out.jpt_by_process = p.by_process;
  out.jnt_by_process = n.by_process;
  out.rc_by_process = r.by_process;
  out.games = pgms.size();
  return out;
}

/// Tabular export: one row per process and a total row; columns JPT, JNT, Rc.
inline std::string format_trust_report(const TrustReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(4);
  out << "process\tJPT\tJNT\tRc\n";
  for (Process z : kProcesses) {
    int k = static_cast<int>(z);
    out << process_name(z) << '\t' << r.jpt_by_process[k] << '\t' << r.jnt_by_process[k] << '\t'
        << r.rc_by_process[k] << '\n';
  }
  out << "TOTAL\t" << r.jpt << '\t' << r.jnt << '\t' << r.rc << '\n';
  out << "games\t" << r.games << '\n';
  return out.str();
}

inline constexpr std::array<std::string_view, 7> kSatisfactionItems{
    "usefulness", "sufficiency", "appropriate_detail", "confidence", "understandability", "accuracy", "consistency"};

struct SatisfactionSurvey {
  std::array<int, 7> ratings{};  // Likert 0..9, in kSatisfactionItems order
};

struct SatisfactionRecord {
  std::string session_id;
  SatisfactionSurvey survey;
};

/// Collected explanation-satisfaction ratings.
class SatisfactionStore {
 public:
  const SatisfactionRecord& collect(const std::string& session_id, const SatisfactionSurvey& survey) {
    for (int r : survey.ratings)
      if (r < 0 || r > 9) fail(ErrorCode::Range, "satisfaction ratings must be 0..9");
    records_.push_back({session_id, survey});
    return records_.back();
  }

  const std::vector<SatisfactionRecord>& records() const { return records_; }

  std::array<double, 7> means() const {
    std::array<double, 7> m{};
    if (records_.empty()) return m;
    for (const auto& rec : records_)
      for (std::size_t k = 0; k < 7; ++k) m[k] += rec.survey.ratings[k];
    for (double& x : m) x /= static_cast<double>(records_.size());
    return m;
  }

 private:
  std::vector<SatisfactionRecord> records_;
};

}  // namespace xtom
