#pragma once

// The machine's model of the user's mind: a per-node probability that the
// user has grasped each grammar node, updated every turn from the question
// asked and the bubbles shown, with likelihoods estimated from logged games.

#include <cmath>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "xtom/aog.hpp"
#include "xtom/bubble.hpp"
#include "xtom/task.hpp"

namespace xtom {

struct BeliefConfig {
  double reveal_floor_strong = 0.9;  // sigma2 >= 9
  double reveal_floor_light = 0.6;   // sigma2 == 1
  double laplace = 1.0;
};

struct BeliefState {
  std::uint64_t grammar_hash = 0;
  std::vector<double> grasp;
  int turn = 0;
  std::size_t bubbles_seen = 0;  // history prefix already folded in
};

inline BeliefState init_belief(const AogGrammar& g) {
  return BeliefState{g.hash(), std::vector<double>(g.node_count(), 0.0), 0, 0};
}

/// What the likelihood estimator needs from one logged game.
struct GameLog {
  std::string task_id;
  std::vector<std::string> questions;
  std::vector<std::string> bubble_signatures;
  std::set<NodeId> grasped;
};

inline std::string bubble_signature(const Bubble& b, const AogGrammar& g) {
  std::ostringstream s;
  s << g.name_of(b.attention) << '/' << process_name(b.act) << '/' << b.sigma1() << '/' << b.sigma2();
  return s.str();
}

/// Frequency estimates of p(question | node grasped?) and
/// p(bubble | node grasped?), each a per-game occurrence Bernoulli with
/// Laplace smoothing. Keys are prefixed by task id.
class LikelihoodTables {
 public:
  static constexpr int kVersion = 1;

  LikelihoodTables() = default;
  explicit LikelihoodTables(std::uint64_t grammar_hash) : grammar_hash_(grammar_hash) {}

  std::uint64_t grammar_hash() const { return grammar_hash_; }
  std::size_t games() const { return games_; }
  double laplace() const { return laplace_; }
  bool empty() const { return games_ == 0; }

  void add_game(const GameLog& log, const AogGrammar& g) {
    if (grammar_hash_ == 0) grammar_hash_ = g.hash();
    if (grammar_hash_ != g.hash()) fail(ErrorCode::GrammarMismatch, "log from another grammar");
    ++games_;
    if (node_games_.size() < g.node_count()) node_games_.resize(g.node_count(), {0, 0});
    std::set<std::string> qs, bs;
    for (const auto& q : log.questions) qs.insert(log.task_id + ":" + q);
    for (const auto& b : log.bubble_signatures) bs.insert(log.task_id + ":" + b);
    for (std::uint32_t v = 0; v < g.node_count(); ++v) {
      int state = log.grasped.count(NodeId{v}) ? 1 : 0;
      ++node_games_[v][state];
      for (const auto& k : qs) ++question_counts_[{k, v}][state];
      for (const auto& k : bs) ++bubble_counts_[{k, v}][state];
    }
  }

  double p_question(const std::string& task_id, const std::string& question, NodeId v, bool grasped) const {
    return lookup(question_counts_, task_id + ":" + question, v, grasped);
  }
  double p_bubble(const std::string& task_id, const std::string& signature, NodeId v, bool grasped) const {
    return lookup(bubble_counts_, task_id + ":" + signature, v, grasped);
  }

  std::string serialize(const AogGrammar& g) const {
    std::ostringstream out;
    out << "xtom-likelihoods " << kVersion << '\n';
    out << "grammar " << grammar_hash_ << '\n';
    out << "games " << games_ << '\n';
    out << "laplace " << laplace_ << '\n';
    for (std::uint32_t v = 0; v < node_games_.size(); ++v)
      out << "node " << g.name_of(NodeId{v}) << ' ' << node_games_[v][0] << ' ' << node_games_[v][1] << '\n';
    for (const auto& [key, c] : question_counts_)
      out << "q " << std::get<0>(key) << ' ' << g.name_of(NodeId{std::get<1>(key)}) << ' ' << c[0] << ' ' << c[1]
          << '\n';
    for (const auto& [key, c] : bubble_counts_)
      out << "b " << std::get<0>(key) << ' ' << g.name_of(NodeId{std::get<1>(key)}) << ' ' << c[0] << ' ' << c[1]
          << '\n';
    return out.str();
  }

  static LikelihoodTables parse(std::string_view text, const AogGrammar& g) {
    std::istringstream in{std::string(text)};
    std::string line;
    LikelihoodTables t;
    bool header = false;
    while (std::getline(in, line)) {
      auto toks = detail::split_ws(line);
      if (toks.empty()) continue;
      try {
        if (toks[0] == "xtom-likelihoods") {
          if (toks.size() != 2 || std::stoi(toks[1]) != kVersion)
            fail(ErrorCode::SchemaError, "unsupported likelihood table version");
          header = true;
        } else if (toks[0] == "grammar" && toks.size() == 2) {
          t.grammar_hash_ = std::stoull(toks[1]);
          if (t.grammar_hash_ != g.hash()) fail(ErrorCode::GrammarMismatch, "likelihood tables for another grammar");
        } else if (toks[0] == "games" && toks.size() == 2) {
          t.games_ = std::stoull(toks[1]);
        } else if (toks[0] == "laplace" && toks.size() == 2) {
          t.laplace_ = std::stod(toks[1]);
        } else if (toks[0] == "node" && toks.size() == 4) {
          NodeId v = g.id_of(toks[1]);
          if (t.node_games_.size() < g.node_count()) t.node_games_.resize(g.node_count(), {0, 0});
          t.node_games_[v.value] = {std::stoull(toks[2]), std::stoull(toks[3])};
        } else if ((toks[0] == "q" || toks[0] == "b") && toks.size() == 5) {
          NodeId v = g.id_of(toks[2]);
          auto& table = toks[0] == "q" ? t.question_counts_ : t.bubble_counts_;
          table[{toks[1], v.value}] = {std::stoull(toks[3]), std::stoull(toks[4])};
        } else {
          fail(ErrorCode::SchemaError, "bad likelihood record: " + line);
        }
      } catch (const std::logic_error&) {
        fail(ErrorCode::SchemaError, "bad number in likelihood record: " + line);
      }
    }
    if (!header) fail(ErrorCode::SchemaError, "missing likelihood table header");
    return t;
  }

 private:
  using Counts = std::map<std::tuple<std::string, std::uint32_t>, std::array<std::size_t, 2>>;

  double lookup(const Counts& table, const std::string& key, NodeId v, bool grasped) const {
    auto it = table.find({key, v.value});
    if (it == table.end() || v.value >= node_games_.size()) return 0.5;
    int s = grasped ? 1 : 0;
    double n = static_cast<double>(node_games_[v.value][s]);
    return (static_cast<double>(it->second[s]) + laplace_) / (n + 2.0 * laplace_);
  }

  std::uint64_t grammar_hash_ = 0;
  std::size_t games_ = 0;
  double laplace_ = 1.0;
  std::vector<std::array<std::size_t, 2>> node_games_;
  Counts question_counts_;
  Counts bubble_counts_;
};

inline LikelihoodTables estimate_likelihoods(const std::vector<GameLog>& logs, const AogGrammar& g) {
  if (logs.empty()) fail(ErrorCode::EmptyLogs, "no games to estimate from");
  LikelihoodTables t(g.hash());
  for (const auto& log : logs) t.add_game(log, g);
  return t;
}

/// One Bayesian filtering step.
///
/// Per node, the prior odds are the current grasp odds; the question and each
/// bubble added since the last update multiply in their likelihood ratios. A
/// node at zero has no prior mass and enters at even odds only when the
/// evidence is informative about it. Nodes whose detected region sits fully
/// inside any bubble so far are held at or above the reveal floor; a node
/// covered by a new bubble never decreases.
inline BeliefState update_belief(const BeliefState& belief, const std::string& question,
                                 const DialogHistory& history, const Task& task, const LikelihoodTables& tables,
                                 const ParseGraph& pg_m, const AogGrammar& g, const BeliefConfig& cfg = {}) {
  if (belief.grammar_hash != g.hash() || pg_m.grammar_hash != g.hash())
    fail(ErrorCode::GrammarMismatch, "belief, parse graph and grammar disagree");
  BeliefState out = belief;
  std::size_t first_new = std::min(belief.bubbles_seen, history.bubbles.size());
  std::vector<std::string> sigs;
  for (std::size_t k = first_new; k < history.bubbles.size(); ++k)
    sigs.push_back(bubble_signature(history.bubbles[k], g));

  for (std::uint32_t i = 0; i < g.node_count(); ++i) {
    NodeId v{i};
    double log_lr = 0.0;
    if (!question.empty())
      log_lr += std::log(tables.p_question(task.id, question, v, true)) -
                std::log(tables.p_question(task.id, question, v, false));
    for (const auto& s : sigs)
      log_lr += std::log(tables.p_bubble(task.id, s, v, true)) - std::log(tables.p_bubble(task.id, s, v, false));
    double p = belief.grasp[i];
    double post;
    if (p >= 1.0) {
      post = 1.0;
    } else if (p <= 0.0) {
      post = std::abs(log_lr) > 1e-12 ? 1.0 / (1.0 + std::exp(-log_lr)) : 0.0;
    } else if (std::abs(log_lr) <= 1e-12) {
      post = p;  // the logit round trip would move p in the last bit
    } else {
      double logit = std::log(p) - std::log1p(-p) + log_lr;
      post = 1.0 / (1.0 + std::exp(-logit));
    }
    out.grasp[i] = detail::clamp01(post);
  }

  for (std::size_t k = 0; k < history.bubbles.size(); ++k) {
    const auto& b = history.bubbles[k];
    double floor = b.sigma2() >= 9.0 ? cfg.reveal_floor_strong : cfg.reveal_floor_light;
    for (const auto& [v, det] : pg_m.detections) {
      if (!region_contains(b.region, det.region)) continue;
      double& gp = out.grasp[v.value];
      gp = std::max(gp, floor);
      if (k >= first_new) gp = std::max(gp, belief.grasp[v.value]);
    }
  }
  out.turn = belief.turn + 1;
  out.bubbles_seen = history.bubbles.size();
  return out;
}

/// Nodes at or above the threshold, with the grammar edges among them.
inline ParseGraph project(const BeliefState& belief, double threshold, const AogGrammar& g) {
  std::set<NodeId> keep;
  for (std::uint32_t i = 0; i < belief.grasp.size(); ++i)
    if (belief.grasp[i] >= threshold) keep.insert(NodeId{i});
  return induced_pg(g, keep);
}

}  // namespace xtom
