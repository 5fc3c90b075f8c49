#pragma once

// Game sessions: phase one (question, bubble, attempt), phase two (trust
// questions), the event transcript, and replay of transcripts.

#include <chrono>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "xtom/aog.hpp"
#include "xtom/belief.hpp"
#include "xtom/bubble.hpp"
#include "xtom/evaluator.hpp"
#include "xtom/performer.hpp"
#include "xtom/policy.hpp"
#include "xtom/simuser.hpp"
#include "xtom/task.hpp"

namespace xtom {

using json = nlohmann::json;

enum class Phase { Phase1, Phase2, Done };
enum class Mode { Human, Simulated };

constexpr std::string_view phase_name(Phase p) {
  switch (p) {
    case Phase::Phase1: return "PHASE1";
    case Phase::Phase2: return "PHASE2";
    case Phase::Done: return "DONE";
  }
  return "?";
}

constexpr std::string_view mode_name(Mode m) { return m == Mode::Human ? "HUMAN" : "SIMULATED"; }

inline Mode parse_mode(std::string_view s) {
  if (s == "HUMAN") return Mode::Human;
  if (s == "SIMULATED") return Mode::Simulated;
  fail(ErrorCode::SchemaError, "unknown mode '" + std::string(s) + "'");
}

/// Everything a game is played against.
struct World {
  AogGrammar grammar;
  std::vector<Task> tasks;
  std::vector<Scene> scenes;
  LikelihoodTables tables;

  const Scene& scene(std::string_view id) const {
    for (const auto& s : scenes)
      if (s.id == id) return s;
    fail(ErrorCode::UnknownScene, "no scene '" + std::string(id) + "'");
  }
  const Task& task(std::string_view id) const {
    for (const auto& t : tasks)
      if (t.id == id) return t;
    fail(ErrorCode::UnknownTask, "no task '" + std::string(id) + "'");
  }
};

struct EngineConfig {
  NoiseConfig noise{0.1, 0.1, 0.01};
  BeliefConfig belief;
  double projection_threshold = 0.75;
  int turn_limit = 30;
  bool forbid_recurrence = false;
  std::size_t phase2_extra_games = 2;
};

struct Policy {
  PolicyParams params;
  bool ablated = false;
};

struct SessionOptions {
  std::string scene_id;
  std::string task_id;
  Mode mode = Mode::Human;
  std::uint64_t seed = 0;
  double epsilon = 0.0;  // exploration while training
  bool greedy = true;    // argmax selection; false samples from the policy
  int patience = 0;      // attempts before phase one ends; 0 means the turn limit
  std::string id;
};

struct GameSession {
  std::string id;
  Phase phase = Phase::Phase1;
  std::string scene_id;
  std::string task_id;
  Mode mode = Mode::Human;
  std::uint64_t seed = 0;
  double epsilon = 0.0;
  bool greedy = true;
  int patience = 0;

  DialogHistory history;
  BeliefState belief;
  ParseGraph pg_m;
  std::vector<FeedbackRecord> feedback;
  std::vector<double> rewards;
  int turn = 0;

  std::vector<Vec> states;
  Episode episode;
  Rng rng;

  std::vector<ParseGraph> eval_games;
  std::vector<std::string> eval_scenes;
  std::vector<EvalQuestion> eval_questions;
  std::optional<TrustReport> report;
  std::optional<SatisfactionSurvey> survey;

  std::vector<json> events;
  std::chrono::steady_clock::time_point started = std::chrono::steady_clock::now();
  std::int64_t last_event_ms = 0;

  bool succeeded() const { return !feedback.empty() && feedback.back().ss == 1; }
};

inline json region_json(const Region& r) { return {{"cx", r.cx}, {"cy", r.cy}, {"r", r.r}}; }

inline json bubble_json(const Bubble& b, const AogGrammar& g) {
  return {{"attention", g.name_of(b.attention)},
          {"act", process_name(b.act)},
          {"sigma1", b.sigma1()},
          {"sigma2", b.sigma2()},
          {"discourse", discourse_name(b.discourse)},
          {"content", b.content},
          {"region", region_json(b.region)}};
}

inline Bubble bubble_from_json(const json& j, const AogGrammar& g) {
  auto index_of = [](const auto& table, double s) {
    for (std::size_t k = 0; k < table.size(); ++k)
      if (std::abs(table[k] - s) < 1e-9) return static_cast<int>(k);
    fail(ErrorCode::SchemaError, "sigma not in the discrete set");
  };
  try {
    Bubble b;
    b.attention = g.id_of(j.at("attention").get<std::string>());
    b.act = parse_process(j.at("act").get<std::string>());
    b.space = index_of(kSpaceSigmas, j.at("sigma1").get<double>());
    b.scale = index_of(kScaleSigmas, j.at("sigma2").get<double>());
    b.discourse = parse_discourse(j.at("discourse").get<std::string>());
    b.content = j.at("content").get<double>();
    const auto& r = j.at("region");
    b.region = Region{r.at("cx").get<double>(), r.at("cy").get<double>(), r.at("r").get<double>()};
    return b;
  } catch (const json::exception& e) {
    fail(ErrorCode::SchemaError, std::string("bad bubble record: ") + e.what());
  }
}

inline json trust_json(const TrustReport& r) {
  json by = json::object();
  for (Process z : kProcesses) {
    int k = static_cast<int>(z);
    by[std::string(process_name(z))] = {
        {"jpt", r.jpt_by_process[k]}, {"jnt", r.jnt_by_process[k]}, {"rc", r.rc_by_process[k]}};
  }
  return {{"jpt", r.jpt}, {"jnt", r.jnt}, {"rc", r.rc}, {"games", r.games}, {"by_process", by}};
}

inline json eval_question_json(const EvalQuestion& q, const AogGrammar& g) {
  return {{"id", q.id},
          {"game", q.game},
          {"kind", q.kind == EvalKind::DetectSuccess ? "DETECT_SUCCESS" : "INFLUENCE"},
          {"subject", g.name_of(q.subject)},
          {"process", process_name(q.process)},
          {"choices", q.choices}};
}

class Engine {
 public:
  Engine(const World& world, EngineConfig cfg, Policy policy)
      : world_(world), cfg_(std::move(cfg)), policy_(std::move(policy)), space_(world.grammar.node_count()) {
    cfg_.noise.validate();
    if (cfg_.turn_limit < 1) fail(ErrorCode::ConfigError, "turn limit must be positive");
  }

  const World& world() const { return world_; }
  const EngineConfig& config() const { return cfg_; }
  const Policy& policy() const { return policy_; }
  Policy& policy() { return policy_; }
  const ActionSpace& action_space() const { return space_; }

  /// Dimensions a policy for this world must have.
  static PolicyDims dims_for(const World& w, const Task& task, std::size_t hidden) {
    EncodingLayout L(w.grammar, build_catalog(w.grammar, task));
    return PolicyDims{L.dim(), hidden, ActionSpace(w.grammar.node_count()).size()};
  }

  GameSession create_session(const SessionOptions& opt) const {
    const Scene& scene = world_.scene(opt.scene_id);
    const Task& task = world_.task(opt.task_id);
    auto cat = build_catalog(world_.grammar, task);
    PolicyDims want{EncodingLayout(world_.grammar, cat).dim(), policy_.params.dims().hidden, space_.size()};
    if (!(policy_.params.dims() == want)) fail(ErrorCode::CheckpointMismatch, "policy does not fit this grammar/task");
    if (opt.epsilon < 0.0 || opt.epsilon > 1.0) fail(ErrorCode::Range, "epsilon must be in [0,1]");

    GameSession s;
    s.id = opt.id.empty() ? "game-" + std::to_string(opt.seed) : opt.id;
    s.scene_id = scene.id;
    s.task_id = task.id;
    s.mode = opt.mode;
    s.seed = opt.seed;
    s.epsilon = opt.epsilon;
    s.greedy = opt.greedy;
    s.patience = opt.patience > 0 ? std::min(opt.patience, cfg_.turn_limit) : cfg_.turn_limit;
    NoiseConfig noise = cfg_.noise;
    noise.seed = mix_seed(opt.seed, 1);
    s.pg_m = interpret(scene, world_.grammar, noise);
    s.belief = init_belief(world_.grammar);
    s.rng = Rng(mix_seed(opt.seed, 2));
    log(s, {{"event", "create"},
            {"session", s.id},
            {"scene", s.scene_id},
            {"task", s.task_id},
            {"mode", mode_name(s.mode)},
            {"seed", s.seed},
            {"epsilon", s.epsilon},
            {"greedy", s.greedy},
            {"patience", s.patience},
            {"detected", names(s.pg_m.nodes)}});
    return s;
  }

  /// One explainer turn. `forced` bypasses the policy with a given action
  /// index (it must be valid); used by tests and scripted replays.
  Bubble ask(GameSession& s, const std::string& question_id, std::optional<std::size_t> forced = {}) const {
    if (s.phase != Phase::Phase1) fail(ErrorCode::WrongPhase, "questions are only taken in phase one");
    const Task& task = world_.task(s.task_id);
    auto cat = build_catalog(world_.grammar, task);
    if (!cat.find(question_id)) fail(ErrorCode::UnknownQuestion, "no question '" + question_id + "'");
    if (s.turn >= cfg_.turn_limit) fail(ErrorCode::TurnLimit, "turn limit reached");
    if (s.feedback.size() < static_cast<std::size_t>(s.turn))
      fail(ErrorCode::WrongPhase, "the previous bubble is still waiting for an attempt");
    auto candidates = enumerate_actions(s.pg_m, world_.grammar, task);

    s.belief = update_belief(s.belief, question_id, s.history, task, world_.tables, s.pg_m, world_.grammar,
                             cfg_.belief);
    s.history.questions.push_back(question_id);
    auto enc = encode_state(s.pg_m, s.belief, question_id, s.history, world_.grammar, cat, policy_.ablated,
                            cfg_.projection_threshold);
    s.states.push_back(enc.bits);
    auto valid = valid_actions(candidates, space_, s.history, cfg_.forbid_recurrence);

    Selection sel;
    if (forced) {
      if (std::find(valid.begin(), valid.end(), *forced) == valid.end())
        fail(ErrorCode::NoValidAction, "forced action is not valid here");
      sel = {*forced, 1.0};
    } else {
      auto out = forward(policy_.params, s.states, valid);
      sel = select_action(out.probs, valid, s.epsilon, s.rng, s.greedy);
    }
    Bubble b = finalize_bubble(space_.decode(sel.action), s.history, s.pg_m);
    s.history.bubbles.push_back(b);
    ++s.turn;
    if (s.mode == Mode::Simulated) {
      Experience e;
      e.state = enc.bits;
      e.valid = std::move(valid);
      e.action = sel.action;
      e.behavior_prob = sel.behavior_prob;
      e.turn = s.turn;
      s.episode.push_back(std::move(e));
    }
    json grasp = json::array();
    for (std::uint32_t v = 0; v < s.belief.grasp.size(); ++v)
      if (s.belief.grasp[v] >= cfg_.projection_threshold) grasp.push_back(world_.grammar.name_of(NodeId{v}));
    log(s, {{"event", "ask"},
            {"question", question_id},
            {"action", sel.action},
            {"forced", forced.has_value()},
            {"bubble", bubble_json(b, world_.grammar)},
            {"belief", grasp}});
    return b;
  }

  struct AttemptResult {
    int ss = -1;
    double reward = 0.0;
    bool phase_changed = false;
  };

  AttemptResult submit_attempt(GameSession& s, const std::string& answer, int cf, int sf) const {
    if (s.phase != Phase::Phase1) fail(ErrorCode::WrongPhase, "attempts are only taken in phase one");
    if (s.turn == 0) fail(ErrorCode::NoBubblesYet, "ask a question before attempting the task");
    if (s.feedback.size() >= static_cast<std::size_t>(s.turn))
      fail(ErrorCode::NoBubblesYet, "no new bubble since the last attempt");
    const Scene& scene = world_.scene(s.scene_id);
    FeedbackRecord fb{answer == scene.task_label ? 1 : -1, cf, sf};
    fb.validate();
    double r = reward(fb, dialog_cost(s.history), s.turn);
    s.feedback.push_back(fb);
    s.rewards.push_back(r);
    bool done = fb.ss == 1 || s.turn >= s.patience || s.turn >= cfg_.turn_limit;
    if (!s.episode.empty()) {
      s.episode.back().reward = r;
      s.episode.back().terminal = done;
    }
    if (done) enter_phase2(s);
    log(s, {{"event", "attempt"},
            {"answer", answer},
            {"cf", cf},
            {"sf", sf},
            {"ss", fb.ss},
            {"reward", r},
            {"phase", phase_name(s.phase)}});
    return {fb.ss, r, done};
  }

  const std::vector<EvalQuestion>& phase2_questions(const GameSession& s) const {
    if (s.phase != Phase::Phase2) fail(ErrorCode::WrongPhase, "phase-two questions exist only in phase two");
    return s.eval_questions;
  }

  TrustReport run_phase2(GameSession& s, const std::vector<EvalAnswer>& answers) const {
    if (s.phase != Phase::Phase2) fail(ErrorCode::WrongPhase, "answers are only taken in phase two");
    auto minu = assemble_minu(s.eval_questions, answers, s.eval_games.size(), world_.grammar);
    auto rep = trust_report(minu, s.eval_games, world_.grammar);
    s.report = rep;
    s.phase = Phase::Done;
    json ans = json::array();
    for (const auto& a : answers) ans.push_back({{"id", a.question_id}, {"choice", a.choice}});
    log(s, {{"event", "phase2"}, {"answers", ans}, {"trust", trust_json(rep)}});
    return rep;
  }

  void record_survey(GameSession& s, SatisfactionStore& store, const SatisfactionSurvey& survey) const {
    store.collect(s.id, survey);
    s.survey = survey;
    log(s, {{"event", "survey"}, {"ratings", survey.ratings}});
  }

  std::string transcript(const GameSession& s) const {
    std::string out;
    for (const auto& e : s.events) out += e.dump() + "\n";
    return out;
  }

  /// Re-executes a transcript through a fresh session and checks every
  /// recorded outcome. Throws REPLAY_MISMATCH on the first divergence.
  GameSession replay(std::string_view transcript_text) const {
    auto events = parse_transcript(transcript_text);
    if (events.empty() || events.front().value("event", "") != "create")
      fail(ErrorCode::ReplayMismatch, "transcript does not start with a create event");
    std::optional<GameSession> s;
    std::optional<SatisfactionStore> store;
    for (const auto& e : events) {
      auto kind = e.value("event", "");
      try {
        if (kind == "create") {
          SessionOptions o;
          o.scene_id = e.at("scene");
          o.task_id = e.at("task");
          o.mode = parse_mode(e.at("mode").get<std::string>());
          o.seed = e.at("seed");
          o.epsilon = e.at("epsilon");
          o.greedy = e.at("greedy");
          o.patience = e.at("patience");
          o.id = e.at("session");
          s = create_session(o);
          expect(s->events.back() == without_time(e, s->events.back()), "create");
        } else if (kind == "ask") {
          std::optional<std::size_t> forced;
          if (e.at("forced").get<bool>()) forced = e.at("action").get<std::size_t>();
          ask(*s, e.at("question"), forced);
          expect(s->events.back() == without_time(e, s->events.back()), "ask");
        } else if (kind == "attempt") {
          submit_attempt(*s, e.at("answer"), e.at("cf"), e.at("sf"));
          expect(s->events.back() == without_time(e, s->events.back()), "attempt");
        } else if (kind == "phase2") {
          std::vector<EvalAnswer> answers;
          for (const auto& a : e.at("answers")) answers.push_back({a.at("id"), a.at("choice")});
          run_phase2(*s, answers);
          expect(s->events.back() == without_time(e, s->events.back()), "phase2");
        } else if (kind == "survey") {
          SatisfactionSurvey sv;
          sv.ratings = e.at("ratings").get<std::array<int, 7>>();
          if (!store) store.emplace();
          record_survey(*s, *store, sv);
        } else {
          fail(ErrorCode::ReplayMismatch, "unknown transcript event '" + kind + "'");
        }
      } catch (const json::exception& ex) {
        fail(ErrorCode::ReplayMismatch, std::string("malformed transcript event: ") + ex.what());
      }
    }
    return std::move(*s);
  }

  static std::vector<json> parse_transcript(std::string_view text) {
    std::vector<json> out;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        out.push_back(json::parse(line));
      } catch (const json::exception& e) {
        fail(ErrorCode::SchemaError, std::string("bad transcript line: ") + e.what());
      }
    }
    return out;
  }

  json session_json(const GameSession& s) const {
    json bubbles = json::array();
    for (const auto& b : s.history.bubbles) bubbles.push_back(bubble_json(b, world_.grammar));
    json fb = json::array();
    for (std::size_t k = 0; k < s.feedback.size(); ++k)
      fb.push_back({{"ss", s.feedback[k].ss}, {"cf", s.feedback[k].cf}, {"sf", s.feedback[k].sf},
                    {"reward", s.rewards[k]}});
    return {{"id", s.id},          {"phase", phase_name(s.phase)}, {"turn", s.turn},
            {"scene", s.scene_id}, {"task", s.task_id},            {"mode", mode_name(s.mode)},
            {"bubbles", bubbles},  {"feedback", fb}};
  }

 private:
  void enter_phase2(GameSession& s) const {
    s.phase = Phase::Phase2;
    s.eval_games = {s.pg_m};
    s.eval_scenes = {s.scene_id};
    Rng pick(mix_seed(s.seed, 4));
    for (std::size_t k = 0; k < cfg_.phase2_extra_games && !world_.scenes.empty(); ++k) {
      const Scene& sc = world_.scenes[pick.index(world_.scenes.size())];
      NoiseConfig noise = cfg_.noise;
      noise.seed = mix_seed(s.seed, 100 + k);
      s.eval_games.push_back(interpret(sc, world_.grammar, noise));
      s.eval_scenes.push_back(sc.id);
    }
    s.eval_questions.clear();
    for (std::size_t i = 0; i < s.eval_games.size(); ++i) {
      if (s.eval_games[i].nodes.empty()) continue;
      auto qs = generate_eval_questions(s.eval_games[i], world_.grammar, i);
      s.eval_questions.insert(s.eval_questions.end(), qs.begin(), qs.end());
    }
  }

  json names(const std::set<NodeId>& nodes) const {
    json out = json::array();
    for (NodeId v : nodes) out.push_back(world_.grammar.name_of(v));
    return out;
  }

  /// Simulated sessions carry a logical clock; human sessions carry wall time
  /// since creation and the response time since the previous event.
  void log(GameSession& s, json e) const {
    if (s.mode == Mode::Simulated) {
      e["t"] = s.events.size();
    } else {
      auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - s.started)
                    .count();
      e["t_ms"] = ms;
      e["response_ms"] = ms - s.last_event_ms;
      s.last_event_ms = ms;
    }
    s.events.push_back(std::move(e));
  }

  static json without_time(json recorded, const json& fresh) {
    for (const char* k : {"t_ms", "response_ms"})
      if (fresh.contains(k)) recorded[k] = fresh[k];
    return recorded;
  }

  static void expect(bool ok, const std::string& what) {
    if (!ok) fail(ErrorCode::ReplayMismatch, "replay diverged at " + what + " event");
  }

  const World& world_;
  EngineConfig cfg_;
  Policy policy_;
  ActionSpace space_;
};

// ------------------------------------------------------- simulated players

/// Plays phase one with a simulated user until the session leaves phase one.
inline void play_phase1(const Engine& engine, GameSession& s, const UserProfile& profile) {
  const World& w = engine.world();
  const Task& task = w.task(s.task_id);
  const Scene& scene = w.scene(s.scene_id);
  auto cat = build_catalog(w.grammar, task);
  Rng user(mix_seed(mix_seed(s.seed, profile.seed), 3));
  if (s.pg_m.nodes.empty()) return;  // nothing to explain; the game is void
  while (s.phase == Phase::Phase1) {
    auto revealed = revealed_nodes(s.history, scene);
    std::string q;
    try {
      q = next_question(profile, cat, revealed, s.history, w.grammar, task, user);
    } catch (const Error& e) {
      if (e.code() != ErrorCode::Exhausted) throw;
      q = cat.questions.front().id;
    }
    engine.ask(s, q);
    revealed = revealed_nodes(s.history, scene);
    auto att = attempt_task(profile, task, scene.task_label, revealed, user);
    engine.submit_attempt(s, att.answer, att.cf, rate_satisfaction(s.history, task));
  }
}

/// Phase-two answers of a simulated user. Nodes the dialog revealed are
/// predicted from what was shown (right with the profile's accuracy); other
/// predictions are coin flips. Influence questions pick the first choice when
/// the process was demonstrated, else a random one.
inline std::vector<EvalAnswer> simulate_phase2_answers(const Engine& engine, const GameSession& s,
                                                       const UserProfile& profile) {
  const World& w = engine.world();
  Rng user(mix_seed(mix_seed(s.seed, profile.seed), 5));
  auto revealed = revealed_nodes(s.history, w.scene(s.scene_id));
  std::set<Process> shown;
  for (const auto& b : s.history.bubbles) shown.insert(b.act);
  std::vector<EvalAnswer> out;
  for (const auto& q : s.eval_questions) {
    const auto* det = s.eval_games[q.game].detection(q.subject);
    if (q.kind == EvalKind::DetectSuccess) {
      bool informed = shown.count(q.process) && (q.game > 0 || revealed.count(q.subject));
      bool right = informed ? user.uniform() < profile.accuracy_given_evidence : user.uniform() < 0.5;
      bool yes = right == det->correct;
      out.push_back({q.id, yes ? "yes" : "no"});
    } else {
      std::size_t k = shown.count(q.process) ? 0 : user.index(q.choices.size());
      out.push_back({q.id, q.choices[k]});
    }
  }
  return out;
}

}  // namespace xtom
