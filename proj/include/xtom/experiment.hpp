#pragma once

// Batch drivers on top of the engine: likelihood bootstrapping, policy
// training, seeded simulation, the ablation comparison and transcript reports.

#include <algorithm>
#include <array>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>
#include <thread>

#include "xtom/engine.hpp"

namespace xtom {

// ------------------------------------------------------------ likelihoods

/// Estimator input recovered from a transcript. A node counts as grasped in
/// a successful game when it was revealed or was a bubble's attention.
inline GameLog game_log_from_events(const std::vector<json>& events, const World& w) {
  GameLog log;
  const Scene* scene = nullptr;
  DialogHistory h;
  bool success = false;
  for (const auto& e : events) {
    auto kind = e.value("event", "");
    if (kind == "create") {
      log.task_id = e.at("task");
      scene = &w.scene(e.at("scene").get<std::string>());
    } else if (kind == "ask") {
      log.questions.push_back(e.at("question"));
      h.bubbles.push_back(bubble_from_json(e.at("bubble"), w.grammar));
      log.bubble_signatures.push_back(bubble_signature(h.bubbles.back(), w.grammar));
    } else if (kind == "attempt") {
      success = e.at("ss").get<int>() == 1;
    }
  }
  if (!scene) fail(ErrorCode::SchemaError, "transcript without a create event");
  if (success) {
    log.grasped = revealed_nodes(h, *scene);
    for (const auto& b : h.bubbles) log.grasped.insert(b.attention);
  }
  return log;
}

inline std::vector<std::filesystem::path> transcript_files(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) fail(ErrorCode::EmptyDir, "'" + dir + "' is not a directory");
  std::vector<fs::path> out;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".jsonl") out.push_back(entry.path());
  std::sort(out.begin(), out.end());
  if (out.empty()) fail(ErrorCode::EmptyDir, "no transcripts in '" + dir + "'");
  return out;
}

inline LikelihoodTables likelihoods_from_transcripts(const std::string& dir, const World& w) {
  std::vector<GameLog> logs;
  for (const auto& f : transcript_files(dir))
    logs.push_back(game_log_from_events(Engine::parse_transcript(detail::read_file(f.string())), w));
  return estimate_likelihoods(logs, w.grammar);
}

/// Likelihood tables from games played by an untrained (uniform) explainer.
inline LikelihoodTables bootstrap_likelihoods(const World& w, const EngineConfig& cfg, const UserProfile& profile,
                                              const std::string& task_id, std::size_t games, std::uint64_t seed,
                                              std::size_t hidden = 32) {
  World empty{w.grammar, w.tasks, w.scenes, LikelihoodTables(w.grammar.hash())};
  Policy uniform{PolicyParams(Engine::dims_for(w, w.task(task_id), hidden)), false};
  Engine engine(empty, cfg, uniform);
  Rng pick(mix_seed(seed, 7));
  std::vector<GameLog> logs;
  for (std::size_t k = 0; k < games; ++k) {
    SessionOptions o{w.scenes[pick.index(w.scenes.size())].id, task_id, Mode::Simulated,
                     mix_seed(seed, 5000 + k), 1.0, false, profile.patience, {}};
    auto s = engine.create_session(o);
    play_phase1(engine, s, profile);
    logs.push_back(game_log_from_events(s.events, w));
  }
  return estimate_likelihoods(logs, w.grammar);
}

// --------------------------------------------------------------- training

struct TrainingSetup {
  std::string task_id = "action";
  std::size_t episodes = 3500;
  std::size_t round_every = 200;
  std::size_t hidden = 32;
  std::uint64_t seed = 1;
  bool ablated = false;
  double epsilon_start = 0.6;
  TrainConfig train;
  UserProfile profile;
};

struct RoundMetrics {
  std::size_t round = 0;
  std::size_t episodes = 0;
  std::size_t updates = 0;
  TrainingMetrics m;
  double mean_reward = 0.0;
  double success_rate = 0.0;
  double mean_bubbles = 0.0;
};

struct TrainingResult {
  PolicyParams params;
  std::vector<RoundMetrics> rounds;
};

inline std::string metrics_header() {
  return "round\tepisodes\tupdates\tobjective\tmean_advantage\tvalue_loss\tentropy\tgrad_norm\tepsilon\t"
         "mean_reward\tsuccess_rate\tmean_bubbles\n";
}

inline std::string format_round(const RoundMetrics& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(6) << r.round << '\t' << r.episodes << '\t' << r.updates << '\t'
      << r.m.objective << '\t' << r.m.mean_advantage << '\t' << r.m.value_loss << '\t' << r.m.entropy << '\t'
      << r.m.grad_norm << '\t' << r.m.epsilon << '\t' << r.mean_reward << '\t' << r.success_rate << '\t'
      << r.mean_bubbles << '\n';
  return out.str();
}

inline double mean_of(const std::vector<double>& xs) {
  return xs.empty() ? 0.0 : std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
}

/// Simulated episodes with epsilon annealed linearly over the budget and
/// `updates_per_round` actor-critic steps after every `round_every` episodes.
/// Everything is derived from `setup.seed`.
inline TrainingResult run_training(const World& w, const EngineConfig& cfg, const TrainingSetup& setup) {
  if (setup.round_every == 0 || setup.hidden == 0) fail(ErrorCode::ConfigError, "bad training setup");
  if (w.scenes.empty()) fail(ErrorCode::ConfigError, "no training scenes");
  setup.profile.validate();
  const Task& task = w.task(setup.task_id);
  Policy pol{init_params(Engine::dims_for(w, task, setup.hidden), mix_seed(setup.seed, 9)), setup.ablated};
  Engine engine(w, cfg, std::move(pol));
  ReplayPool pool(setup.train.pool_capacity);
  AdamState adam;
  Rng pick(mix_seed(setup.seed, 10));
  Rng batch_rng(mix_seed(setup.seed, 11));
  TrainingResult res;
  std::vector<double> rewards, success, bubbles;

  for (std::size_t ep = 0; ep < setup.episodes; ++ep) {
    SessionOptions o{w.scenes[pick.index(w.scenes.size())].id, task.id, Mode::Simulated,
                     mix_seed(setup.seed, 100000 + ep), anneal_epsilon(ep, setup.episodes, setup.epsilon_start),
                     false, setup.profile.patience, {}};
    auto s = engine.create_session(o);
    play_phase1(engine, s, setup.profile);
    if (!s.episode.empty()) {
      rewards.push_back(mean_of(s.rewards));
      success.push_back(s.succeeded() ? 1.0 : 0.0);
      bubbles.push_back(static_cast<double>(s.turn));
      pool.add(std::move(s.episode));
    }
    if ((ep + 1) % setup.round_every != 0) continue;
    RoundMetrics r;
    r.round = res.rounds.size() + 1;
    r.episodes = ep + 1;
    r.m.epsilon = o.epsilon;
    if (pool.size() >= setup.train.batch_episodes) {
      for (std::size_t k = 0; k < setup.train.updates_per_round; ++k) {
        auto m = train_step(engine.policy().params, pool, adam, setup.train, batch_rng);
        double n = static_cast<double>(k + 1);
        r.m.objective += (m.objective - r.m.objective) / n;
        r.m.mean_advantage += (m.mean_advantage - r.m.mean_advantage) / n;
        r.m.value_loss += (m.value_loss - r.m.value_loss) / n;
        r.m.entropy += (m.entropy - r.m.entropy) / n;
        r.m.grad_norm += (m.grad_norm - r.m.grad_norm) / n;
        ++r.updates;
      }
    }
    r.mean_reward = mean_of(rewards);
    r.success_rate = mean_of(success);
    r.mean_bubbles = mean_of(bubbles);
    rewards.clear();
    success.clear();
    bubbles.clear();
    res.rounds.push_back(r);
  }
  res.params = engine.policy().params;
  return res;
}

// ------------------------------------------------------------- simulation

struct SimulationSetup {
  std::string task_id = "action";
  std::size_t games = 500;
  std::uint64_t seed = 7;
  std::size_t workers = 1;
  bool phase2 = true;
  UserProfile profile;
};

/// Plays seeded games with greedy selection. Game k uses scene k modulo the
/// scene count and a seed derived from (seed, k), so results do not depend
/// on the worker count.
inline std::vector<GameSession> run_simulation(const Engine& engine, const SimulationSetup& setup) {
  const World& w = engine.world();
  if (w.scenes.empty()) fail(ErrorCode::ConfigError, "no scenes to simulate");
  std::vector<std::optional<GameSession>> slots(setup.games);
  auto play = [&](std::size_t k) {
    SessionOptions o{w.scenes[k % w.scenes.size()].id, setup.task_id, Mode::Simulated, mix_seed(setup.seed, k),
                     0.0, true, setup.profile.patience, "game-" + std::to_string(k)};
    auto s = engine.create_session(o);
    play_phase1(engine, s, setup.profile);
    if (setup.phase2 && s.phase == Phase::Phase2) engine.run_phase2(s, simulate_phase2_answers(engine, s, setup.profile));
    slots[k] = std::move(s);
  };
  std::size_t workers = std::max<std::size_t>(1, std::min(setup.workers, setup.games));
  if (workers == 1) {
    for (std::size_t k = 0; k < setup.games; ++k) play(k);
  } else {
    std::vector<std::thread> pool;
    std::vector<std::exception_ptr> errors(workers);
    for (std::size_t t = 0; t < workers; ++t)
      pool.emplace_back([&, t] {
        try {
          for (std::size_t k = t; k < setup.games; k += workers) play(k);
        } catch (...) {
          errors[t] = std::current_exception();
        }
      });
    for (auto& th : pool) th.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  }
  std::vector<GameSession> out;
  for (auto& s : slots) out.push_back(std::move(*s));
  return out;
}

/// Writes one `<id>.jsonl` per session. Refuses to touch a non-empty
/// directory unless `force`.
inline void write_transcripts(const Engine& engine, const std::vector<GameSession>& games, const std::string& dir,
                              bool force) {
  namespace fs = std::filesystem;
  if (fs::exists(dir) && !fs::is_empty(dir)) {
    if (!force) fail(ErrorCode::IoError, "'" + dir + "' is not empty (use --force to overwrite)");
    for (const auto& f : fs::directory_iterator(dir))
      if (f.path().extension() == ".jsonl") fs::remove(f.path());
  }
  fs::create_directories(dir);
  for (const auto& s : games) {
    std::ofstream out(fs::path(dir) / (s.id + ".jsonl"), std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write transcript for " + s.id);
    out << engine.transcript(s);
  }
}

// --------------------------------------------------------------- ablation

struct EvalSummary {
  std::string model;
  std::vector<double> rewards;  // mean per-turn reward, one per game
  std::vector<double> success;
  std::vector<double> bubbles;

  std::size_t trials() const { return rewards.size(); }
};

inline EvalSummary evaluate_policy(const World& w, const EngineConfig& cfg, const Policy& policy,
                                   const std::string& name, const SimulationSetup& setup) {
  Engine engine(w, cfg, policy);
  SimulationSetup s = setup;
  s.phase2 = false;
  EvalSummary out{name, {}, {}, {}};
  for (const auto& g : run_simulation(engine, s)) {
    if (g.turn == 0) continue;
    out.rewards.push_back(mean_of(g.rewards));
    out.success.push_back(g.succeeded() ? 1.0 : 0.0);
    out.bubbles.push_back(static_cast<double>(g.turn));
  }
  return out;
}

/// Share of paired bootstrap resamples in which `a` has the larger mean.
inline double bootstrap_confidence(const std::vector<double>& a, const std::vector<double>& b,
                                   std::size_t resamples, std::uint64_t seed) {
  if (a.size() != b.size() || a.empty()) fail(ErrorCode::Range, "paired samples must be non-empty and equal length");
  Rng rng(seed);
  std::size_t wins = 0;
  for (std::size_t r = 0; r < resamples; ++r) {
    double d = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      std::size_t j = rng.index(a.size());
      d += a[j] - b[j];
    }
    if (d > 0.0) ++wins;
  }
  return static_cast<double>(wins) / static_cast<double>(resamples);
}

struct AblationResult {
  EvalSummary full, ablated;
  double confidence = 0.0;  // bootstrap share with full reward > ablated reward
};

inline void check_compatible(const Checkpoint& a, const Checkpoint& b, const World& w) {
  if (a.grammar_hash != w.grammar.hash() || b.grammar_hash != w.grammar.hash())
    fail(ErrorCode::CheckpointMismatch, "checkpoint trained on another grammar");
  if (!(a.params.dims() == b.params.dims())) fail(ErrorCode::CheckpointMismatch, "checkpoint shapes differ");
}

inline AblationResult run_ablation(const World& w, const EngineConfig& cfg, const Checkpoint& full,
                                   const Checkpoint& ablated, const SimulationSetup& setup,
                                   std::size_t resamples = 2000) {
  check_compatible(full, ablated, w);
  AblationResult r;
  r.full = evaluate_policy(w, cfg, Policy{full.params, full.ablated}, "X-ToM", setup);
  r.ablated = evaluate_policy(w, cfg, Policy{ablated.params, ablated.ablated}, "X-ToM (ablated)", setup);
  if (r.full.trials() == r.ablated.trials() && r.full.trials() > 0)
    r.confidence = bootstrap_confidence(r.full.rewards, r.ablated.rewards, resamples, mix_seed(setup.seed, 13));
  return r;
}

inline std::string format_ablation(const AblationResult& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(3);
  out << "Model\t#test trials\tss\t#bubbles\tr\n";
  for (const auto* s : {&r.full, &r.ablated})
    out << s->model << '\t' << s->trials() << '\t' << mean_of(s->success) << '\t' << mean_of(s->bubbles) << '\t'
        << mean_of(s->rewards) << '\n';
  out << "bootstrap P(full r > ablated r)\t" << r.confidence << '\n';
  return out.str();
}

// ----------------------------------------------------------------- report

struct TranscriptReport {
  std::size_t games = 0;
  std::size_t bubbles = 0;
  std::array<std::size_t, 5> discourse{};  // kDiscourses order
  std::array<std::size_t, 3> acts{};
  std::size_t successes = 0;
  double mean_reward = 0.0;
  std::size_t trust_games = 0;
  TrustReport trust;  // averaged over sessions with a phase-two record
  std::size_t surveys = 0;
  std::array<double, 7> satisfaction{};

  double discourse_share(Discourse d) const {
    return bubbles ? static_cast<double>(discourse[static_cast<std::size_t>(d)]) / static_cast<double>(bubbles)
                   : 0.0;
  }
  Discourse modal_discourse() const {
    std::size_t best = 0;
    for (std::size_t k = 1; k < 5; ++k)
      if (discourse[k] > discourse[best]) best = k;
    return kDiscourses[best];
  }
};

inline TranscriptReport build_report(const std::string& dir) {
  TranscriptReport r;
  double reward_sum = 0.0;
  std::size_t reward_games = 0;
  SatisfactionStore store;
  for (const auto& f : transcript_files(dir)) {
    auto events = Engine::parse_transcript(detail::read_file(f.string()));
    ++r.games;
    std::vector<double> rewards;
    bool success = false;
    try {
      for (const auto& e : events) {
        auto kind = e.value("event", "");
        if (kind == "ask") {
          const auto& b = e.at("bubble");
          ++r.bubbles;
          ++r.discourse[static_cast<std::size_t>(parse_discourse(b.at("discourse").get<std::string>()))];
          ++r.acts[static_cast<std::size_t>(parse_process(b.at("act").get<std::string>()))];
        } else if (kind == "attempt") {
          rewards.push_back(e.at("reward"));
          success = e.at("ss").get<int>() == 1;
        } else if (kind == "phase2") {
          const auto& t = e.at("trust");
          ++r.trust_games;
          r.trust.jpt += t.at("jpt").get<double>();
          r.trust.jnt += t.at("jnt").get<double>();
          r.trust.rc += t.at("rc").get<double>();
          for (Process z : kProcesses) {
            const auto& by = t.at("by_process").at(std::string(process_name(z)));
            int k = static_cast<int>(z);
            r.trust.jpt_by_process[k] += by.at("jpt").get<double>();
            r.trust.jnt_by_process[k] += by.at("jnt").get<double>();
            r.trust.rc_by_process[k] += by.at("rc").get<double>();
          }
        } else if (kind == "survey") {
          SatisfactionSurvey sv;
          sv.ratings = e.at("ratings").get<std::array<int, 7>>();
          store.collect(e.value("session", f.stem().string()), sv);
        }
      }
    } catch (const json::exception& ex) {
      fail(ErrorCode::SchemaError, f.string() + ": " + ex.what());
    }
    if (success) ++r.successes;
    if (!rewards.empty()) {
      reward_sum += mean_of(rewards);
      ++reward_games;
    }
  }
  r.mean_reward = reward_games ? reward_sum / static_cast<double>(reward_games) : 0.0;
  if (r.trust_games) {
    double n = static_cast<double>(r.trust_games);
    r.trust.jpt /= n;
    r.trust.jnt /= n;
    r.trust.rc /= n;
    for (int k = 0; k < 3; ++k) {
      r.trust.jpt_by_process[k] /= n;
      r.trust.jnt_by_process[k] /= n;
      r.trust.rc_by_process[k] /= n;
    }
    r.trust.games = r.trust_games;
  }
  r.surveys = store.records().size();
  r.satisfaction = store.means();
  return r;
}

inline std::string format_discourse_table(const TranscriptReport& r) {
  std::ostringstream out;
  out << std::fixed << std::setprecision(1);
  out << "Elaboration\tSequence\tRecurrence\tRestatement\tSummary\n";
  for (std::size_t k = 0; k < 5; ++k) out << (k ? "\t" : "") << 100.0 * r.discourse_share(kDiscourses[k]) << '%';
  out << '\n';
  return out.str();
}

inline std::string format_report(const TranscriptReport& r) {
  std::ostringstream out;
  out << "games\t" << r.games << "\nbubbles\t" << r.bubbles << '\n';
  out << std::fixed << std::setprecision(3);
  out << "success_rate\t" << (r.games ? static_cast<double>(r.successes) / static_cast<double>(r.games) : 0.0) << '\n';
  out << "mean_reward\t" << r.mean_reward << "\n\n";
  out << "# discourse relations\n" << format_discourse_table(r) << '\n';
  out << "# explanation acts\n";
  out << std::setprecision(1);
  for (Process z : kProcesses) {
    auto k = static_cast<std::size_t>(z);
    double share = r.bubbles ? 100.0 * static_cast<double>(r.acts[k]) / static_cast<double>(r.bubbles) : 0.0;
    out << process_name(z) << '\t' << r.acts[k] << '\t' << share << "%\n";
  }
  out << "\n# trust (" << r.trust_games << " sessions)\n" << format_trust_report(r.trust);
  out << "\n# satisfaction (" << r.surveys << " surveys)\n";
  out << std::setprecision(2);
  for (std::size_t k = 0; k < 7; ++k) out << kSatisfactionItems[k] << '\t' << r.satisfaction[k] << '\n';
  return out.str();
}

}  // namespace xtom
