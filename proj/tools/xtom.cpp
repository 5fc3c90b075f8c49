// xtom: scene generation, likelihood estimation, training, simulation,
// ablation, transcript reports and the game service.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "xtom/xtom.hpp"

namespace fs = std::filesystem;
using namespace xtom;

namespace {

struct RunConfig {
  std::string data_dir = "data";
  std::string grammar = "lsp_body.aog";
  std::string tasks = "tasks.txt";
  std::string scenes;
  std::string profile = "default.profile";
  std::string likelihoods = "likelihoods.txt";
  std::string task = "action";
  std::size_t hidden = 32;
  std::uint64_t seed = 1;
  double projection_threshold = 0.75;
  int turn_limit = 30;
  bool forbid_recurrence = false;
  bool force = false;
};

// Relative paths that do not exist from the working directory are looked up
// under the data directory.
std::string resolve(const RunConfig& rc, const std::string& p) {
  if (p.empty() || fs::path(p).is_absolute() || fs::exists(p)) return p;
  return (fs::path(rc.data_dir) / p).string();
}

std::string existing(const RunConfig& rc, const std::string& p, const char* what) {
  auto r = resolve(rc, p);
  if (r.empty() || !fs::exists(r)) fail(ErrorCode::ConfigError, std::string(what) + " '" + p + "' not found");
  return r;
}

void refuse_overwrite(const RunConfig& rc, const std::string& path) {
  if (!rc.force && fs::exists(path)) fail(ErrorCode::IoError, "'" + path + "' exists (use --force to overwrite)");
}

void write_text(const std::string& path, const std::string& text) {
  if (auto dir = fs::path(path).parent_path(); !dir.empty()) fs::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::IoError, "cannot write '" + path + "'");
  out << text;
}

AogGrammar grammar_of(const RunConfig& rc) { return load_grammar_file(existing(rc, rc.grammar, "grammar")); }

World world_of(const RunConfig& rc, const std::string& default_scenes, bool need_tables = true) {
  auto g = grammar_of(rc);
  auto tasks = load_tasks(detail::read_file(existing(rc, rc.tasks, "tasks file")), g);
  auto scenes = load_scenes_file(existing(rc, rc.scenes.empty() ? default_scenes : rc.scenes, "scenes file"), g);
  World w{g, std::move(tasks), std::move(scenes), LikelihoodTables(g.hash())};
  w.task(rc.task);
  if (need_tables)
    w.tables = LikelihoodTables::parse(detail::read_file(existing(rc, rc.likelihoods, "likelihood tables")), w.grammar);
  return w;
}

UserProfile profile_of(const RunConfig& rc) {
  return parse_profile(detail::read_file(existing(rc, rc.profile, "profile")));
}

EngineConfig engine_config(const RunConfig& rc) {
  EngineConfig c;
  c.projection_threshold = rc.projection_threshold;
  c.turn_limit = rc.turn_limit;
  c.forbid_recurrence = rc.forbid_recurrence;
  return c;
}

Checkpoint checkpoint_of(const RunConfig& rc, const std::string& path, const World& w) {
  return load_checkpoint(existing(rc, path, "checkpoint"), w.grammar.hash());
}

Service* g_service = nullptr;
void on_signal(int) {
  if (g_service) g_service->stop();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"X-ToM explainer game: training, simulation, reports and service"};
  app.set_version_flag("--version", std::string(kVersion));
  app.set_config("--config", "", "read options from an INI/TOML file; explicit flags win");
  app.require_subcommand(1);
  app.fallthrough();

  RunConfig rc;
  app.add_option("--data-dir", rc.data_dir, "root for relative data paths")->envname("XTOM_DATA_DIR");
  app.add_option("--grammar", rc.grammar, "grammar file");
  app.add_option("--tasks", rc.tasks, "task definitions");
  app.add_option("--scenes", rc.scenes, "scene annotations");
  app.add_option("--profile", rc.profile, "simulated user profile");
  app.add_option("--likelihoods", rc.likelihoods, "belief likelihood tables");
  app.add_option("--task", rc.task, "task id");
  app.add_option("--hidden", rc.hidden, "LSTM width")->check(CLI::PositiveNumber);
  app.add_option("--seed", rc.seed, "master seed");
  app.add_option("--projection-threshold", rc.projection_threshold, "grasp probability that counts as known")
      ->check(CLI::Range(0.0, 1.0));
  app.add_option("--turn-limit", rc.turn_limit, "bubbles per game")->check(CLI::PositiveNumber);
  app.add_flag("--forbid-recurrence", rc.forbid_recurrence, "mask actions that repeat a bubble");
  app.add_flag("--force", rc.force, "overwrite existing outputs");

  // gen-scenes
  auto* gen = app.add_subcommand("gen-scenes", "generate random annotated scenes");
  std::size_t gen_count = 200;
  std::string gen_out, gen_prefix = "s";
  gen->add_option("--count", gen_count, "number of scenes");
  gen->add_option("--prefix", gen_prefix, "scene id prefix");
  gen->add_option("--output", gen_out, "output file")->required();

  // estimate-likelihoods
  auto* est = app.add_subcommand("estimate-likelihoods", "estimate belief likelihood tables");
  std::string est_dir, est_out;
  std::size_t est_games = 200;
  est->add_option("--transcripts", est_dir, "estimate from recorded transcripts in this directory");
  est->add_option("--games", est_games, "otherwise play this many games with a uniform explainer");
  est->add_option("--output", est_out, "output file")->required();

  // train
  auto* train = app.add_subcommand("train", "train an explainer policy on simulated users");
  TrainingSetup ts;
  std::string train_ckpt, train_metrics;
  train->add_option("--episodes", ts.episodes, "episode budget");
  train->add_option("--round-every", ts.round_every, "episodes between update rounds");
  train->add_option("--updates-per-round", ts.train.updates_per_round, "gradient steps per round");
  train->add_option("--batch", ts.train.batch_episodes, "episodes per gradient step");
  train->add_option("--pool", ts.train.pool_capacity, "replay pool capacity");
  train->add_option("--lr", ts.train.lr, "Adam step size");
  train->add_option("--gamma", ts.train.gamma, "discount");
  train->add_option("--entropy", ts.train.entropy_bonus, "entropy bonus");
  train->add_option("--epsilon", ts.epsilon_start, "initial exploration rate");
  train->add_flag("--ablated", ts.ablated, "zero the belief features");
  train->add_option("--checkpoint", train_ckpt, "output checkpoint")->required();
  train->add_option("--metrics", train_metrics, "per-round metrics (tsv)");

  // simulate
  auto* sim = app.add_subcommand("simulate", "play seeded games and write transcripts");
  SimulationSetup ss;
  std::string sim_ckpt, sim_out;
  sim->add_option("--checkpoint", sim_ckpt, "trained policy")->required();
  sim->add_option("--games", ss.games, "number of games");
  sim->add_option("--workers", ss.workers, "parallel workers")->check(CLI::PositiveNumber);
  sim->add_flag("!--no-phase2", ss.phase2, "skip phase two");
  sim->add_option("--output", sim_out, "transcript directory")->required();

  // ablate
  auto* abl = app.add_subcommand("ablate", "compare a full and an ablated checkpoint");
  SimulationSetup as;
  as.games = 200;
  std::string abl_full, abl_ablated, abl_out;
  abl->add_option("--full", abl_full, "checkpoint of the full model")->required();
  abl->add_option("--ablated-checkpoint", abl_ablated, "checkpoint of the ablated model")->required();
  abl->add_option("--games", as.games, "held-out games");
  abl->add_option("--workers", as.workers, "parallel workers")->check(CLI::PositiveNumber);
  abl->add_option("--output", abl_out, "write the table here as well");

  // report
  auto* rep = app.add_subcommand("report", "summarize a transcript directory");
  std::string rep_dir, rep_out;
  rep->add_option("--transcripts", rep_dir, "transcript directory")->required();
  rep->add_option("--output", rep_out, "write the report here as well");

  // serve
  auto* srv = app.add_subcommand("serve", "run the HTTP game service");
  std::string srv_ckpt, srv_host = "127.0.0.1";
  int srv_port = 8080;
  ServiceOptions so;
  srv->add_option("--checkpoint", srv_ckpt, "trained policy")->required();
  srv->add_option("--host", srv_host, "bind address");
  srv->add_option("--port", srv_port, "bind port (0 picks one)")->check(CLI::Range(0, 65535));
  srv->add_option("--token", so.token, "bearer token required on every request")->envname("XTOM_TOKEN");
  srv->add_option("--images", so.image_dir, "directory holding scene images");
  srv->add_option("--transcripts", so.transcript_dir, "write finished sessions here");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      refuse_overwrite(rc, gen_out);
      auto g = grammar_of(rc);
      auto tasks = load_tasks(detail::read_file(existing(rc, rc.tasks, "tasks file")), g);
      const Task* task = nullptr;
      for (const auto& t : tasks)
        if (t.id == rc.task) task = &t;
      if (!task) fail(ErrorCode::UnknownTask, "no task '" + rc.task + "'");
      write_text(gen_out, format_scenes(generate_scenes(g, gen_count, rc.seed, task->labels, gen_prefix), g));
      std::cout << "wrote " << gen_count << " scenes to " << gen_out << '\n';
    } else if (*est) {
      refuse_overwrite(rc, est_out);
      auto w = world_of(rc, "scenes_train.txt", false);
      LikelihoodTables t = est_dir.empty() ? bootstrap_likelihoods(w, engine_config(rc), profile_of(rc), rc.task,
                                                                   est_games, rc.seed, rc.hidden)
                                           : likelihoods_from_transcripts(est_dir, w);
      write_text(est_out, t.serialize(w.grammar));
      std::cout << "estimated from " << t.games() << " games into " << est_out << '\n';
    } else if (*train) {
      refuse_overwrite(rc, train_ckpt);
      if (!train_metrics.empty()) refuse_overwrite(rc, train_metrics);
      auto w = world_of(rc, "scenes_train.txt");
      ts.task_id = rc.task;
      ts.hidden = rc.hidden;
      ts.seed = rc.seed;
      ts.profile = profile_of(rc);
      auto res = run_training(w, engine_config(rc), ts);
      std::ostringstream cfg;
      cfg << "task=" << ts.task_id << "\nepisodes=" << ts.episodes << "\nseed=" << ts.seed
          << "\nupdates_per_round=" << ts.train.updates_per_round << "\nlr=" << ts.train.lr << '\n';
      if (auto dir = fs::path(train_ckpt).parent_path(); !dir.empty()) fs::create_directories(dir);
      save_checkpoint(train_ckpt, Checkpoint{res.params, w.grammar.hash(), ts.ablated, cfg.str()});
      std::string metrics = metrics_header();
      for (const auto& r : res.rounds) metrics += format_round(r);
      if (!train_metrics.empty()) write_text(train_metrics, metrics);
      std::cout << metrics << "checkpoint " << train_ckpt << " (" << res.rounds.size() << " rounds)\n";
    } else if (*sim) {
      auto w = world_of(rc, "scenes_test.txt");
      auto ck = checkpoint_of(rc, sim_ckpt, w);
      ss.task_id = rc.task;
      ss.seed = rc.seed;
      ss.profile = profile_of(rc);
      Engine engine(w, engine_config(rc), Policy{ck.params, ck.ablated});
      if (!rc.force && fs::exists(sim_out) && !fs::is_empty(sim_out))
        fail(ErrorCode::IoError, "'" + sim_out + "' is not empty (use --force to overwrite)");
      auto games = run_simulation(engine, ss);
      write_transcripts(engine, games, sim_out, rc.force);
      std::cout << "wrote " << games.size() << " transcripts to " << sim_out << '\n';
    } else if (*abl) {
      if (!abl_out.empty()) refuse_overwrite(rc, abl_out);
      auto w = world_of(rc, "scenes_test.txt");
      as.task_id = rc.task;
      as.seed = rc.seed;
      as.profile = profile_of(rc);
      auto r = run_ablation(w, engine_config(rc), checkpoint_of(rc, abl_full, w), checkpoint_of(rc, abl_ablated, w),
                            as);
      auto table = format_ablation(r);
      if (!abl_out.empty()) write_text(abl_out, table);
      std::cout << table;
    } else if (*rep) {
      if (!rep_out.empty()) refuse_overwrite(rc, rep_out);
      auto text = format_report(build_report(rep_dir));
      if (!rep_out.empty()) write_text(rep_out, text);
      std::cout << text;
    } else if (*srv) {
      auto w = world_of(rc, "scenes_test.txt");
      auto ck = checkpoint_of(rc, srv_ckpt, w);
      so.seed = rc.seed;
      if (!so.image_dir.empty()) so.image_dir = resolve(rc, so.image_dir);
      Service service(w, engine_config(rc), Policy{ck.params, ck.ablated}, so);
      int port = service.bind(srv_host, srv_port);
      g_service = &service;
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      std::cout << "serving on " << srv_host << ':' << port << std::endl;
      service.run();
      g_service = nullptr;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
