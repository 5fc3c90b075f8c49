#pragma once

// HTTP+JSON front of the engine. Sessions live in memory; each one is
// serialized by its own mutex while the session table has a separate lock.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <memory>
#include <mutex>
#include <string>
#include <unordered_map>

#include <httplib.h>
#include <json.hpp>

#include "xtom/engine.hpp"
#include "xtom/version.hpp"

namespace xtom {

struct ServiceOptions {
  std::string token;              // empty disables the bearer check
  std::string image_dir;          // root for scene image_ref paths
  std::string transcript_dir;     // finished sessions are written here when set
  std::uint64_t seed = 0;         // session seeds derive from this and a counter
};

inline int http_status(ErrorCode c) {
  switch (c) {
    case ErrorCode::UnknownSession:
    case ErrorCode::UnknownScene:
    case ErrorCode::UnknownTask:
      return 404;
    case ErrorCode::WrongPhase:
    case ErrorCode::TurnLimit:
    case ErrorCode::NoBubblesYet:
    case ErrorCode::ConflictingAnswer:
      return 409;
    case ErrorCode::IoError:
    case ErrorCode::CheckpointMismatch:
      return 500;
    default:
      return 400;
  }
}

class Service {
 public:
  Service(const World& world, EngineConfig cfg, Policy policy, ServiceOptions opt = {})
      : engine_(world, std::move(cfg), std::move(policy)), opt_(std::move(opt)) {
    routes();
  }
  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Binds to host:port; port 0 picks a free port. Returns the bound port.
  int bind(const std::string& host, int port) {
    int got = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (got <= 0) fail(ErrorCode::BindError, "cannot bind " + host + ":" + std::to_string(port));
    return got;
  }
  /// Blocks until stop() is called.
  void run() { server_.listen_after_bind(); }
  void stop() { server_.stop(); }
  void wait_until_ready() const { server_.wait_until_ready(); }

  const Engine& engine() const { return engine_; }
  std::size_t session_count() const {
    std::lock_guard lk(table_mu_);
    return sessions_.size();
  }

 private:
  struct Entry {
    std::mutex mu;
    GameSession session;
  };

  static json error_body(std::string_view code, const std::string& msg) { return {{"code", code}, {"message", msg}}; }

  static void send(httplib::Response& res, int status, const json& body) {
    res.status = status;
    res.set_content(body.dump(), "application/json");
  }

  json with_state(json body, const GameSession& s) const {
    body["phase"] = phase_name(s.phase);
    body["turn"] = s.turn;
    body["session"] = s.id;
    return body;
  }

  std::shared_ptr<Entry> find(const std::string& id) const {
    std::lock_guard lk(table_mu_);
    auto it = sessions_.find(id);
    if (it == sessions_.end()) fail(ErrorCode::UnknownSession, "no session '" + id + "'");
    return it->second;
  }

  static json parse_body(const httplib::Request& req) {
    if (req.body.empty()) return json::object();
    try {
      auto j = json::parse(req.body);
      if (!j.is_object()) fail(ErrorCode::SchemaError, "request body must be a JSON object");
      return j;
    } catch (const json::exception& e) {
      fail(ErrorCode::SchemaError, std::string("bad JSON body: ") + e.what());
    }
  }

  template <class F>
  httplib::Server::Handler guarded(F f) {
    return [f](const httplib::Request& req, httplib::Response& res) {
      try {
        f(req, res);
      } catch (const Error& e) {
        send(res, http_status(e.code()), error_body(code_name(e.code()), e.detail()));
      } catch (const json::exception& e) {
        send(res, 400, error_body("SCHEMA_ERROR", e.what()));
      }
    };
  }

  /// Runs f on the session under its lock.
  template <class F>
  httplib::Server::Handler on_session(F f) {
    return guarded([this, f](const httplib::Request& req, httplib::Response& res) {
      auto entry = find(req.matches[1]);
      std::lock_guard lk(entry->mu);
      f(req, res, entry->session);
    });
  }

  void persist(const GameSession& s) const {
    if (opt_.transcript_dir.empty()) return;
    namespace fs = std::filesystem;
    fs::create_directories(opt_.transcript_dir);
    std::ofstream out(fs::path(opt_.transcript_dir) / (s.id + ".jsonl"), std::ios::binary);
    if (!out) fail(ErrorCode::IoError, "cannot write transcript for " + s.id);
    out << engine_.transcript(s);
  }

  void routes() {
    server_.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
      if (opt_.token.empty() || req.path == "/health") return httplib::Server::HandlerResponse::Unhandled;
      if (req.get_header_value("Authorization") == "Bearer " + opt_.token)
        return httplib::Server::HandlerResponse::Unhandled;
      send(res, 401, error_body("UNAUTHORIZED", "missing or wrong bearer token"));
      return httplib::Server::HandlerResponse::Handled;
    });

    server_.Get("/health", guarded([this](const httplib::Request&, httplib::Response& res) {
                  send(res, 200, {{"status", "ok"}, {"version", kVersion},
                                  {"grammar_hash", hex_hash(engine_.world().grammar.hash())}});
                }));

    server_.Get(R"(/catalog/([^/]+))", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const Task& task = engine_.world().task(req.matches[1].str());
                  json qs = json::array();
                  for (const auto& q : build_catalog(engine_.world().grammar, task).questions)
                    qs.push_back({{"id", q.id}, {"text", q.text}});
                  send(res, 200, {{"task", task.id}, {"labels", task.labels}, {"questions", qs}});
                }));

    server_.Get(R"(/scenes/([^/]+)/image)", guarded([this](const httplib::Request& req, httplib::Response& res) {
                  const Scene& sc = engine_.world().scene(req.matches[1].str());
                  namespace fs = std::filesystem;
                  fs::path p = fs::path(opt_.image_dir) / sc.image_ref;
                  if (sc.image_ref.empty() || !fs::is_regular_file(p))
                    fail(ErrorCode::UnknownScene, "scene '" + sc.id + "' has no image");
                  auto ext = p.extension().string();
                  std::string type = ext == ".png" ? "image/png"
                                     : (ext == ".jpg" || ext == ".jpeg") ? "image/jpeg"
                                                                         : "application/octet-stream";
                  res.status = 200;
                  res.set_content(detail::read_file(p.string()), type);
                }));

    server_.Post("/sessions", guarded([this](const httplib::Request& req, httplib::Response& res) {
                   auto body = parse_body(req);
                   SessionOptions o;
                   o.scene_id = body.at("scene").get<std::string>();
                   o.task_id = body.at("task").get<std::string>();
                   o.patience = body.value("patience", 0);
                   std::uint64_t n = counter_++;
                   o.seed = body.contains("seed") ? body["seed"].get<std::uint64_t>() : mix_seed(opt_.seed, n);
                   o.id = "s" + std::to_string(n);
                   auto entry = std::make_shared<Entry>();
                   entry->session = engine_.create_session(o);
                   json out = with_state(engine_.session_json(entry->session), entry->session);
                   {
                     std::lock_guard lk(table_mu_);
                     sessions_[o.id] = entry;
                   }
                   send(res, 201, out);
                 }));

    server_.Get(R"(/sessions/([^/]+))",
                on_session([this](const httplib::Request&, httplib::Response& res, GameSession& s) {
                  send(res, 200, with_state(engine_.session_json(s), s));
                }));

    server_.Post(R"(/sessions/([^/]+)/ask)",
                 on_session([this](const httplib::Request& req, httplib::Response& res, GameSession& s) {
                   auto body = parse_body(req);
                   Bubble b = engine_.ask(s, body.at("question_id").get<std::string>());
                   send(res, 200, with_state({{"bubble", bubble_json(b, engine_.world().grammar)}}, s));
                 }));

    server_.Post(R"(/sessions/([^/]+)/attempt)",
                 on_session([this](const httplib::Request& req, httplib::Response& res, GameSession& s) {
                   auto body = parse_body(req);
                   auto r = engine_.submit_attempt(s, body.at("answer").get<std::string>(), body.at("cf").get<int>(),
                                                   body.at("sf").get<int>());
                   send(res, 200,
                        with_state({{"ss", r.ss}, {"reward", r.reward}, {"phase_changed", r.phase_changed}}, s));
                 }));

    server_.Get(R"(/sessions/([^/]+)/phase2/questions)",
                on_session([this](const httplib::Request&, httplib::Response& res, GameSession& s) {
                  json qs = json::array();
                  for (const auto& q : engine_.phase2_questions(s))
                    qs.push_back(eval_question_json(q, engine_.world().grammar));
                  json scenes = s.eval_scenes;
                  send(res, 200, with_state({{"questions", qs}, {"scenes", scenes}}, s));
                }));

    server_.Post(R"(/sessions/([^/]+)/phase2/answers)",
                 on_session([this](const httplib::Request& req, httplib::Response& res, GameSession& s) {
                   auto body = parse_body(req);
                   std::vector<EvalAnswer> answers;
                   for (const auto& a : body.value("answers", json::array()))
                     answers.push_back({a.at("id").get<std::string>(), a.at("choice").get<std::string>()});
                   std::optional<SatisfactionSurvey> survey;
                   if (body.contains("survey")) {
                     SatisfactionSurvey sv;
                     auto r = body["survey"];
                     if (!r.is_array() || r.size() != sv.ratings.size())
                       fail(ErrorCode::Range, "survey needs " + std::to_string(sv.ratings.size()) + " ratings");
                     for (std::size_t k = 0; k < sv.ratings.size(); ++k) sv.ratings[k] = r[k].get<int>();
                     SatisfactionStore probe;
                     probe.collect(s.id, sv);  // validates before the phase changes
                     survey = sv;
                   }
                   auto rep = engine_.run_phase2(s, answers);
                   if (survey) {
                     std::lock_guard lk(survey_mu_);
                     engine_.record_survey(s, surveys_, *survey);
                   }
                   persist(s);
                   send(res, 200, with_state({{"trust", trust_json(rep)}}, s));
                 }));

    server_.Get(R"(/sessions/([^/]+)/report)",
                on_session([this](const httplib::Request&, httplib::Response& res, GameSession& s) {
                  if (!s.report) fail(ErrorCode::WrongPhase, "the report exists once phase two is answered");
                  json out = {{"trust", trust_json(*s.report)}};
                  if (s.survey) out["survey"] = s.survey->ratings;
                  json rewards = s.rewards;
                  out["rewards"] = rewards;
                  send(res, 200, with_state(out, s));
                }));
  }

  Engine engine_;
  ServiceOptions opt_;
  httplib::Server server_;
  mutable std::mutex table_mu_;
  std::unordered_map<std::string, std::shared_ptr<Entry>> sessions_;
  std::atomic<std::uint64_t> counter_{0};
  std::mutex survey_mu_;
  SatisfactionStore surveys_;
};

}  // namespace xtom
