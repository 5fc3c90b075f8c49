#include <gtest/gtest.h>

#include <fstream>
#include <thread>

#include "fixtures.hpp"

using namespace xtom;
using nlohmann::json;

namespace {

class Server {
 public:
  explicit Server(ServiceOptions opt = {}, World w = fixture::world(6))
      : world_(std::move(w)), svc_(world_, EngineConfig{}, fixture::policy(world_), std::move(opt)) {
    port_ = svc_.bind("127.0.0.1", 0);
    thread_ = std::thread([this] { svc_.run(); });
    svc_.wait_until_ready();
  }
  ~Server() {
    svc_.stop();
    thread_.join();
  }

  httplib::Client client(const std::string& token = "") const {
    httplib::Client c("127.0.0.1", port_);
    if (!token.empty()) c.set_bearer_token_auth(token);
    return c;
  }
  const World& world() const { return world_; }
  Service& svc() { return svc_; }

 private:
  World world_;
  Service svc_;
  int port_ = 0;
  std::thread thread_;
};

json post(httplib::Client& c, const std::string& path, const json& body, int want) {
  auto res = c.Post(path, body.dump(), "application/json");
  EXPECT_TRUE(res);
  if (!res) return {};
  EXPECT_EQ(res->status, want) << path << ' ' << res->body;
  return json::parse(res->body);
}

json get(httplib::Client& c, const std::string& path, int want) {
  auto res = c.Get(path);
  EXPECT_TRUE(res);
  if (!res) return {};
  EXPECT_EQ(res->status, want) << path << ' ' << res->body;
  return json::parse(res->body);
}

}  // namespace

TEST(Service, Health) {
  Server s;
  auto c = s.client();
  auto h = get(c, "/health", 200);
  EXPECT_EQ(h["status"], "ok");
  EXPECT_EQ(h["version"], kVersion);
  EXPECT_EQ(h["grammar_hash"], hex_hash(s.world().grammar.hash()));
  EXPECT_EQ(h["grammar_hash"].get<std::string>().size(), 16u);
}

TEST(Service, Catalog) {
  Server s;
  auto c = s.client();
  auto cat = get(c, "/catalog/action", 200);
  EXPECT_EQ(cat["questions"].size(), 11u);
  EXPECT_EQ(cat["labels"].size(), 8u);
  EXPECT_EQ(get(c, "/catalog/juggling", 404)["code"], "UNKNOWN_TASK");
}

TEST(Service, FullGame) {
  fixture::TempDir dir("svc");
  ServiceOptions opt;
  opt.transcript_dir = dir.str();
  Server s(opt);
  auto c = s.client();
  const Scene& scene = s.world().scenes[0];
  auto created = post(c, "/sessions", {{"scene", scene.id}, {"task", "action"}, {"seed", 5}}, 201);
  std::string id = created["session"];
  EXPECT_EQ(created["phase"], "PHASE1");
  EXPECT_EQ(created["turn"], 0);
  EXPECT_EQ(s.svc().session_count(), 1u);

  auto asked = post(c, "/sessions/" + id + "/ask", {{"question_id", "where-head"}}, 200);
  EXPECT_EQ(asked["bubble"]["discourse"], "SEQUENCE");
  EXPECT_EQ(asked["turn"], 1);
  get(c, "/sessions/" + id + "/report", 409);
  get(c, "/sessions/" + id + "/phase2/questions", 409);

  auto att = post(c, "/sessions/" + id + "/attempt", {{"answer", scene.task_label}, {"cf", 5}, {"sf", 5}}, 200);
  EXPECT_EQ(att["ss"], 1);
  EXPECT_TRUE(att["phase_changed"].get<bool>());
  EXPECT_EQ(att["phase"], "PHASE2");
  EXPECT_GT(att["reward"].get<double>(), 1.0);

  auto qs = get(c, "/sessions/" + id + "/phase2/questions", 200);
  EXPECT_EQ(qs["scenes"].size(), 3u);
  json answers = json::array();
  for (const auto& q : qs["questions"]) answers.push_back({{"id", q["id"]}, {"choice", q["choices"][0]}});

  // a bad survey is rejected before the phase changes
  auto bad = post(c, "/sessions/" + id + "/phase2/answers", {{"answers", answers}, {"survey", {1, 2, 3}}}, 400);
  EXPECT_EQ(bad["code"], "RANGE");
  post(c, "/sessions/" + id + "/phase2/answers",
       {{"answers", answers}, {"survey", {1, 2, 3, 4, 5, 6, 10}}}, 400);

  auto done = post(c, "/sessions/" + id + "/phase2/answers",
                   {{"answers", answers}, {"survey", {9, 8, 7, 6, 5, 4, 3}}}, 200);
  EXPECT_EQ(done["phase"], "DONE");
  EXPECT_TRUE(done["trust"].contains("jpt"));

  auto rep = get(c, "/sessions/" + id + "/report", 200);
  EXPECT_EQ(rep["survey"], json({9, 8, 7, 6, 5, 4, 3}));
  EXPECT_EQ(rep["rewards"].size(), 1u);
  EXPECT_TRUE(std::filesystem::exists(dir / (id + ".jsonl")));

  // the persisted transcript replays
  auto replayed = s.svc().engine().replay(detail::read_file(dir / (id + ".jsonl")));
  EXPECT_EQ(replayed.phase, Phase::Done);
}

TEST(Service, Errors) {
  Server s;
  auto c = s.client();
  EXPECT_EQ(get(c, "/sessions/s99", 404)["code"], "UNKNOWN_SESSION");
  EXPECT_EQ(post(c, "/sessions", {{"scene", "nope"}, {"task", "action"}}, 404)["code"], "UNKNOWN_SCENE");
  EXPECT_EQ(post(c, "/sessions", {{"task", "action"}}, 400)["code"], "SCHEMA_ERROR");
  auto res = c.Post("/sessions", "{not json", "application/json");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 400);

  auto created = post(c, "/sessions", {{"scene", s.world().scenes[1].id}, {"task", "action"}}, 201);
  std::string id = created["session"];
  EXPECT_EQ(post(c, "/sessions/" + id + "/attempt", {{"answer", "walking"}, {"cf", 3}, {"sf", 3}}, 409)["code"],
            "NO_BUBBLES_YET");
  EXPECT_EQ(post(c, "/sessions/" + id + "/ask", {{"question_id", "where-elbow"}}, 400)["code"], "UNKNOWN_QUESTION");
  post(c, "/sessions/" + id + "/ask", {{"question_id", "where-head"}}, 200);
  EXPECT_EQ(post(c, "/sessions/" + id + "/attempt", {{"answer", "walking"}, {"cf", 9}, {"sf", 3}}, 400)["code"],
            "RANGE");
}

TEST(Service, SessionsGetDistinctIds) {
  Server s;
  auto c = s.client();
  std::set<std::string> ids;
  for (int k = 0; k < 5; ++k)
    ids.insert(post(c, "/sessions", {{"scene", s.world().scenes[0].id}, {"task", "action"}}, 201)["session"]);
  EXPECT_EQ(ids.size(), 5u);
}

TEST(Service, BearerToken) {
  ServiceOptions opt;
  opt.token = "sesame";
  Server s(opt);
  auto anon = s.client();
  get(anon, "/health", 200);
  EXPECT_EQ(get(anon, "/catalog/action", 401)["code"], "UNAUTHORIZED");
  auto wrong = s.client("open");
  get(wrong, "/catalog/action", 401);
  auto ok = s.client("sesame");
  get(ok, "/catalog/action", 200);
}

TEST(Service, SceneImages) {
  fixture::TempDir dir("img");
  {
    std::ofstream png(dir / "a.png", std::ios::binary);
    png << "\x89PNG fake";
  }
  World w = fixture::world(3);
  w.scenes[0].image_ref = "a.png";
  ServiceOptions opt;
  opt.image_dir = dir.str();
  Server s(opt, w);
  auto c = s.client();
  auto res = c.Get("/scenes/" + w.scenes[0].id + "/image");
  ASSERT_TRUE(res);
  EXPECT_EQ(res->status, 200);
  EXPECT_EQ(res->get_header_value("Content-Type"), "image/png");
  EXPECT_EQ(res->body, "\x89PNG fake");
  get(c, "/scenes/" + w.scenes[1].id + "/image", 404);
  get(c, "/scenes/nope/image", 404);
}

TEST(Service, ConcurrentSessions) {
  Server s;
  std::vector<std::thread> ts;
  std::atomic<int> ok{0};
  for (int t = 0; t < 4; ++t)
    ts.emplace_back([&, t] {
      auto c = s.client();
      auto res = c.Post("/sessions", json{{"scene", s.world().scenes[t % 3].id}, {"task", "action"}}.dump(),
                        "application/json");
      if (!res || res->status != 201) return;
      std::string id = json::parse(res->body)["session"];
      for (const char* q : {"where-head", "where-torso", "where-left-arm"}) {
        auto a = c.Post("/sessions/" + id + "/ask", json{{"question_id", q}}.dump(), "application/json");
        if (!a || a->status != 200) return;
        auto b = c.Post("/sessions/" + id + "/attempt", json{{"answer", "crouching"}, {"cf", 1}, {"sf", 1}}.dump(),
                        "application/json");
        if (!b || b->status != 200) return;
        if (json::parse(b->body)["phase"] != "PHASE1") break;
      }
      ++ok;
    });
  for (auto& t : ts) t.join();
  EXPECT_EQ(ok.load(), 4);
  EXPECT_EQ(s.svc().session_count(), 4u);
}

TEST(Service, BindFailure) {
  Server s;
  World w = fixture::world(3);
  Service other(w, EngineConfig{}, fixture::policy(w));
  EXPECT_XTOM_ERROR(other.bind("256.1.1.1", 8080), ErrorCode::BindError);
}
