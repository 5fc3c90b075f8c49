#include <gtest/gtest.h>

#include <algorithm>

#include "fixtures.hpp"

using namespace xtom;

namespace {

// one bubble per node that fully unblurs exactly that node's true region
DialogHistory reveal(const Scene& sc, std::initializer_list<NodeId> nodes, int scale = 2) {
  DialogHistory h;
  for (NodeId v : nodes) {
    Bubble b;
    b.attention = v;
    b.scale = scale;
    b.region = *sc.part(v);
    h.bubbles.push_back(b);
  }
  return h;
}

Task binary_task() {
  Task t = fixture::action();
  t.labels = {"walking", "running"};
  return t;
}

}  // namespace

TEST(Profile, ParseAndDefaults) {
  auto p = parse_profile("# comment\ncuriosity = depth\nevidence_threshold=0.5\npatience=12\nseed=4\n");
  EXPECT_EQ(p.curiosity, Curiosity::Depth);
  EXPECT_DOUBLE_EQ(p.evidence_threshold, 0.5);
  EXPECT_DOUBLE_EQ(p.accuracy_given_evidence, 0.9);
  EXPECT_EQ(p.patience, 12);
  EXPECT_EQ(p.seed, 4u);
  auto d = parse_profile(detail::read_file(fixture::data("default.profile")));
  EXPECT_EQ(d.curiosity, Curiosity::Random);
  EXPECT_EQ(d.patience, 30);
}

TEST(Profile, Errors) {
  EXPECT_XTOM_ERROR(parse_profile("mood=grumpy\n"), ErrorCode::ConfigError);
  EXPECT_XTOM_ERROR(parse_profile("curiosity=sideways\n"), ErrorCode::ConfigError);
  EXPECT_XTOM_ERROR(parse_profile("patience=0\n"), ErrorCode::ConfigError);
  EXPECT_XTOM_ERROR(parse_profile("evidence_threshold=abc\n"), ErrorCode::ConfigError);
  EXPECT_XTOM_ERROR(parse_profile("accuracy_given_evidence\n"), ErrorCode::ConfigError);
}

TEST(Catalog, SingleNode) {
  auto g = load_grammar("node person TERM person\n");
  Task t = default_action_task(g);
  auto cat = build_catalog(g, t);
  ASSERT_EQ(cat.questions.size(), 1u);
  EXPECT_EQ(cat.questions[0].id, "where-person");
}

TEST(Catalog, FixtureCoversEveryNode) {
  const auto& g = fixture::body();
  auto cat = build_catalog(g, fixture::action());
  EXPECT_EQ(cat.questions.size(), g.node_count());
  // critical subjects first, in task order
  for (std::size_t k = 0; k < fixture::action().critical.size(); ++k)
    EXPECT_EQ(cat.questions[k].subject, fixture::action().critical[k]);
  EXPECT_NE(cat.find("where-head"), nullptr);
  EXPECT_EQ(cat.find("where-elbow"), nullptr);
}

TEST(Catalog, TasksDifferOnlyInOrder) {
  const auto& g = fixture::body();
  auto a = build_catalog(g, fixture::tasks()[0]);
  auto b = build_catalog(g, fixture::tasks()[1]);
  auto ids = [](const QuestionCatalog& c) {
    std::vector<std::string> v;
    for (const auto& q : c.questions) v.push_back(q.id + "|" + q.text);
    std::sort(v.begin(), v.end());
    return v;
  };
  EXPECT_EQ(ids(a), ids(b));
  EXPECT_NE(a.questions.front().id, b.questions.front().id);
}

TEST(Revealed, NeedsStrongUnblur) {
  const auto& g = fixture::body();
  auto sc = generate_scenes(g, 1, 5, fixture::action().labels).front();
  NodeId head = g.id_of("head");
  EXPECT_TRUE(revealed_nodes(reveal(sc, {head}, 1), sc).count(head));
  EXPECT_FALSE(revealed_nodes(reveal(sc, {head}, 0), sc).count(head));
  // a bubble over the whole person reveals every part
  EXPECT_EQ(revealed_nodes(reveal(sc, {g.root()}), sc).size(), g.node_count());
}

TEST(NextQuestion, BreadthAndExhausted) {
  const auto& g = fixture::body();
  const Task& t = fixture::action();
  auto cat = build_catalog(g, t);
  UserProfile p;
  p.curiosity = Curiosity::Breadth;
  Rng rng(1);
  DialogHistory h;
  // critical nodes: arms at depth 2 come before feet at depth 3
  EXPECT_EQ(next_question(p, cat, {}, h, g, t, rng), "where-left-arm");
  std::set<NodeId> crit(t.critical.begin(), t.critical.end());
  EXPECT_EQ(next_question(p, cat, crit, h, g, t, rng), "where-person");
  std::set<NodeId> all;
  for (std::uint32_t i = 0; i < g.node_count(); ++i) all.insert(NodeId{i});
  EXPECT_XTOM_ERROR(next_question(p, cat, all, h, g, t, rng), ErrorCode::Exhausted);
}

TEST(NextQuestion, DepthFollowsLastAttention) {
  const auto& g = fixture::body();
  const Task& t = fixture::action();
  auto cat = build_catalog(g, t);
  UserProfile p;
  p.curiosity = Curiosity::Depth;
  Rng rng(1);
  DialogHistory h;
  Bubble b;
  b.attention = g.id_of("left-leg");
  h.bubbles.push_back(b);
  EXPECT_EQ(next_question(p, cat, {}, h, g, t, rng), "where-left-foot");
  std::set<NodeId> seen{g.id_of("left-foot")};
  // nothing open below, falls back to breadth
  EXPECT_EQ(next_question(p, cat, seen, h, g, t, rng), "where-left-arm");
}

TEST(NextQuestion, RandomReplaysStream) {
  const auto& g = fixture::body();
  const Task& t = fixture::action();
  auto cat = build_catalog(g, t);
  UserProfile p;
  p.curiosity = Curiosity::Random;
  Rng rng(3);
  std::mt19937_64 raw(3);
  std::set<NodeId> revealed{g.id_of("head")};
  std::vector<std::string> open;
  for (const auto& q : cat.questions)
    if (!revealed.count(q.subject)) open.push_back(q.id);
  for (int k = 0; k < 50; ++k) {
    double u = static_cast<double>(raw() >> 11) * 0x1.0p-53;
    auto idx = std::min(open.size() - 1, static_cast<std::size_t>(u * static_cast<double>(open.size())));
    EXPECT_EQ(next_question(p, cat, revealed, {}, g, t, rng), open[idx]);
  }
}

TEST(Attempt, EvidenceAndAccuracy) {
  const auto& g = fixture::body();
  const Task& t = fixture::action();
  auto sc = generate_scenes(g, 1, 5, t.labels).front();
  UserProfile p;
  p.accuracy_given_evidence = 1.0;
  Rng rng(2);
  std::set<NodeId> all(t.critical.begin(), t.critical.end());
  auto a = attempt_task(p, t, sc.task_label, all, rng);
  EXPECT_EQ(a.answer, sc.task_label);
  EXPECT_EQ(a.cf, 5);
  std::set<NodeId> half{t.critical[0], t.critical[1]};
  EXPECT_EQ(attempt_task(p, t, sc.task_label, half, rng).cf, 2);  // 1 + round(2) = 3, capped while guessing
  p.evidence_threshold = 0.5;
  EXPECT_EQ(attempt_task(p, t, sc.task_label, half, rng).cf, 3);
}

TEST(Attempt, GuessRateOnBinaryLabels) {
  Task t = binary_task();
  UserProfile p;
  Rng rng(11);
  int right = 0;
  const int n = 10000;
  for (int k = 0; k < n; ++k) right += attempt_task(p, t, "walking", {}, rng).answer == "walking";
  // unrevealed: uniform guess over two labels
  EXPECT_NEAR(right / static_cast<double>(n), 0.5, 0.015);
}

TEST(Attempt, WrongAnswersAvoidTruth) {
  const Task& t = fixture::action();
  UserProfile p;
  p.accuracy_given_evidence = 0.0;
  Rng rng(4);
  std::set<NodeId> all(t.critical.begin(), t.critical.end());
  for (int k = 0; k < 200; ++k) EXPECT_NE(attempt_task(p, t, "walking", all, rng).answer, "walking");
}

TEST(Satisfaction, Formula) {
  const auto& g = fixture::body();
  const Task& t = fixture::action();
  auto mk = [](NodeId v, Discourse d) {
    Bubble b;
    b.attention = v;
    b.discourse = d;
    return b;
  };
  DialogHistory crit, off, half;
  for (NodeId c : t.critical) crit.bubbles.push_back(mk(c, Discourse::Sequence));
  EXPECT_EQ(rate_satisfaction(crit, t), 5);
  off.bubbles = {mk(g.id_of("head"), Discourse::Sequence), mk(g.id_of("torso"), Discourse::Sequence)};
  EXPECT_EQ(rate_satisfaction(off, t), 1);
  half.bubbles = {mk(t.critical[0], Discourse::Sequence), mk(g.id_of("head"), Discourse::Sequence)};
  EXPECT_EQ(rate_satisfaction(half, t), 3);
  // all critical, half repeats: 1 + round(4 * 1 * 0.5)
  DialogHistory rep;
  rep.bubbles = {mk(t.critical[0], Discourse::Sequence), mk(t.critical[0], Discourse::Recurrence)};
  EXPECT_EQ(rate_satisfaction(rep, t), 3);
  EXPECT_EQ(rate_satisfaction(DialogHistory{}, t), 1);
}
