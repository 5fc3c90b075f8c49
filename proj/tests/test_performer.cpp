#include <gtest/gtest.h>

#include "fixtures.hpp"

using namespace xtom;

namespace {

Scene first_scene() { return generate_scenes(fixture::body(), 1, 7, fixture::action().labels).front(); }

}  // namespace

TEST(Interpret, NoiselessRecoversEveryPart) {
  const auto& g = fixture::body();
  auto sc = first_scene();
  auto pg = interpret(sc, g, NoiseConfig{});
  EXPECT_EQ(pg.nodes.size(), sc.parts.size());
  for (const auto& [v, reg] : sc.parts) {
    ASSERT_TRUE(pg.contains(v));
    EXPECT_TRUE(pg.detection(v)->correct);
  }
  // terminals are found directly, everything above by binding
  for (NodeId v : pg.nodes)
    EXPECT_EQ(pg.detection(v)->process, g.is_terminal(v) ? Process::Alpha : Process::Beta);
  EXPECT_TRUE(is_subgraph(pg, g));
  EXPECT_TRUE(is_connected(pg, g));
  EXPECT_EQ(pg.attributes.at(g.root()).at("action"), sc.task_label);
}

TEST(Interpret, MissEverything) {
  NoiseConfig n;
  n.miss_rate = 1.0;
  EXPECT_TRUE(interpret(first_scene(), fixture::body(), n).empty());
}

TEST(Interpret, Deterministic) {
  NoiseConfig n{0.2, 0.1, 0.01};
  n.seed = 99;
  auto sc = first_scene();
  auto a = interpret(sc, fixture::body(), n);
  auto b = interpret(sc, fixture::body(), n);
  EXPECT_EQ(a.nodes, b.nodes);
  EXPECT_EQ(a.edges, b.edges);
  EXPECT_EQ(a.detections, b.detections);
}

// Re-walks the documented draw order: post-order terminals take a miss draw,
// then on detection a corruption draw and two normals; non-terminals bind when
// at least half their children are present; pass two fills annotated gaps
// under detected parents.
TEST(Interpret, MatchesReplayOfSamplingOrder) {
  const auto& g = fixture::body();
  auto sc = first_scene();
  for (std::uint64_t seed : {7u, 8u, 9u, 10u, 11u}) {
    NoiseConfig n;
    n.miss_rate = 0.2;
    n.seed = seed;
    auto pg = interpret(sc, g, n);

    Rng rng(seed);
    std::vector<bool> have(g.node_count(), false);
    auto pre = g.preorder();
    for (auto it = pre.rbegin(); it != pre.rend(); ++it) {
      NodeId v = *it;
      if (g.is_terminal(v)) {
        if (!sc.part(v)) continue;
        if (rng.uniform() < 0.2) continue;
        rng.uniform();
        rng.normal();
        rng.normal();
        have[v.value] = true;
      } else {
        double k = 0;
        for (NodeId c : g.children(v)) k += have[c.value] ? 1 : 0;
        have[v.value] = k > 0 && k / static_cast<double>(g.children(v).size()) >= 0.5;
      }
    }
    for (NodeId v : pre) {
      if (have[v.value] || !sc.part(v)) continue;
      for (NodeId p : g.parents(v))
        if (have[p.value]) {
          have[v.value] = true;
          break;
        }
    }
    std::set<NodeId> expect;
    for (std::uint32_t i = 0; i < g.node_count(); ++i)
      if (have[i]) expect.insert(NodeId{i});
    EXPECT_EQ(pg.nodes, expect) << "seed " << seed;
  }
}

TEST(AlphaDetect, Rules) {
  const auto& g = fixture::body();
  auto sc = first_scene();
  NodeId head = g.id_of("head");
  Rng rng(1);
  auto rec = alpha_detect(head, sc, NoiseConfig{}, g, rng);
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->region, *sc.part(head));
  EXPECT_EQ(rec->process, Process::Alpha);
  EXPECT_TRUE(rec->correct);
  EXPECT_DOUBLE_EQ(rec->confidence, 1.0);

  NoiseConfig miss;
  miss.miss_rate = 1.0;
  EXPECT_FALSE(alpha_detect(head, sc, miss, g, rng));

  NoiseConfig corrupt;
  corrupt.corrupt_rate = 1.0;
  auto bad = alpha_detect(head, sc, corrupt, g, rng);
  ASSERT_TRUE(bad);
  EXPECT_FALSE(bad->correct);
  EXPECT_NE(bad->region, *sc.part(head));

  EXPECT_XTOM_ERROR(alpha_detect(g.root(), sc, NoiseConfig{}, g, rng), ErrorCode::NotTerminal);
}

TEST(BetaInfer, Binding) {
  const auto& g = fixture::body();
  NodeId ub = g.id_of("upper-body");  // four children
  DetectionRecord a{Process::Alpha, 0.8, {0.3, 0.3, 0.05}, true};
  DetectionRecord b{Process::Alpha, 0.4, {0.5, 0.3, 0.05}, true};
  std::vector<std::optional<DetectionRecord>> all{a, b, a, b};
  auto rec = beta_infer(ub, g, all);
  ASSERT_TRUE(rec);
  EXPECT_EQ(rec->process, Process::Beta);
  for (const auto& r : all) EXPECT_TRUE(region_contains(rec->region, r->region, 1e-9));

  std::vector<std::optional<DetectionRecord>> none(4);
  EXPECT_FALSE(beta_infer(ub, g, none));

  // 2 of 4 passes a 0.5 threshold, fails 0.6; confidence is the mean
  std::vector<std::optional<DetectionRecord>> half{a, b, std::nullopt, std::nullopt};
  auto h = beta_infer(ub, g, half, 0.5);
  ASSERT_TRUE(h);
  EXPECT_DOUBLE_EQ(h->confidence, 0.6);
  EXPECT_FALSE(beta_infer(ub, g, half, 0.6));

  // one wrong child makes the binding wrong
  DetectionRecord w = b;
  w.correct = false;
  std::vector<std::optional<DetectionRecord>> mixed{a, w, a, a};
  EXPECT_FALSE(beta_infer(ub, g, mixed)->correct);

  EXPECT_XTOM_ERROR(beta_infer(g.id_of("head"), g, none), ErrorCode::NoChildren);
}

TEST(BetaInfer, ThreeOfThreeAndTwoOfThree) {
  auto g = load_grammar("node r AND r\nnode a TERM a\nnode b TERM b\nnode c TERM c\n"
                        "edge r a decomp\nedge r b decomp\nedge r c decomp\n");
  DetectionRecord x{Process::Alpha, 0.9, {0.2, 0.2, 0.1}, true};
  DetectionRecord y{Process::Alpha, 0.5, {0.6, 0.6, 0.1}, true};
  DetectionRecord z{Process::Alpha, 0.7, {0.4, 0.8, 0.1}, true};
  std::vector<std::optional<DetectionRecord>> all{x, y, z};
  auto rec = beta_infer(g.root(), g, all);
  ASSERT_TRUE(rec);
  for (const auto& r : all) EXPECT_TRUE(region_contains(rec->region, r->region, 1e-9));
  std::vector<std::optional<DetectionRecord>> two{x, std::nullopt, z};
  auto t = beta_infer(g.root(), g, two, 0.6);
  ASSERT_TRUE(t);
  EXPECT_DOUBLE_EQ(t->confidence, (0.9 + 0.7) / 2.0);
}

TEST(GammaInfer, Rules) {
  const auto& g = fixture::body();
  auto sc = first_scene();
  Rng rng(3);
  NoiseConfig n;
  n.gamma_discount = 0.8;
  DetectionRecord parent{Process::Beta, 1.0, {}, true};
  auto rec = gamma_infer(g.id_of("head"), parent, sc, n, g, rng);
  ASSERT_TRUE(rec);
  EXPECT_DOUBLE_EQ(rec->confidence, 0.8);
  EXPECT_EQ(rec->process, Process::Gamma);

  parent.correct = false;
  EXPECT_FALSE(gamma_infer(g.id_of("head"), parent, sc, n, g, rng)->correct);

  Scene bare = sc;
  bare.parts.erase(g.id_of("head"));
  EXPECT_FALSE(gamma_infer(g.id_of("head"), parent, bare, n, g, rng));
  EXPECT_XTOM_ERROR(gamma_infer(g.root(), parent, sc, n, g, rng), ErrorCode::NoParent);
}

TEST(Interpret, GammaNodesHangOffDetectedParents) {
  const auto& g = fixture::body();
  auto scenes = generate_scenes(g, 10, 21, fixture::action().labels);
  std::size_t seen = 0;
  for (std::uint64_t seed = 0; seed < 200; ++seed) {
    NoiseConfig n;
    n.miss_rate = 0.3;
    n.seed = seed;
    const Scene& sc = scenes[seed % scenes.size()];
    auto pg = interpret(sc, g, n);
    for (NodeId v : pg.nodes) {
      const auto* d = pg.detection(v);
      if (d->process != Process::Gamma) continue;
      ++seen;
      const DetectionRecord* parent = nullptr;
      for (NodeId p : g.parents(v))
        if (pg.contains(p)) {
          parent = pg.detection(p);
          break;
        }
      ASSERT_NE(parent, nullptr);
      EXPECT_EQ(d->region, *sc.part(v));
      EXPECT_DOUBLE_EQ(d->confidence, parent->confidence * n.gamma_discount);
    }
  }
  EXPECT_GT(seen, 0u);
}

TEST(Scenes, RoundTripAndNesting) {
  const auto& g = fixture::body();
  auto scenes = generate_scenes(g, 25, 4, fixture::action().labels, "t-");
  EXPECT_EQ(scenes.front().id, "t-0");
  auto again = load_scenes(format_scenes(scenes, g), g);
  ASSERT_EQ(again.size(), scenes.size());
  for (std::size_t k = 0; k < scenes.size(); ++k) {
    EXPECT_EQ(again[k].id, scenes[k].id);
    EXPECT_EQ(again[k].task_label, scenes[k].task_label);
    ASSERT_EQ(again[k].parts.size(), g.node_count());
    for (const auto& [v, r] : scenes[k].parts) {
      EXPECT_NEAR(again[k].parts.at(v).cx, r.cx, 1e-6);
      EXPECT_NEAR(again[k].parts.at(v).r, r.r, 1e-6);
      EXPECT_TRUE(r.valid());
      for (NodeId p : g.parents(v)) EXPECT_TRUE(region_contains(scenes[k].parts.at(p), r, 1e-9));
    }
  }
}

TEST(Scenes, ParseErrors) {
  const auto& g = fixture::body();
  EXPECT_XTOM_ERROR(load_scenes("part head 0.5 0.5 0.1\n", g), ErrorCode::SchemaError);
  EXPECT_XTOM_ERROR(load_scenes("scene s running\npart elbow 0.5 0.5 0.1\n", g), ErrorCode::DanglingRef);
  EXPECT_XTOM_ERROR(load_scenes("scene s running\npart head 0.5 0.5 0.9\n", g), ErrorCode::SchemaError);
  EXPECT_XTOM_ERROR(load_scenes("scene s running\npart head a b c\n", g), ErrorCode::SchemaError);
  auto s = load_scenes("scene s running img/s.png\npart head 0.5 0.5 0.1\n", g);
  EXPECT_EQ(s.front().image_ref, "img/s.png");
}

TEST(Noise, Validation) {
  NoiseConfig n;
  n.miss_rate = 1.5;
  EXPECT_XTOM_ERROR(n.validate(), ErrorCode::ConfigError);
}
