#include <gtest/gtest.h>

#include <cmath>

#include "fixtures.hpp"

using namespace xtom;

namespace {

std::vector<LossEpisode> random_batch(std::size_t input, std::size_t actions, Rng& r) {
  std::vector<LossEpisode> batch;
  for (int e = 0; e < 2; ++e) {
    LossEpisode le;
    for (int t = 0; t < 3 + e; ++t) {
      Vec x = Vec::Zero(static_cast<Eigen::Index>(input));
      for (Eigen::Index k = 0; k < x.size(); ++k) x[k] = r.uniform() < 0.3;
      le.states.push_back(x);
      std::vector<std::size_t> v;
      for (std::size_t a = 0; a < actions; ++a)
        if (r.uniform() < 0.7) v.push_back(a);
      if (v.empty()) v.push_back(0);
      le.valid.push_back(v);
      le.actions.push_back(v[r.index(v.size())]);
      le.policy_weight.push_back(2 * r.uniform() - 1);
      le.value_target.push_back(3 * r.normal());  // some targets land in the linear Huber zone
    }
    batch.push_back(le);
  }
  return batch;
}

Episode dummy_episode(double tag) {
  Experience e;
  e.state = Vec::Constant(1, tag);
  e.valid = {0};
  return {e};
}

}  // namespace

TEST(Encoding, DimensionAndBlocks) {
  auto w = fixture::world(3);
  const auto& g = w.grammar;
  auto cat = build_catalog(g, w.task("action"));
  EncodingLayout L(g, cat);
  // 2 (11 + 10) + 11 questions + 11 attention + 9
  EXPECT_EQ(L.dim(), 73u);

  auto pg = interpret(w.scenes[0], g, NoiseConfig{});
  auto belief = init_belief(g);
  for (double& p : belief.grasp) p = 1.0;
  DialogHistory h;
  Bubble b;
  b.attention = g.id_of("head");
  b.act = Process::Gamma;
  b.space = 2;
  b.scale = 1;
  h.bubbles.push_back(b);
  auto full = encode_state(pg, belief, "where-head", h, g, cat);
  EXPECT_EQ(full.bits.size(), 73);
  EXPECT_EQ(full.bits.segment(0, 21).sum(), 21.0);
  EXPECT_EQ(full.bits.segment(21, 21).sum(), 21.0);
  EXPECT_EQ(full.bits.segment(42, 11).sum(), 1.0);
  auto hist = full.bits.segment(53, 20);
  EXPECT_EQ(hist[g.id_of("head").value], 1.0);
  EXPECT_EQ(hist[11 + 2], 1.0);      // GAMMA
  EXPECT_EQ(hist[11 + 3 + 2], 1.0);  // space
  EXPECT_EQ(hist[11 + 6 + 1], 1.0);  // scale
  EXPECT_EQ(hist.sum(), 4.0);

  auto ablated = encode_state(pg, belief, "where-head", h, g, cat, true);
  EXPECT_EQ(ablated.bits.segment(21, 21).sum(), 0.0);
  Vec diff = full.bits - ablated.bits;
  diff.segment(21, 21).setZero();
  EXPECT_EQ(diff.cwiseAbs().sum(), 0.0);
}

TEST(MaskedSoftmax, ZeroOutsideValid) {
  Vec logits(5);
  logits << 1.0, 50.0, 2.0, -3.0, 0.5;
  auto p = masked_softmax(logits, {0, 2, 4});
  EXPECT_EQ(p[1], 0.0);
  EXPECT_EQ(p[3], 0.0);
  EXPECT_NEAR(p.sum(), 1.0, 1e-15);
  double z = std::exp(1.0) + std::exp(2.0) + std::exp(0.5);
  EXPECT_NEAR(p[2], std::exp(2.0) / z, 1e-15);
  EXPECT_XTOM_ERROR(masked_softmax(logits, {}), ErrorCode::NoValidAction);
}

TEST(SelectAction, GreedyAndBehaviorProbability) {
  Vec dist(4);
  dist << 0.1, 0.4, 0.4, 0.1;
  Rng rng(1);
  auto s = select_action(dist, {0, 1, 2, 3}, 0.0, rng, true);
  EXPECT_EQ(s.action, 1u);  // lowest index on ties
  EXPECT_DOUBLE_EQ(s.behavior_prob, 1.0);

  // eps = 1: uniform over valid, mu = 1/n
  std::array<int, 4> hits{};
  for (int k = 0; k < 4000; ++k) {
    auto e = select_action(dist, {0, 2, 3}, 1.0, rng, false);
    EXPECT_DOUBLE_EQ(e.behavior_prob, 1.0 / 3.0);
    ++hits[e.action];
  }
  EXPECT_EQ(hits[1], 0);
  for (int a : {0, 2, 3}) EXPECT_NEAR(hits[a] / 4000.0, 1.0 / 3.0, 0.03);

  auto mixed = select_action(dist, {0, 1, 2, 3}, 0.2, rng, false);
  EXPECT_NEAR(mixed.behavior_prob, 0.05 + 0.8 * dist[static_cast<Eigen::Index>(mixed.action)], 1e-15);
}

TEST(Reward, Formula) {
  // ss cf' sf' / C = 1 * 1 * 1 / 0.336
  EXPECT_NEAR(reward({1, 5, 5}, 0.336, 1), std::exp(1.0 / 0.336), 1e-9);
  EXPECT_NEAR(reward({1, 5, 5}, 0.336, 1), 19.612958, 1e-6);
  EXPECT_NEAR(reward({-1, 3, 3}, 0.5, 2), std::exp(-0.25 / 0.5) / 2.0, 1e-15);
  EXPECT_DOUBLE_EQ(reward({1, 1, 5}, 0.3, 1), 1.0);
  EXPECT_DOUBLE_EQ(reward({1, 5, 5}, 0.01, 4), std::exp(10.0) / 4.0);
  EXPECT_DOUBLE_EQ(reward({-1, 5, 5}, 0.01, 1), std::exp(-10.0));
  EXPECT_XTOM_ERROR(reward({0, 5, 5}, 1.0, 1), ErrorCode::Range);
  EXPECT_XTOM_ERROR(reward({1, 6, 5}, 1.0, 1), ErrorCode::Range);
  EXPECT_XTOM_ERROR(reward({1, 5, 5}, 0.0, 1), ErrorCode::ZeroCost);
  EXPECT_XTOM_ERROR(reward({1, 5, 5}, 1.0, 0), ErrorCode::Range);
}

TEST(Epsilon, LinearAnneal) {
  EXPECT_DOUBLE_EQ(anneal_epsilon(0, 100), 0.6);
  EXPECT_DOUBLE_EQ(anneal_epsilon(50, 100), 0.3);
  EXPECT_DOUBLE_EQ(anneal_epsilon(100, 100), 0.0);
  EXPECT_DOUBLE_EQ(anneal_epsilon(250, 100), 0.0);
  EXPECT_DOUBLE_EQ(anneal_epsilon(5, 0), 0.0);
}

TEST(Advantages, ReturnsToGo) {
  auto q = returns_to_go({1.0, 0.0, 2.0}, 0.5);
  EXPECT_DOUBLE_EQ(q[2], 2.0);
  EXPECT_DOUBLE_EQ(q[1], 1.0);
  EXPECT_DOUBLE_EQ(q[0], 1.5);
  auto a = advantages_from({1.0, 0.0, 2.0}, {0.5, 0.5, 0.5}, 0.5);
  EXPECT_DOUBLE_EQ(a[0], 1.0);
}

TEST(Loss, GradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    Rng r(1000 + seed);
    PolicyDims d{16, 6, 8};
    auto p = init_params(d, seed);
    auto batch = random_batch(d.input, d.actions, r);
    auto res = loss_and_gradient(p, batch, 0.5, 0.01);
    const double h = 1e-5;
    double worst = 0.0;
    for (Eigen::Index k = 0; k < p.theta().size(); ++k) {
      auto q = p;
      q.theta()[k] += h;
      double lp = loss_and_gradient(q, batch, 0.5, 0.01).loss;
      q.theta()[k] -= 2 * h;
      double lm = loss_and_gradient(q, batch, 0.5, 0.01).loss;
      double n = (lp - lm) / (2 * h), a = res.grad[k];
      worst = std::max(worst, std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-6}));
    }
    EXPECT_LT(worst, 1e-4) << "seed " << seed;
  }
}

TEST(Adam, ZeroLearningRateLeavesWeights) {
  auto p = init_params(PolicyDims{4, 3, 2}, 1);
  auto before = p.theta();
  AdamState s;
  Vec g = Vec::Constant(p.theta().size(), 100.0);
  double norm = adam_step(p, s, g, 0.0, 5.0);
  EXPECT_EQ(p.theta(), before);
  EXPECT_NEAR(norm, 100.0 * std::sqrt(static_cast<double>(g.size())), 1e-9);
  g[0] = std::nan("");
  EXPECT_XTOM_ERROR(adam_step(p, s, g, 1e-3, 5.0), ErrorCode::NonfiniteGradient);
}

TEST(Adam, FirstStepMovesByLearningRate) {
  auto p = init_params(PolicyDims{4, 3, 2}, 1);
  auto before = p.theta();
  AdamState s;
  Vec g = Vec::Constant(p.theta().size(), 42.0);  // clipped to 5, and bias-corrected Adam steps by lr
  adam_step(p, s, g, 1e-2, 5.0);
  EXPECT_NEAR((before - p.theta()).maxCoeff(), 1e-2, 1e-8);
  EXPECT_NEAR((before - p.theta()).minCoeff(), 1e-2, 1e-8);
}

TEST(ReplayPool, FifoEviction) {
  ReplayPool pool(3);
  for (int k = 0; k < 5; ++k) pool.add(dummy_episode(k));
  pool.add({});
  ASSERT_EQ(pool.size(), 3u);
  EXPECT_EQ(pool.at(0)[0].state[0], 2.0);
  EXPECT_EQ(pool.at(2)[0].state[0], 4.0);
}

TEST(TrainStep, PoolTooSmall) {
  auto p = init_params(PolicyDims{1, 2, 1}, 1);
  ReplayPool pool;
  AdamState adam;
  TrainConfig cfg;
  Rng rng(1);
  EXPECT_XTOM_ERROR(train_step(p, pool, adam, cfg, rng), ErrorCode::PoolTooSmall);
}

TEST(Checkpoint, RoundTripAndMismatch) {
  fixture::TempDir dir("ckpt");
  auto p = init_params(PolicyDims{7, 5, 9}, 4);
  save_checkpoint(dir / "a.ckpt", Checkpoint{p, 1234, true, "lr=0.001\n"});
  auto back = load_checkpoint(dir / "a.ckpt", 1234);
  EXPECT_EQ(back.params.theta(), p.theta());
  EXPECT_EQ(back.params.dims(), p.dims());
  EXPECT_TRUE(back.ablated);
  EXPECT_TRUE(std::filesystem::exists(dir / "a.ckpt.manifest"));
  EXPECT_XTOM_ERROR(load_checkpoint(dir / "a.ckpt", 99), ErrorCode::GrammarMismatch);
  EXPECT_XTOM_ERROR(load_checkpoint(dir / "missing.ckpt"), ErrorCode::CheckpointError);
  {
    std::ofstream junk(dir / "junk.ckpt");
    junk << "not a checkpoint";
  }
  EXPECT_XTOM_ERROR(load_checkpoint(dir / "junk.ckpt"), ErrorCode::CheckpointError);
}
