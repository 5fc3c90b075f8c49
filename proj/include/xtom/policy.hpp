#pragma once

// Explainer policy: state encoding, a two-layer LSTM with a masked softmax
// head over every (node, act, space, scale) bubble and a scalar value head,
// the per-turn reward, and actor-critic training from a replay pool.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "xtom/aog.hpp"
#include "xtom/belief.hpp"
#include "xtom/bubble.hpp"
#include "xtom/rng.hpp"
#include "xtom/simuser.hpp"

namespace xtom {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------- encoding

/// Block layout of the state vector:
///   [pg_m nodes | pg_m edges | belief nodes | belief edges | question | last bubble]
/// where the last-bubble block is attention one-hot, act, space and scale.
struct EncodingLayout {
  std::size_t nodes = 0;
  std::size_t edges = 0;
  std::size_t questions = 0;

  EncodingLayout() = default;
  EncodingLayout(const AogGrammar& g, const QuestionCatalog& cat)
      : nodes(g.node_count()), edges(g.edge_count()), questions(cat.questions.size()) {}

  std::size_t machine_offset() const { return 0; }
  std::size_t belief_offset() const { return nodes + edges; }
  std::size_t question_offset() const { return 2 * (nodes + edges); }
  std::size_t history_offset() const { return question_offset() + questions; }
  std::size_t history_width() const { return nodes + 9; }
  std::size_t dim() const { return history_offset() + history_width(); }
};

struct StateEncoding {
  Vec bits;
};

/// Indicator encoding of one turn. With `ablate_belief` the belief block is
/// left at zero, which is the ablated model's only difference.
inline StateEncoding encode_state(const ParseGraph& pg_m, const BeliefState& belief, const std::string& question,
                                  const DialogHistory& history, const AogGrammar& g, const QuestionCatalog& catalog,
                                  bool ablate_belief = false, double threshold = 0.5) {
  if (pg_m.grammar_hash != g.hash() || belief.grammar_hash != g.hash())
    fail(ErrorCode::GrammarMismatch, "encoding inputs come from different grammars");
  EncodingLayout L(g, catalog);
  StateEncoding s{Vec::Zero(static_cast<Eigen::Index>(L.dim()))};
  auto set = [&](std::size_t k) { s.bits[static_cast<Eigen::Index>(k)] = 1.0; };
  for (NodeId v : pg_m.nodes) set(L.machine_offset() + v.value);
  for (EdgeId e : pg_m.edges) set(L.machine_offset() + L.nodes + e.value);
  if (!ablate_belief) {
    ParseGraph u = project(belief, threshold, g);
    for (NodeId v : u.nodes) set(L.belief_offset() + v.value);
    for (EdgeId e : u.edges) set(L.belief_offset() + L.nodes + e.value);
  }
  for (std::size_t k = 0; k < catalog.questions.size(); ++k)
    if (catalog.questions[k].id == question) set(L.question_offset() + k);
  if (!history.bubbles.empty()) {
    const Bubble& b = history.bubbles.back();
    std::size_t h = L.history_offset();
    set(h + b.attention.value);
    set(h + L.nodes + static_cast<std::size_t>(b.act));
    set(h + L.nodes + 3 + static_cast<std::size_t>(b.space));
    set(h + L.nodes + 6 + static_cast<std::size_t>(b.scale));
  }
  return s;
}

// ------------------------------------------------------------------ params

struct PolicyDims {
  std::size_t input = 0;
  std::size_t hidden = 32;
  std::size_t actions = 0;

  bool operator==(const PolicyDims&) const = default;
};

/// All weights in one flat vector. Layer k of the LSTM has a 4H x (in + H)
/// matrix with gate blocks ordered input, forget, cell, output.
class PolicyParams {
 public:
  PolicyParams() = default;
  explicit PolicyParams(PolicyDims d) : dims_(d), theta_(Vec::Zero(static_cast<Eigen::Index>(count(d)))) {}

  static std::size_t count(const PolicyDims& d) {
    std::size_t h4 = 4 * d.hidden;
    return h4 * (d.input + d.hidden) + h4 + h4 * (2 * d.hidden) + h4 + d.actions * d.hidden + d.actions +
           d.hidden + 1;
  }

  const PolicyDims& dims() const { return dims_; }
  Vec& theta() { return theta_; }
  const Vec& theta() const { return theta_; }

  struct Offsets {
    std::size_t w1, b1, w2, b2, wp, bp, wv, bv;
  };

  Offsets offsets() const {
    Offsets o{};
    std::size_t h4 = 4 * dims_.hidden;
    o.w1 = 0;
    o.b1 = o.w1 + h4 * (dims_.input + dims_.hidden);
    o.w2 = o.b1 + h4;
    o.b2 = o.w2 + h4 * 2 * dims_.hidden;
    o.wp = o.b2 + h4;
    o.bp = o.wp + dims_.actions * dims_.hidden;
    o.wv = o.bp + dims_.actions;
    o.bv = o.wv + dims_.hidden;
    return o;
  }

  /// Shape manifest in storage order.
  std::vector<std::pair<std::string, std::pair<std::size_t, std::size_t>>> manifest() const {
    std::size_t h4 = 4 * dims_.hidden;
    return {{"lstm1.W", {h4, dims_.input + dims_.hidden}}, {"lstm1.b", {h4, 1}},
            {"lstm2.W", {h4, 2 * dims_.hidden}},           {"lstm2.b", {h4, 1}},
            {"policy.W", {dims_.actions, dims_.hidden}},   {"policy.b", {dims_.actions, 1}},
            {"value.W", {1, dims_.hidden}},                {"value.b", {1, 1}}};
  }

 private:
  PolicyDims dims_;
  Vec theta_;
};

/// Uniform(-a, a) with a = scale / sqrt(fan_in) for matrices; biases zero
/// except the forget gates, which start at 1.
inline PolicyParams init_params(const PolicyDims& d, std::uint64_t seed, double scale = 1.0) {
  PolicyParams p(d);
  Rng rng(seed);
  auto o = p.offsets();
  auto fill = [&](std::size_t off, std::size_t n, double fan_in) {
    double a = scale / std::sqrt(fan_in);
    for (std::size_t k = 0; k < n; ++k) p.theta()[static_cast<Eigen::Index>(off + k)] = a * (2.0 * rng.uniform() - 1.0);
  };
  std::size_t H = d.hidden, h4 = 4 * H;
  fill(o.w1, h4 * (d.input + H), static_cast<double>(d.input + H));
  fill(o.w2, h4 * 2 * H, static_cast<double>(2 * H));
  fill(o.wp, d.actions * H, static_cast<double>(H));
  fill(o.wv, H, static_cast<double>(H));
  for (std::size_t k = 0; k < H; ++k) {
    p.theta()[static_cast<Eigen::Index>(o.b1 + H + k)] = 1.0;
    p.theta()[static_cast<Eigen::Index>(o.b2 + H + k)] = 1.0;
  }
  return p;
}

// ----------------------------------------------------------------- forward

namespace detail {

using CMap = Eigen::Map<const Mat>;
using CVMap = Eigen::Map<const Vec>;
using MMap = Eigen::Map<Mat>;
using MVMap = Eigen::Map<Vec>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

struct LayerStep {
  Vec in;  // [u; h_prev]
  Vec i, f, g, o, c, c_prev, h;
};

struct Trace {
  std::vector<LayerStep> l1, l2;
  Mat logits;  // actions x T
  Vec values;  // T
};

inline LayerStep lstm_step(const Eigen::Ref<const Mat>& W, const Eigen::Ref<const Vec>& b, const Vec& u,
                           const Vec& h_prev, const Vec& c_prev) {
  auto H = h_prev.size();
  LayerStep s;
  s.in.resize(u.size() + H);
  s.in << u, h_prev;
  Vec a = W * s.in + b;
  s.i = a.segment(0, H).unaryExpr(&sigmoid);
  s.f = a.segment(H, H).unaryExpr(&sigmoid);
  s.g = a.segment(2 * H, H).array().tanh();
  s.o = a.segment(3 * H, H).unaryExpr(&sigmoid);
  s.c_prev = c_prev;
  s.c = s.f.cwiseProduct(c_prev) + s.i.cwiseProduct(s.g);
  s.h = s.o.cwiseProduct(s.c.array().tanh().matrix());
  return s;
}

inline Trace run(const PolicyParams& p, const std::vector<Vec>& xs) {
  const auto& d = p.dims();
  auto o = p.offsets();
  auto H = static_cast<Eigen::Index>(d.hidden), D = static_cast<Eigen::Index>(d.input),
       A = static_cast<Eigen::Index>(d.actions);
  const double* t = p.theta().data();
  CMap W1(t + o.w1, 4 * H, D + H), W2(t + o.w2, 4 * H, 2 * H), Wp(t + o.wp, A, H);
  CVMap b1(t + o.b1, 4 * H), b2(t + o.b2, 4 * H), bp(t + o.bp, A), wv(t + o.wv, H);
  double bv = t[o.bv];

  Trace tr;
  auto T = static_cast<Eigen::Index>(xs.size());
  tr.logits.resize(A, T);
  tr.values.resize(T);
  Vec h1 = Vec::Zero(H), c1 = Vec::Zero(H), h2 = Vec::Zero(H), c2 = Vec::Zero(H);
  for (Eigen::Index k = 0; k < T; ++k) {
    const Vec& x = xs[static_cast<std::size_t>(k)];
    if (x.size() != D) fail(ErrorCode::ConfigError, "state width does not match policy input");
    tr.l1.push_back(lstm_step(W1, b1, x, h1, c1));
    h1 = tr.l1.back().h;
    c1 = tr.l1.back().c;
    tr.l2.push_back(lstm_step(W2, b2, h1, h2, c2));
    h2 = tr.l2.back().h;
    c2 = tr.l2.back().c;
    tr.logits.col(k) = Wp * h2 + bp;
    tr.values[k] = wv.dot(h2) + bv;
  }
  return tr;
}

}  // namespace detail

/// Softmax restricted to `valid` (action indices); every other entry is 0.
inline Vec masked_softmax(const Eigen::Ref<const Vec>& logits, const std::vector<std::size_t>& valid) {
  if (valid.empty()) fail(ErrorCode::NoValidAction, "no valid action to choose from");
  Vec p = Vec::Zero(logits.size());
  double m = -std::numeric_limits<double>::infinity();
  for (auto a : valid) m = std::max(m, logits[static_cast<Eigen::Index>(a)]);
  double z = 0.0;
  for (auto a : valid) z += (p[static_cast<Eigen::Index>(a)] = std::exp(logits[static_cast<Eigen::Index>(a)] - m));
  for (auto a : valid) p[static_cast<Eigen::Index>(a)] /= z;
  return p;
}

struct PolicyOutput {
  Vec probs;
  double value = 0.0;
};

/// Distribution and value after reading the whole state sequence.
inline PolicyOutput forward(const PolicyParams& p, const std::vector<Vec>& states,
                            const std::vector<std::size_t>& valid) {
  if (states.empty()) fail(ErrorCode::NoValidAction, "empty state sequence");
  auto tr = detail::run(p, states);
  auto last = tr.logits.cols() - 1;
  return {masked_softmax(tr.logits.col(last), valid), tr.values[last]};
}

/// Action indices for a candidate list, optionally dropping candidates that
/// would be recurrences (kept if nothing else remains).
inline std::vector<std::size_t> valid_actions(const std::vector<Bubble>& candidates, const ActionSpace& space,
                                              const DialogHistory& history, bool forbid_recurrence = false) {
  std::vector<std::size_t> all, fresh;
  for (const auto& b : candidates) {
    all.push_back(space.index(b));
    if (classify_discourse(b, history) != Discourse::Recurrence) fresh.push_back(space.index(b));
  }
  std::sort(all.begin(), all.end());
  std::sort(fresh.begin(), fresh.end());
  return forbid_recurrence && !fresh.empty() ? fresh : all;
}

struct Selection {
  std::size_t action = 0;
  double behavior_prob = 1.0;
};

/// Epsilon-greedy over the valid set. One uniform draw decides exploration,
/// then one more draw picks uniformly (explore) or samples `dist` (training).
/// Deployment takes the argmax, lowest index on ties.
inline Selection select_action(const Vec& dist, const std::vector<std::size_t>& valid, double epsilon, Rng& rng,
                               bool greedy) {
  if (valid.empty()) fail(ErrorCode::NoValidAction, "no valid action to choose from");
  double n = static_cast<double>(valid.size());
  std::size_t best = valid.front();
  for (auto a : valid)
    if (dist[static_cast<Eigen::Index>(a)] > dist[static_cast<Eigen::Index>(best)] ||
        (dist[static_cast<Eigen::Index>(a)] == dist[static_cast<Eigen::Index>(best)] && a < best))
      best = a;
  auto mu = [&](std::size_t a) {
    double exploit = greedy ? (a == best ? 1.0 : 0.0) : dist[static_cast<Eigen::Index>(a)];
    return epsilon / n + (1.0 - epsilon) * exploit;
  };
  std::size_t a;
  if (rng.uniform() < epsilon) {
    a = valid[rng.index(valid.size())];
  } else if (greedy) {
    a = best;
  } else {
    double u = rng.uniform(), acc = 0.0;
    a = valid.back();
    for (auto k : valid) {
      acc += dist[static_cast<Eigen::Index>(k)];
      if (u < acc) {
        a = k;
        break;
      }
    }
  }
  return {a, mu(a)};
}

// ------------------------------------------------------------------ reward

struct FeedbackRecord {
  int ss = -1;
  int cf = 1;
  int sf = 1;

  void validate() const {
    if ((ss != 1 && ss != -1) || cf < 1 || cf > 5 || sf < 1 || sf > 5)
      fail(ErrorCode::Range, "feedback out of range (ss +-1, cf and sf 1..5)");
  }
};

inline constexpr double kRewardClamp = 10.0;

/// r_i = (1/i) exp(clamp(ss * cf' * sf' / C_i, -10, 10)), with cf' and sf'
/// the ratings rescaled from 1..5 onto 0..1.
inline double reward(const FeedbackRecord& fb, double cost, int turn) {
  fb.validate();
  if (turn < 1) fail(ErrorCode::Range, "turn must be at least 1");
  if (!(cost > 0.0)) fail(ErrorCode::ZeroCost, "dialog cost must be positive");
  double cf = (fb.cf - 1) / 4.0, sf = (fb.sf - 1) / 4.0;
  double x = std::clamp(fb.ss * cf * sf / cost, -kRewardClamp, kRewardClamp);
  return std::exp(x) / turn;
}

inline double anneal_epsilon(std::size_t step, std::size_t total, double start = 0.6) {
  if (total == 0) return 0.0;
  step = std::min(step, total);
  return start * (1.0 - static_cast<double>(step) / static_cast<double>(total));
}

// ---------------------------------------------------------------- training

struct Experience {
  Vec state;
  std::vector<std::size_t> valid;
  std::size_t action = 0;
  double behavior_prob = 1.0;
  double reward = 0.0;
  bool terminal = false;
  int turn = 1;
};

/// One logged episode; the next state of step t is step t+1's state.
using Episode = std::vector<Experience>;

struct TrainConfig {
  double lr = 1e-3;
  double gamma = 0.95;
  double entropy_bonus = 0.01;
  double value_coef = 0.5;
  double huber_delta = 1.0;  // value loss is quadratic within delta, linear beyond
  double is_truncation = 10.0;
  double grad_clip = 5.0;
  std::size_t batch_episodes = 32;
  std::size_t pool_capacity = 5000;
  std::size_t updates_per_round = 100;
  bool normalize_advantages = true;  // standardize A within each batch
};

struct TrainingMetrics {
  double objective = 0.0;
  double mean_advantage = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  double grad_norm = 0.0;
  double epsilon = 0.0;
};

/// Discounted return-to-go minus the value estimate.
inline std::vector<double> advantages_from(const std::vector<double>& rewards, const std::vector<double>& values,
                                           double gamma) {
  std::vector<double> out(rewards.size());
  double q = 0.0;
  for (std::size_t k = rewards.size(); k-- > 0;) {
    q = rewards[k] + gamma * q;
    out[k] = q - values.at(k);
  }
  return out;
}

inline std::vector<double> returns_to_go(const std::vector<double>& rewards, double gamma) {
  return advantages_from(rewards, std::vector<double>(rewards.size(), 0.0), gamma);
}

struct StepTargets {
  std::vector<double> advantage;   // A = Q - V
  std::vector<double> q;           // return-to-go
  std::vector<double> is_weight;   // min(c, pi/mu)
};

/// Advantages for one whole episode under the current parameters.
inline StepTargets compute_advantages(const Episode& ep, const PolicyParams& p, const TrainConfig& cfg) {
  std::vector<Vec> xs;
  std::vector<double> rewards;
  for (const auto& e : ep) {
    xs.push_back(e.state);
    rewards.push_back(e.reward);
  }
  auto tr = detail::run(p, xs);
  StepTargets t;
  std::vector<double> values(tr.values.data(), tr.values.data() + tr.values.size());
  t.q = returns_to_go(rewards, cfg.gamma);
  t.advantage = advantages_from(rewards, values, cfg.gamma);
  for (std::size_t k = 0; k < ep.size(); ++k) {
    Vec pi = masked_softmax(tr.logits.col(static_cast<Eigen::Index>(k)), ep[k].valid);
    double ratio = pi[static_cast<Eigen::Index>(ep[k].action)] / ep[k].behavior_prob;
    t.is_weight.push_back(std::min(cfg.is_truncation, ratio));
  }
  return t;
}

/// Episode with frozen per-step targets; what the loss differentiates.
struct LossEpisode {
  std::vector<Vec> states;
  std::vector<std::vector<std::size_t>> valid;
  std::vector<std::size_t> actions;
  std::vector<double> policy_weight;  // rho * A
  std::vector<double> value_target;   // Q
};

struct LossResult {
  double loss = 0.0;
  double policy_term = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
  Vec grad;
};

/// Mean over all steps of
///   -w log pi(a|s) + value_coef * huber(Q - V) - entropy_bonus * H(pi),
/// where huber(e) = e^2/2 for |e| <= delta and delta (|e| - delta/2) beyond,
/// with its exact gradient by backpropagation through time. Returns reach
/// e^10, so a bounded critic gradient keeps the shared LSTM from being driven
/// by the value regression alone.
inline LossResult loss_and_gradient(const PolicyParams& p, const std::vector<LossEpisode>& batch,
                                    double value_coef, double entropy_bonus, double huber_delta = 1.0) {
  const auto& d = p.dims();
  auto o = p.offsets();
  auto H = static_cast<Eigen::Index>(d.hidden), D = static_cast<Eigen::Index>(d.input),
       A = static_cast<Eigen::Index>(d.actions);
  const double* t = p.theta().data();
  detail::CMap W1(t + o.w1, 4 * H, D + H), W2(t + o.w2, 4 * H, 2 * H), Wp(t + o.wp, A, H);
  detail::CVMap wv(t + o.wv, H);

  LossResult out;
  out.grad = Vec::Zero(p.theta().size());
  double* g = out.grad.data();
  detail::MMap gW1(g + o.w1, 4 * H, D + H), gW2(g + o.w2, 4 * H, 2 * H), gWp(g + o.wp, A, H);
  detail::MVMap gb1(g + o.b1, 4 * H), gb2(g + o.b2, 4 * H), gbp(g + o.bp, A), gwv(g + o.wv, H);
  double& gbv = g[o.bv];

  std::size_t steps = 0;
  for (const auto& ep : batch) steps += ep.states.size();
  if (steps == 0) return out;
  double scale = 1.0 / static_cast<double>(steps);

  auto back_layer = [&](const detail::LayerStep& s, const Vec& dh, Vec& dc, const Eigen::Ref<const Mat>& W,
                        detail::MMap& gW, detail::MVMap& gb, Eigen::Index in_width, Vec& du, Vec& dh_prev) {
    Vec tc = s.c.array().tanh();
    Vec d_o = dh.cwiseProduct(tc);
    dc += dh.cwiseProduct(s.o).cwiseProduct((1.0 - tc.array().square()).matrix());
    Vec d_i = dc.cwiseProduct(s.g), d_g = dc.cwiseProduct(s.i), d_f = dc.cwiseProduct(s.c_prev);
    Vec da(4 * H);
    da.segment(0, H) = d_i.cwiseProduct(s.i.cwiseProduct((1.0 - s.i.array()).matrix()));
    da.segment(H, H) = d_f.cwiseProduct(s.f.cwiseProduct((1.0 - s.f.array()).matrix()));
    da.segment(2 * H, H) = d_g.cwiseProduct((1.0 - s.g.array().square()).matrix());
    da.segment(3 * H, H) = d_o.cwiseProduct(s.o.cwiseProduct((1.0 - s.o.array()).matrix()));
    dc = dc.cwiseProduct(s.f);
    gW.noalias() += da * s.in.transpose();
    gb += da;
    Vec dv = W.transpose() * da;
    du = dv.head(in_width);
    dh_prev = dv.tail(H);
  };

  for (const auto& ep : batch) {
    auto tr = detail::run(p, ep.states);
    auto T = static_cast<Eigen::Index>(ep.states.size());
    Mat dlogits = Mat::Zero(A, T);
    Vec dvalue = Vec::Zero(T);
    for (Eigen::Index k = 0; k < T; ++k) {
      auto uk = static_cast<std::size_t>(k);
      Vec pi = masked_softmax(tr.logits.col(k), ep.valid[uk]);
      double ent = 0.0;
      for (auto a : ep.valid[uk]) {
        double q = pi[static_cast<Eigen::Index>(a)];
        if (q > 0.0) ent -= q * std::log(q);
      }
      auto act = static_cast<Eigen::Index>(ep.actions[uk]);
      double w = ep.policy_weight[uk];
      double logp = std::log(pi[act]);
      double err = tr.values[k] - ep.value_target[uk];
      out.policy_term += -w * logp * scale;
      double ae = std::abs(err);
      out.value_loss += (ae <= huber_delta ? 0.5 * err * err : huber_delta * (ae - 0.5 * huber_delta)) * scale;
      out.entropy += ent * scale;
      for (auto a : ep.valid[uk]) {
        auto ai = static_cast<Eigen::Index>(a);
        double q = pi[ai];
        double dpol = w * (q - (ai == act ? 1.0 : 0.0));
        double dent = q > 0.0 ? entropy_bonus * q * (std::log(q) + ent) : 0.0;
        dlogits(ai, k) = (dpol + dent) * scale;
      }
      dvalue[k] = value_coef * std::clamp(err, -huber_delta, huber_delta) * scale;
    }

    Vec dh1_next = Vec::Zero(H), dc1 = Vec::Zero(H), dh2_next = Vec::Zero(H), dc2 = Vec::Zero(H);
    for (Eigen::Index k = T; k-- > 0;) {
      const auto& s2 = tr.l2[static_cast<std::size_t>(k)];
      const auto& s1 = tr.l1[static_cast<std::size_t>(k)];
      gWp.noalias() += dlogits.col(k) * s2.h.transpose();
      gbp += dlogits.col(k);
      gwv += dvalue[k] * s2.h;
      gbv += dvalue[k];
      Vec dh2 = Wp.transpose() * dlogits.col(k) + dvalue[k] * wv + dh2_next;
      Vec du2, dh1_from2;
      back_layer(s2, dh2, dc2, W2, gW2, gb2, H, du2, dh2_next);
      Vec dh1 = du2 + dh1_next;
      Vec dx;
      back_layer(s1, dh1, dc1, W1, gW1, gb1, D, dx, dh1_next);
    }
  }
  out.loss = out.policy_term + value_coef * out.value_loss - entropy_bonus * out.entropy;
  return out;
}

struct AdamState {
  Vec m, v;
  std::size_t t = 0;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
};

/// Clips each coordinate to [-clip, clip], then takes one Adam step.
/// Returns the pre-clip gradient norm.
inline double adam_step(PolicyParams& p, AdamState& s, Vec grad, double lr, double clip) {
  if (!grad.allFinite()) fail(ErrorCode::NonfiniteGradient, "gradient has non-finite entries");
  double norm = grad.norm();
  grad = grad.cwiseMax(-clip).cwiseMin(clip);
  if (s.m.size() != grad.size()) {
    s.m = Vec::Zero(grad.size());
    s.v = Vec::Zero(grad.size());
    s.t = 0;
  }
  ++s.t;
  s.m = s.beta1 * s.m + (1.0 - s.beta1) * grad;
  s.v = s.beta2 * s.v + (1.0 - s.beta2) * grad.cwiseProduct(grad);
  double c1 = 1.0 - std::pow(s.beta1, static_cast<double>(s.t));
  double c2 = 1.0 - std::pow(s.beta2, static_cast<double>(s.t));
  if (lr != 0.0)
    p.theta().array() -= lr * (s.m.array() / c1) / ((s.v.array() / c2).sqrt() + s.eps);
  return norm;
}

/// Bounded FIFO of whole episodes.
class ReplayPool {
 public:
  explicit ReplayPool(std::size_t capacity = 5000) : capacity_(capacity) {}

  void add(Episode ep) {
    if (ep.empty()) return;
    episodes_.push_back(std::move(ep));
    while (episodes_.size() > capacity_) episodes_.pop_front();
  }

  std::size_t size() const { return episodes_.size(); }
  std::size_t capacity() const { return capacity_; }
  const Episode& at(std::size_t k) const { return episodes_.at(k); }

 private:
  std::size_t capacity_;
  std::deque<Episode> episodes_;
};

/// One actor-critic update on a batch sampled from the pool (one index draw
/// per episode, with replacement).
inline TrainingMetrics train_step(PolicyParams& p, const ReplayPool& pool, AdamState& adam,
                                  const TrainConfig& cfg, Rng& rng) {
  if (pool.size() < cfg.batch_episodes || cfg.batch_episodes == 0)
    fail(ErrorCode::PoolTooSmall, "replay pool holds fewer episodes than one batch");
  std::vector<LossEpisode> batch;
  std::vector<StepTargets> targets;
  double adv_sum = 0.0, adv_sq = 0.0, objective = 0.0;
  std::size_t steps = 0;
  for (std::size_t b = 0; b < cfg.batch_episodes; ++b) {
    const Episode& ep = pool.at(rng.index(pool.size()));
    targets.push_back(compute_advantages(ep, p, cfg));
    const auto& tg = targets.back();
    LossEpisode le;
    for (std::size_t k = 0; k < ep.size(); ++k) {
      le.states.push_back(ep[k].state);
      le.valid.push_back(ep[k].valid);
      le.actions.push_back(ep[k].action);
      le.value_target.push_back(tg.q[k]);
      adv_sum += tg.advantage[k];
      adv_sq += tg.advantage[k] * tg.advantage[k];
      objective += tg.is_weight[k] * tg.q[k];
      ++steps;
    }
    batch.push_back(std::move(le));
  }
  // Advantages are optionally standardized over the batch before the
  // importance weight is applied, so the baseline is removed first.
  double n_steps = static_cast<double>(std::max<std::size_t>(steps, 1));
  double a_mean = adv_sum / n_steps;
  double a_sd = std::sqrt(std::max(adv_sq / n_steps - a_mean * a_mean, 0.0));
  bool standardize = cfg.normalize_advantages && steps > 1 && a_sd > 1e-12;
  for (std::size_t b = 0; b < batch.size(); ++b)
    for (std::size_t k = 0; k < targets[b].advantage.size(); ++k) {
      double a = targets[b].advantage[k];
      if (standardize) a = (a - a_mean) / a_sd;
      batch[b].policy_weight.push_back(targets[b].is_weight[k] * a);
    }
  auto res = loss_and_gradient(p, batch, cfg.value_coef, cfg.entropy_bonus, cfg.huber_delta);
  TrainingMetrics m;
  m.grad_norm = adam_step(p, adam, res.grad, cfg.lr, cfg.grad_clip);
  double n = static_cast<double>(std::max<std::size_t>(steps, 1));
  m.objective = objective / n;
  m.mean_advantage = adv_sum / n;
  m.value_loss = res.value_loss;
  m.entropy = res.entropy;
  if (!std::isfinite(m.objective) || !std::isfinite(m.value_loss) || !std::isfinite(m.entropy))
    fail(ErrorCode::NonfiniteGradient, "training metrics are not finite");
  return m;
}

// -------------------------------------------------------------- checkpoint

inline constexpr char kCheckpointMagic[8] = {'X', 'T', 'O', 'M', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  PolicyParams params;
  std::uint64_t grammar_hash = 0;
  bool ablated = false;
  std::string config;  // free-form key=value lines kept in the manifest
};

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorCode::CheckpointError, "cannot write checkpoint '" + path + "'");
  auto put = [&](const auto& x) { out.write(reinterpret_cast<const char*>(&x), sizeof(x)); };
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put(kCheckpointVersion);
  put(ck.grammar_hash);
  const auto& d = ck.params.dims();
  put(static_cast<std::uint64_t>(d.input));
  put(static_cast<std::uint64_t>(d.hidden));
  put(static_cast<std::uint64_t>(d.actions));
  put(static_cast<std::uint8_t>(ck.ablated ? 1 : 0));
  auto man = ck.params.manifest();
  put(static_cast<std::uint32_t>(man.size()));
  for (const auto& [name, shape] : man) {
    put(static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put(static_cast<std::uint64_t>(shape.first));
    put(static_cast<std::uint64_t>(shape.second));
  }
  put(static_cast<std::uint64_t>(ck.params.theta().size()));
  out.write(reinterpret_cast<const char*>(ck.params.theta().data()),
            static_cast<std::streamsize>(sizeof(double) * static_cast<std::size_t>(ck.params.theta().size())));
  if (!out) fail(ErrorCode::CheckpointError, "short write on '" + path + "'");

  std::ofstream side(path + ".manifest", std::ios::trunc);
  side << "format xtom-checkpoint " << kCheckpointVersion << '\n'
       << "grammar " << ck.grammar_hash << '\n'
       << "input " << d.input << '\n'
       << "hidden " << d.hidden << '\n'
       << "actions " << d.actions << '\n'
       << "ablated " << (ck.ablated ? 1 : 0) << '\n';
  for (const auto& [name, shape] : man) side << "tensor " << name << ' ' << shape.first << 'x' << shape.second << '\n';
  side << ck.config;
}

/// Loads a checkpoint; a nonzero `expected_grammar` must match the stored hash.
inline Checkpoint load_checkpoint(const std::string& path, std::uint64_t expected_grammar = 0) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorCode::CheckpointError, "cannot open checkpoint '" + path + "'");
  auto get = [&](auto& x) {
    in.read(reinterpret_cast<char*>(&x), sizeof(x));
    if (!in) fail(ErrorCode::CheckpointError, "truncated checkpoint '" + path + "'");
  };
  char magic[8];
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0) fail(ErrorCode::CheckpointError, "not a checkpoint");
  std::uint32_t version;
  get(version);
  if (version != kCheckpointVersion) fail(ErrorCode::CheckpointError, "unsupported checkpoint version");
  Checkpoint ck;
  get(ck.grammar_hash);
  if (expected_grammar != 0 && ck.grammar_hash != expected_grammar)
    fail(ErrorCode::GrammarMismatch, "checkpoint was trained on another grammar");
  std::uint64_t din, dh, da;
  std::uint8_t abl;
  get(din);
  get(dh);
  get(da);
  get(abl);
  ck.ablated = abl != 0;
  PolicyParams p(PolicyDims{din, dh, da});
  std::uint32_t tensors;
  get(tensors);
  auto expect = p.manifest();
  if (tensors != expect.size()) fail(ErrorCode::CheckpointError, "tensor manifest mismatch");
  for (const auto& [name, shape] : expect) {
    std::uint32_t len;
    get(len);
    std::string nm(len, '\0');
    in.read(nm.data(), len);
    std::uint64_t r, c;
    get(r);
    get(c);
    if (nm != name || r != shape.first || c != shape.second)
      fail(ErrorCode::CheckpointError, "tensor manifest mismatch at '" + name + "'");
  }
  std::uint64_t count;
  get(count);
  if (count != static_cast<std::uint64_t>(p.theta().size())) fail(ErrorCode::CheckpointError, "tensor size mismatch");
  in.read(reinterpret_cast<char*>(p.theta().data()), static_cast<std::streamsize>(sizeof(double) * count));
  if (!in) fail(ErrorCode::CheckpointError, "truncated checkpoint '" + path + "'");
  if (!p.theta().allFinite()) fail(ErrorCode::CheckpointError, "checkpoint holds non-finite weights");
  ck.params = std::move(p);
  return ck;
}

}  // namespace xtom
