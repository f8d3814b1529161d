#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>

#include "gcvae/params.hpp"
#include "gcvae/vae_net.hpp"

using namespace gcvae;

namespace {

NetConfig small_config(Mode mode = Mode::continuous, DecoderStyle style = DecoderStyle::node_centric) {
  NetConfig c;
  c.p = 3;
  c.d = 1;
  c.T = 20;
  c.n_hid = 8;
  c.mode = mode;
  c.decoder_style = style;
  return c;
}

void zero_biases(ParamStore& ps) {
  for (auto& [name, t] : ps)
    if (name.size() >= 2 && name.substr(name.size() - 2) == "/b") t = Tensor(t.shape());
}

void zero_all(ParamStore& ps, const std::string& prefix) {
  for (auto& [name, t] : ps)
    if (name.rfind(prefix, 0) == 0) t = Tensor(t.shape());
}

Tensor encode_mu(const ParamStore& ps, const NetConfig& c, const Tensor& w) {
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const EntityDist d = encode(bind, c, w);
  return c.mode == Mode::continuous ? d.gauss.mu.value() : d.bern.delta.value();
}

Tensor predict_mean(const ParamStore& ps, const NetConfig& c, const Tensor& lags, const Tensor& z) {
  Tape tape;
  ParamBinder bind(tape, ps, false);
  return decode(bind, c, lags, tape.constant(z)).mu.value();
}

}  // namespace

TEST(EmbedNodes, ShapeContract) {
  const NetConfig c = small_config();
  Rng rng = make_rng(1);
  const ParamStore ps = init_params(c, rng);
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Var e = embed_nodes(bind, c, normal_tensor(rng, {20, 3, 1}));
  EXPECT_EQ(e.shape(), (Shape{1, 3, 8}));
}

TEST(EmbedNodes, ZeroWindowZeroBiases) {
  const NetConfig c = small_config();
  Rng rng = make_rng(2);
  ParamStore ps = init_params(c, rng);
  zero_biases(ps);
  Tape tape;
  ParamBinder bind(tape, ps, false);
  EXPECT_EQ(max_abs(embed_nodes(bind, c, Tensor({20, 3, 1})).value()), 0.0);
}

TEST(EmbedNodes, IdenticalNodesIdenticalRows) {
  const NetConfig c = small_config();
  Rng rng = make_rng(3);
  const ParamStore ps = init_params(c, rng);
  Tensor w = normal_tensor(rng, {20, 3, 1});
  for (std::size_t t = 0; t < 20; ++t) w.at({t, 2, 0}) = w.at({t, 0, 0});
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Tensor e = embed_nodes(bind, c, w).value();
  for (std::size_t h = 0; h < 8; ++h) EXPECT_EQ(e.at({0, 0, h}), e.at({0, 2, h}));
}

TEST(EmbedNodes, ShapeMismatchIsConfigError) {
  const NetConfig c = small_config();
  Rng rng = make_rng(4);
  const ParamStore ps = init_params(c, rng);
  Tape tape;
  ParamBinder bind(tape, ps, false);
  EXPECT_THROW(embed_nodes(bind, c, Tensor({19, 3, 1})), ConfigError);
  EXPECT_THROW(embed_nodes(bind, c, Tensor({20, 4, 1})), ConfigError);
}

TEST(EmbedNodes, EvalModeDeterministicTrainModeDrops) {
  NetConfig c = small_config();
  c.dropout = 0.5;
  Rng rng = make_rng(5);
  const ParamStore ps = init_params(c, rng);
  const Tensor w = normal_tensor(rng, {20, 3, 1});
  auto run = [&](Rng* r) {
    Tape tape;
    ParamBinder bind(tape, ps, false);
    return embed_nodes(bind, c, w, r).value();
  };
  EXPECT_EQ(run(nullptr), run(nullptr));
  Rng drop = make_rng(6);
  EXPECT_FALSE(run(&drop) == run(nullptr));
}

TEST(MessagePass, OrderedPairsIncludeDiagonal) {
  NetConfig c = small_config();
  c.p = 2;
  Rng rng = make_rng(7);
  const ParamStore ps = init_params(c, rng);
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Var h = message_pass(bind, tape.constant(normal_tensor(rng, {1, 2, 8})));
  EXPECT_EQ(h.shape(), (Shape{1, 2, 2, 8}));
}

TEST(MessagePass, PermutationEquivariance) {
  const NetConfig c = small_config();
  Rng rng = make_rng(8);
  const ParamStore ps = init_params(c, rng);
  const Tensor w = normal_tensor(rng, {20, 3, 1});
  const std::size_t perm[3] = {2, 0, 1};
  Tensor wp(w.shape());
  for (std::size_t t = 0; t < 20; ++t)
    for (std::size_t i = 0; i < 3; ++i) wp.at({t, i, 0}) = w.at({t, perm[i], 0});
  const Tensor a = encode_mu(ps, c, w);
  const Tensor b = encode_mu(ps, c, wp);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(b.at({0, i, j}), a.at({0, perm[i], perm[j]}), 1e-12);
}

TEST(MessagePass, EqualEmbeddingsEqualEdges) {
  const NetConfig c = small_config();
  Rng rng = make_rng(9);
  const ParamStore ps = init_params(c, rng);
  Tensor emb({1, 3, 8});
  const Tensor row = normal_tensor(rng, {8});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t h = 0; h < 8; ++h) emb.at({0, i, h}) = row[h];
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Tensor h = message_pass(bind, tape.constant(emb)).value();
  for (std::size_t e = 1; e < 9; ++e)
    for (std::size_t k = 0; k < 8; ++k) EXPECT_NEAR(h[e * 8 + k], h[k], 1e-12);
}

TEST(EmitEntityDist, ZeroHeads) {
  NetConfig c = small_config();
  Rng rng = make_rng(10);
  ParamStore ps = init_params(c, rng);
  zero_all(ps, "enc/mu");
  zero_all(ps, "enc/var");
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const EntityDist d = emit_entity_dist(bind, c, tape.constant(Tensor({1, 3, 3, 8})));
  EXPECT_EQ(d.gauss.mu.shape(), (Shape{1, 3, 3}));
  EXPECT_EQ(max_abs(d.gauss.mu.value()), 0.0);
  for (double v : d.gauss.var.value().data()) EXPECT_NEAR(v, std::log(2.0), 1e-15);
}

TEST(EmitEntityDist, BinaryLogitZero) {
  NetConfig c = small_config(Mode::binary);
  Rng rng = make_rng(11);
  ParamStore ps = init_params(c, rng);
  zero_all(ps, "enc/delta/fc2");
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const EntityDist d = emit_entity_dist(bind, c, tape.constant(normal_tensor(rng, {1, 3, 3, 8})));
  EXPECT_EQ(d.bern.delta.shape(), (Shape{1, 3, 3}));
  for (double v : d.bern.delta.value().data()) EXPECT_EQ(v, 0.5);
}

TEST(EmitEntityDist, FloorsUnderExtremeInputs) {
  for (Mode mode : {Mode::continuous, Mode::binary}) {
    const NetConfig c = small_config(mode);
    Rng rng = make_rng(12);
    const ParamStore ps = init_params(c, rng);
    Tape tape;
    ParamBinder bind(tape, ps, false);
    const EntityDist d = emit_entity_dist(bind, c, tape.constant(normal_tensor(rng, {4, 3, 3, 8}, 0.0, 1e4)));
    if (mode == Mode::continuous) {
      for (double v : d.gauss.var.value().data()) EXPECT_GE(v, kVarFloor);
    } else {
      for (double v : d.bern.delta.value().data()) {
        EXPECT_GE(v, kProbEps);
        EXPECT_LE(v, 1.0 - kProbEps);
      }
    }
  }
}

TEST(EntityToCommon, ContinuousZeroSpreadHitsFloor) {
  const Tensor s({3, 1}, 1.0);
  const auto d = entity_to_common_gaussian(s, 0);
  EXPECT_EQ(d.mu.item(), 1.0);
  EXPECT_EQ(d.var.item(), kVarFloor);
}

TEST(EntityToCommon, PopulationSpread) {
  const auto d = entity_to_common_gaussian(Tensor({2, 1}, {0.0, 2.0}), 0);
  EXPECT_DOUBLE_EQ(d.mu.item(), 1.0);
  EXPECT_DOUBLE_EQ(std::sqrt(d.var.item()), 1.0);
}

TEST(EntityToCommon, UniformMomentsGiveFlatBeta) {
  // Two-point samples with mean 0.5 and variance 1/12.
  const double h = std::sqrt(1.0 / 12.0);
  const auto d = entity_to_common_beta(Tensor({2, 1}, {0.5 - h, 0.5 + h}), 0);
  EXPECT_NEAR(d.alpha.item(), 1.0, 1e-12);
  EXPECT_NEAR(d.beta.item(), 1.0, 1e-12);
}

TEST(EntityToCommon, WideSpreadKeepsMeanWithoutUShape) {
  // hard 0/1 samples: v = m(1-m) would give k = 0
  const auto d = entity_to_common_beta(Tensor({4, 1}, {0.0, 1.0, 1.0, 1.0}), 0);
  EXPECT_NEAR(d.beta.item(), 1.0, 1e-12);
  EXPECT_NEAR(d.alpha.item() / (d.alpha.item() + d.beta.item()), 0.75, 1e-12);
  const auto e = entity_to_common_beta(Tensor({2, 1}, {0.2, 0.2}), 0);
  EXPECT_NEAR(e.alpha.item() / (e.alpha.item() + e.beta.item()), 0.2, 1e-9);
  EXPECT_GE(e.alpha.item(), 1.0);
}

TEST(EntityToCommon, SingleEntityRejected) {
  EXPECT_THROW(entity_to_common_gaussian(Tensor({1, 2, 2}), 0), ConfigError);
  EXPECT_THROW(entity_to_common_beta(Tensor({1, 2, 2}), 0), ConfigError);
}

TEST(EntityToCommon, OrderInvariant) {
  Rng rng = make_rng(13);
  const Tensor s = uniform_tensor(rng, {4, 3, 3}, 0.01, 0.99);
  Tensor r(s.shape());
  const std::size_t order[4] = {3, 1, 0, 2};
  for (std::size_t m = 0; m < 4; ++m) std::copy_n(s.data().data() + order[m] * 9, 9, r.data().data() + m * 9);
  const auto a = entity_to_common_beta(s, 0), b = entity_to_common_beta(r, 0);
  EXPECT_LT(max_abs(a.alpha - b.alpha), 1e-12);
  EXPECT_LT(max_abs(a.beta - b.beta), 1e-12);
  const auto g = entity_to_common_gaussian(s, 0), h = entity_to_common_gaussian(r, 0);
  EXPECT_LT(max_abs(g.mu - h.mu), 1e-12);
  EXPECT_LT(max_abs(g.var - h.var), 1e-12);
}

TEST(CommonToEntity, IdentityMap) {
  const auto g = common_to_entity_gaussian(Tensor::scalar(0.0));
  EXPECT_EQ(g.mu.item(), 0.0);
  EXPECT_EQ(g.var.item(), 1.0);
  EXPECT_EQ(common_to_entity_bernoulli(Tensor::scalar(0.999)).delta.item(), 0.999);
}

TEST(CommonToEntity, OmegaOneIgnoresCommonSample) {
  const EdgeGaussian<Tensor> q{Tensor::scalar(0.3), Tensor::scalar(0.2)};
  for (double zbar : {-5.0, 0.0, 7.0}) {
    const auto adj = conjugacy_adjust_gaussian(q, common_to_entity_gaussian(Tensor::scalar(zbar)), 1.0);
    EXPECT_EQ(adj.mu.item(), 0.3);
    EXPECT_EQ(adj.var.item(), 0.2);
  }
}

TEST(LagPreprocess, PairCounts) {
  EXPECT_EQ(lag_preprocess(Tensor({20, 2, 1}), 1).targets.dim(1), 19u);
  EXPECT_EQ(lag_preprocess(Tensor({20, 2, 1}), 3).targets.dim(1), 17u);
  EXPECT_THROW(lag_preprocess(Tensor({3, 2, 1}), 3), ConfigError);
}

TEST(LagPreprocess, StacksMostRecentFirst) {
  Tensor w({5, 1, 1});
  for (std::size_t t = 0; t < 5; ++t) w[t] = static_cast<double>(t + 1);
  const LagPairs q1 = lag_preprocess(w, 1);
  EXPECT_EQ(q1.lags[0], 1.0);  // pair at t=2 carries x_1
  EXPECT_EQ(q1.targets[0], 2.0);
  const LagPairs q2 = lag_preprocess(w, 2);
  EXPECT_EQ(q2.lags[0], 2.0);
  EXPECT_EQ(q2.lags[1], 1.0);
  EXPECT_EQ(q2.targets[0], 3.0);
}

TEST(GatePredict, SumAggregationLinearVar) {
  NetConfig c;
  c.p = 2;
  c.d = 1;
  c.T = 20;
  c.aggregation = Aggregation::sum;
  Rng rng = make_rng(14);
  const ParamStore ps = init_params(c, rng);
  const Tensor lags({1, 1, 2, 1}, {1.0, 2.0});
  const Tensor z({1, 2, 2}, {0.5, -0.25, 0.0, 0.0});
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Prediction pred = decode(bind, c, lags, tape.constant(z));
  EXPECT_EQ(pred.mu.value().at({0, 0, 0, 0}), 0.0);
  EXPECT_NEAR(pred.var.value()[0], std::log(2.0), 1e-15);
}

TEST(GatePredict, ZeroRowDependsOnlyOnBiases) {
  const NetConfig c = small_config();
  Rng rng = make_rng(15);
  const ParamStore ps = init_params(c, rng);
  const Tensor z({1, 3, 3});
  const Tensor a = predict_mean(ps, c, normal_tensor(rng, {1, 4, 3, 1}), z);
  const Tensor b = predict_mean(ps, c, normal_tensor(rng, {1, 4, 3, 1}), z);
  EXPECT_EQ(a, b);
}

TEST(GatePredict, VarHeadAtZeroPreactivation) {
  const NetConfig c = small_config();
  Rng rng = make_rng(16);
  ParamStore ps = init_params(c, rng);
  zero_all(ps, "dec/var");
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Prediction pred = decode(bind, c, normal_tensor(rng, {1, 4, 3, 1}), tape.constant(normal_tensor(rng, {1, 3, 3})));
  for (double v : pred.var.value().data()) EXPECT_NEAR(v, std::log(2.0), 1e-15);
}

struct GateCase {
  DecoderStyle style;
  DecoderSharing sharing;
  std::size_t embed;
  std::size_t q;
};

class GatingNull : public ::testing::TestWithParam<GateCase> {};

TEST_P(GatingNull, ZeroEdgeSeversPath) {
  const GateCase gc = GetParam();
  NetConfig c = small_config(Mode::continuous, gc.style);
  c.decoder_sharing = gc.sharing;
  c.embed_dim = gc.embed;
  c.q = gc.q;
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Rng rng = make_rng(100 + seed);
    const ParamStore ps = init_params(c, rng);
    // Edge features concat(x_i, x_j) carry the receiver's own lags through
    // every incoming edge, so the edge-centric self-loop cut is not a full
    // sever; that variant checks an off-diagonal pair instead.
    const bool edge = gc.style == DecoderStyle::edge_centric;
    const std::size_t src1 = edge ? 1 : 0;
    Tensor z = normal_tensor(rng, {2, 3, 3});
    z.at({0, 1, 2}) = 0.0;     // node 2 -> node 1 cut in sample 0
    z.at({1, 0, src1}) = 0.0;  // node src1 -> node 0 cut in sample 1
    const Tensor lags = normal_tensor(rng, {2, 5, 3, c.q});
    const Tensor base = predict_mean(ps, c, lags, z);
    Tensor bumped = lags;
    for (std::size_t s = 0; s < 5; ++s)
      for (std::size_t l = 0; l < c.q; ++l) {
        bumped.at({0, s, 2, l}) += 3.7;
        bumped.at({1, s, src1, l}) -= 2.1;
      }
    const Tensor after = predict_mean(ps, c, bumped, z);
    for (std::size_t s = 0; s < 5; ++s) {
      EXPECT_EQ(after.at({0, s, 1, 0}), base.at({0, s, 1, 0}));
      EXPECT_EQ(after.at({1, s, 0, 0}), base.at({1, s, 0, 0}));
    }
    // Unsevered paths do respond.
    EXPECT_NE(after.at({0, 0, 2, 0}), base.at({0, 0, 2, 0}));
  }
}

INSTANTIATE_TEST_SUITE_P(Decoders, GatingNull,
                         ::testing::Values(GateCase{DecoderStyle::node_centric, DecoderSharing::shared, 0, 1},
                                           GateCase{DecoderStyle::node_centric, DecoderSharing::separate, 0, 2},
                                           GateCase{DecoderStyle::node_centric, DecoderSharing::shared, 4, 1},
                                           GateCase{DecoderStyle::edge_centric, DecoderSharing::shared, 0, 1},
                                           GateCase{DecoderStyle::edge_centric, DecoderSharing::shared, 4, 2}));

TEST(EdgeCentric, AllZeroGraphInputIndependent) {
  const NetConfig c = small_config(Mode::continuous, DecoderStyle::edge_centric);
  Rng rng = make_rng(17);
  const ParamStore ps = init_params(c, rng);
  const Tensor z({1, 3, 3});
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Prediction a = decode(bind, c, normal_tensor(rng, {1, 4, 3, 1}), tape.constant(z));
  const Prediction b = decode(bind, c, normal_tensor(rng, {1, 4, 3, 1}), tape.constant(z));
  EXPECT_EQ(a.mu.value(), b.mu.value());
  EXPECT_EQ(a.mu.shape(), (Shape{1, 4, 3, 1}));
  EXPECT_EQ(a.var.shape(), (Shape{1, 4, 3, 1}));
}

TEST(Structural, EdgeLinearMatchesNode2EdgeLinear) {
  Rng rng = make_rng(18);
  ParamStore ps;
  init_linear(ps, "L", 10, 6, rng);
  const Tensor x = normal_tensor(rng, {2, 3, 4, 5});
  Tape tape;
  ParamBinder bind(tape, ps, false);
  const Var xv = tape.constant(x);
  const Tensor a = edge_linear(bind, "L", xv).value();
  const Tensor b = linear(bind, "L", node2edge(xv)).value();
  EXPECT_EQ(a.shape(), b.shape());
  EXPECT_LT(max_abs(a - b), 1e-12);
}

TEST(Structural, Node2EdgeLayout) {
  const Tensor x({2, 1}, {1.0, 2.0});
  const Tensor e = node2edge(x);
  EXPECT_EQ(e.shape(), (Shape{2, 2, 2}));
  EXPECT_EQ(e.at({0, 1, 0}), 1.0);
  EXPECT_EQ(e.at({0, 1, 1}), 2.0);
  EXPECT_EQ(e.at({1, 0, 0}), 2.0);
}

namespace {

void expect_grad_ok(const LossBuilder& build, const ParamStore& ps, double tol) {
  const GradCheckReport rep = finite_diff_check(build, ps, 1e-6, tol);
  for (const auto& b : rep.blocks) EXPECT_LT(b.max_rel_err, tol) << b.name;
}

}  // namespace

TEST(Structural, GradientsMatchFiniteDifferences) {
  Rng rng = make_rng(19);
  ParamStore ps;
  ps["x"] = normal_tensor(rng, {2, 3, 4});
  ps["lags"] = normal_tensor(rng, {2, 2, 3, 2});
  ps["z"] = normal_tensor(rng, {2, 3, 3});
  ps["c"] = normal_tensor(rng, {2, 2, 3, 3, 2});
  init_linear(ps, "L", 8, 3, rng);
  const Tensor w1 = normal_tensor(rng, {2, 3, 3, 8});
  const Tensor w2 = normal_tensor(rng, {2, 2, 3, 6});
  const Tensor w3 = normal_tensor(rng, {2, 2, 3, 3, 2});
  const Tensor w4 = normal_tensor(rng, {2, 3, 3, 3});
  expect_grad_ok([&](ParamBinder& b) { return sum(node2edge(b("x")) * w1); }, ps, 1e-6);
  expect_grad_ok([&](ParamBinder& b) { return sum(gate_lags(b("lags"), b("z")) * w2); }, ps, 1e-6);
  expect_grad_ok([&](ParamBinder& b) { return sum(edge_gate(b("c"), b("z")) * w3); }, ps, 1e-6);
  expect_grad_ok([&](ParamBinder& b) { return sum(square(edge_linear(b, "L", b("x"))) * w4); }, ps, 1e-6);
}

TEST(Network, FullModelGradientCheck) {
  for (DecoderStyle style : {DecoderStyle::node_centric, DecoderStyle::edge_centric}) {
    NetConfig c = small_config(Mode::continuous, style);
    c.T = 6;
    c.n_hid = 5;
    c.dropout = 0.0;
    Rng rng = make_rng(20);
    const ParamStore ps = init_params(c, rng);
    const Tensor w = normal_tensor(rng, {2, 6, 3, 1});
    const LagPairs lp = lag_preprocess(w, 1);
    expect_grad_ok(
        [&](ParamBinder& b) {
          const EntityDist d = encode(b, c, w);
          return gaussian_nll(decode(b, c, lp.lags, d.gauss.mu), lp.targets) + sum(log(d.gauss.var));
        },
        ps, 1e-5);
  }
}
