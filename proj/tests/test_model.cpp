#include <doctest.h>

#include <numeric>
#include <sstream>

#include "esnet/errors.hpp"
#include "esnet/model.hpp"
#include "esnet/train.hpp"
#include "fixtures.hpp"

using namespace esnet;
using namespace esnet::model;

namespace {

crystal::CrystalStructure test_structure(std::uint64_t seed, int max_atoms = 4) {
  Rng rng(seed);
  return fixtures::random_structure(rng, max_atoms);
}

double run(const Parameters& p, const ModelConfig& cfg, const SampleInputs& in,
           const ForwardOptions& opt = {}) {
  ad::Tape t;
  const auto tr = forward(t, p, cfg, in, opt);
  return t.value(tr.output)(0, 0);
}

// Hand-built inputs: node 1 has no incoming edges.
SampleInputs two_node_inputs(const ModelConfig& cfg, Rng& rng) {
  SampleInputs in;
  in.node_features = Matrix::Zero(2, cfg.node_input_dim());
  in.node_features(0, 3) = 1;
  in.node_features(1, 7) = 1;
  in.center = {0, 0};
  in.neighbor = {1, 1};
  in.edge_features = Matrix::Random(2, cfg.featurizer.edge_centers).cwiseAbs();
  for (int k = 0; k < 3; ++k) {
    in.angle_features[k] = Matrix::Random(2, cfg.featurizer.angle_centers).cwiseAbs();
    in.lattice_edge_features[k] = Matrix::Random(1, cfg.featurizer.edge_centers).cwiseAbs();
  }
  in.kg_embedding = Matrix(1, cfg.kg_dim);
  for (int k = 0; k < cfg.kg_dim; ++k) in.kg_embedding(0, k) = rng.normal();
  return in;
}

}  // namespace

TEST_CASE("init_params determinism and shapes") {
  auto cfg = fixtures::toy_config();
  const auto a = init_params(cfg);
  const auto b = init_params(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].value == b[i].value);
  cfg.seed = 43;
  const auto c = init_params(cfg);
  bool differs = false;
  for (std::size_t i = 0; i < a.size(); ++i) differs |= a[i].value != c[i].value;
  CHECK(differs);
  CHECK(a.get("atom_embed.W").rows() == 70);
  CHECK(a.get("atom_embed.W").cols() == 16);
  CHECK(a.get("kg_proj.W").rows() == 8);
  CHECK(a.index("fusion1.W1") >= 0);
  CHECK(a.index("fusion2.W1") < 0);

  auto bad = fixtures::toy_config();
  bad.num_fusion_layers = 0;
  CHECK_THROWS_AS(bad.validate(), UsageError);
  bad = fixtures::toy_config();
  bad.num_heads = 3;
  CHECK_THROWS_AS(bad.validate(), UsageError);
}

TEST_CASE("node-wise layer contracts") {
  const auto cfg = fixtures::toy_config();
  const auto params = init_params(cfg);
  Rng rng(4);
  const auto in = two_node_inputs(cfg, rng);
  ad::Tape t;
  Bound p{t, params, {}};
  const auto nodes = t.constant(Matrix::Random(2, cfg.hidden_dim));
  const auto edges = t.constant(Matrix::Random(2, cfg.hidden_dim));
  const auto out = node_wise_layer(p, "node0.", cfg, in, nodes, edges, {});
  CHECK(t.value(out).row(1) == t.value(nodes).row(1));
  CHECK(t.value(out).row(0) != t.value(nodes).row(0));
  ForwardOptions zero;
  zero.zero_attention = true;
  const auto same = node_wise_layer(p, "node0.", cfg, in, nodes, edges, zero);
  CHECK(t.value(same) == t.value(nodes));
}

TEST_CASE("node-wise layer is permutation equivariant") {
  const auto cfg = fixtures::toy_config();
  const auto params = init_params(cfg);
  const auto table = fixtures::random_embeddings(cfg.kg_dim, 3);
  const auto in = fixtures::inputs_for(test_structure(12, 5), table, cfg);
  const int n = in.num_nodes();
  std::vector<int> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), 0);
  std::reverse(perm.begin(), perm.end());  // new index of old node i is perm[i]
  SampleInputs pin = in;
  for (int i = 0; i < n; ++i) pin.node_features.row(perm[i]) = in.node_features.row(i);
  for (int e = 0; e < in.num_edges(); ++e) {
    pin.center[e] = perm[in.center[e]];
    pin.neighbor[e] = perm[in.neighbor[e]];
  }
  ad::Tape t;
  Bound p{t, params, {}};
  const Matrix h = Matrix::Random(n, cfg.hidden_dim);
  Matrix ph(n, cfg.hidden_dim);
  for (int i = 0; i < n; ++i) ph.row(perm[i]) = h.row(i);
  const auto edges = t.constant(Matrix::Random(in.num_edges(), cfg.hidden_dim));
  const auto a = t.value(node_wise_layer(p, "node0.", cfg, in, t.constant(h), edges, {}));
  const auto b = t.value(node_wise_layer(p, "node0.", cfg, pin, t.constant(ph), edges, {}));
  for (int i = 0; i < n; ++i) CHECK((a.row(i) - b.row(perm[i])).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("edge-wise layer contracts") {
  const auto cfg = fixtures::toy_config();
  const auto params = init_params(cfg);
  ad::Tape t;
  Bound p{t, params, {}};
  const auto edges = t.constant(Matrix::Random(5, cfg.hidden_dim));
  std::array<ad::Var, 3> angles, lattice;
  for (int k = 0; k < 3; ++k) {
    angles[k] = t.constant(Matrix::Random(5, cfg.hidden_dim));
    lattice[k] = t.constant(Matrix::Random(1, cfg.hidden_dim));
  }
  const auto out = edge_wise_layer(p, "edge0.", cfg, edges, angles, lattice, {});
  CHECK(t.value(out).rows() == 5);
  CHECK(t.value(out).cols() == cfg.hidden_dim);
  ForwardOptions zero;
  zero.zero_attention = true;
  CHECK(t.value(edge_wise_layer(p, "edge0.", cfg, edges, angles, lattice, zero)) == t.value(edges));
}

TEST_CASE("pool and fuse") {
  ad::Tape t;
  Matrix one = Matrix::Random(1, 4);
  CHECK(t.value(pool(t, t.constant(one))) == one);
  Matrix set = Matrix::Random(3, 4);
  Matrix twice(6, 4);
  twice << set, set;
  CHECK((t.value(pool(t, t.constant(twice))) - t.value(pool(t, t.constant(set)))).cwiseAbs().maxCoeff() < 1e-15);
  CHECK(t.value(pool(t, t.constant(Matrix::Zero(3, 4)))).isZero(0));

  const Eigen::VectorXd he = Eigen::VectorXd::Random(4), hg = Eigen::VectorXd::Random(4);
  CHECK(fuse(he, hg, 1, 0) == he);
  CHECK(fuse(he, hg, 0, 1) == hg);
  CHECK(fuse(he, hg, 0, 0).isZero(0));
  CHECK((fuse(he, hg, 0.3, 2.0) - (0.3 * he + 2.0 * hg)).norm() < 1e-15);
  CHECK_THROWS_WITH_AS(fuse(he, Eigen::VectorXd::Zero(3), 1, 1), doctest::Contains("DimensionMismatch"),
                       DataError);
}

TEST_CASE("forward is deterministic and finite") {
  const auto cfg = fixtures::toy_config();
  const auto params = init_params(cfg);
  const auto table = fixtures::random_embeddings(cfg.kg_dim, 3);
  const auto in = fixtures::inputs_for(test_structure(1), table, cfg);
  const double a = run(params, cfg, in);
  CHECK(std::isfinite(a));
  CHECK(a == run(params, cfg, in));
}

TEST_CASE("fusion path isolation") {
  auto cfg = fixtures::toy_config();
  const auto s = test_structure(2, 5);
  const auto t1 = fixtures::random_embeddings(cfg.kg_dim, 3);
  const auto t2 = fixtures::random_embeddings(cfg.kg_dim, 4);
  SUBCASE("alpha = 0 ignores the embedding table") {
    cfg.alpha = 0.0;
    Model m{cfg, init_params(cfg), 0.0, 1.0};
    CHECK(predict(m, s, fixtures::elements(), t1) == predict(m, s, fixtures::elements(), t2));
  }
  SUBCASE("beta = 0 ignores atomic positions") {
    cfg.beta = 0.0;
    Model m{cfg, init_params(cfg), 0.0, 1.0};
    auto moved = s;
    Rng rng(6);
    for (auto& f : moved.frac_coords) f = crystal::Vec3(rng.uniform(), rng.uniform(), rng.uniform());
    moved.lattice *= 1.1;
    CHECK(predict(m, s, fixtures::elements(), t1) == predict(m, moved, fixtures::elements(), t1));
  }
  SUBCASE("both branches matter by default") {
    Model m{cfg, init_params(cfg), 0.0, 1.0};
    CHECK(predict(m, s, fixtures::elements(), t1) != predict(m, s, fixtures::elements(), t2));
  }
}

TEST_CASE("loss_and_grad examples") {
  CHECK(loss_and_grad(1.5, 1.5, LossKind::L1).loss == 0.0);
  CHECK(loss_and_grad(1.5, 1.5, LossKind::L1).grad == 0.0);
  CHECK(loss_and_grad(1.5, 1.5, LossKind::MSE).loss == 0.0);
  CHECK(loss_and_grad(1.0, 0.0, LossKind::MSE).loss == 1.0);
  CHECK(loss_and_grad(1.0, 0.0, LossKind::MSE).grad == 2.0);
  CHECK(loss_and_grad(-2.0, 1.0, LossKind::L1).loss == 3.0);
  CHECK(loss_and_grad(-2.0, 1.0, LossKind::L1).grad == -1.0);
}

TEST_CASE("adam step closed forms") {
  Parameters p;
  p.add("w", Matrix::Constant(2, 3, 0.25));
  const std::vector<Matrix> unit{Matrix::Ones(2, 3)};
  AdamConfig cfg;
  cfg.learning_rate = 5e-4;
  SUBCASE("first step, eps = 0: change is exactly lr") {
    cfg.eps = 0.0;
    AdamState s = AdamState::zeros(p);
    adam_step(p, unit, s, cfg);
    CHECK(s.t == 1);
    CHECK(((p[0].value.array() - 0.25).abs() - 5e-4).abs().maxCoeff() < 1e-12);
  }
  SUBCASE("first step, default eps: change is lr / (1 + eps)") {
    AdamState s = AdamState::zeros(p);
    adam_step(p, unit, s, cfg);
    CHECK(((p[0].value.array() - 0.25).abs() - 5e-4 / (1.0 + 1e-8)).abs().maxCoeff() < 1e-15);
  }
  SUBCASE("zero gradient keeps parameters, moments decay") {
    AdamState s = AdamState::zeros(p);
    adam_step(p, unit, s, cfg);
    const Matrix before = p[0].value;
    const Matrix m1 = s.m[0], v1 = s.v[0];
    // A zero step still moves by the momentum term, so isolate with fresh moments.
    AdamState z = AdamState::zeros(p);
    adam_step(p, {Matrix::Zero(2, 3)}, z, cfg);
    CHECK(p[0].value == before);
    CHECK(z.m[0].isZero(0));
    adam_step(p, {Matrix::Zero(2, 3)}, s, cfg);
    CHECK((s.m[0] - 0.9 * m1).cwiseAbs().maxCoeff() < 1e-18);
    CHECK((s.v[0] - 0.999 * v1).cwiseAbs().maxCoeff() < 1e-18);
  }
  SUBCASE("identical runs give identical trajectories") {
    Parameters q = p;
    AdamState s1 = AdamState::zeros(p), s2 = AdamState::zeros(q);
    Rng rng(1);
    for (int step = 0; step < 10; ++step) {
      Matrix g(2, 3);
      for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
      adam_step(p, {g}, s1, cfg);
      adam_step(q, {g}, s2, cfg);
    }
    CHECK(p[0].value == q[0].value);
  }
}

TEST_CASE("grad_check on the toy config") {
  const auto cfg = fixtures::toy_config();
  const auto params = init_params(cfg);
  const auto table = fixtures::random_embeddings(cfg.kg_dim, 3);
  const auto in = fixtures::inputs_for(test_structure(7, 3), table, cfg);
  const double pred = run(params, cfg, in);
  SUBCASE("MSE") {
    const auto r = grad_check(params, cfg, in, pred + 0.7, LossKind::MSE, 1e-5);
    CHECK(r.coordinates >= 200);
    CHECK(r.tensors_covered == params.size());
    CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
  }
  SUBCASE("L1 away from the kink") {
    const auto r = grad_check(params, cfg, in, pred - 0.9, LossKind::L1, 1e-5);
    CHECK_MESSAGE(r.max_rel_error < 1e-4, r.worst);
  }
  SUBCASE("epsilon sweep plateau") {
    for (double eps : {1e-4, 1e-5, 1e-6}) {
      const auto r = grad_check(params, cfg, in, pred + 0.7, LossKind::MSE, eps);
      CHECK_MESSAGE(r.max_rel_error < 1e-3, eps << " " << r.worst);
      CHECK_MESSAGE(r.norm_rel_error < 1e-6, eps);
    }
  }
  SUBCASE("linearized sub-model") {
    ForwardOptions lin;
    lin.zero_attention = true;
    lin.skip_fusion_layers = true;
    lin.linear_head = true;
    const auto r = grad_check(params, cfg, in, pred + 0.7, LossKind::MSE, 1e-4, 200, 7, lin);
    CHECK_MESSAGE(r.max_rel_error < 1e-8, r.worst);
  }
}

TEST_CASE("ablation mode") {
  auto cfg = fixtures::toy_config();
  const auto table = fixtures::random_embeddings(cfg.kg_dim, 3);
  const auto s = test_structure(9, 4);
  const auto full = fixtures::inputs_for(s, table, cfg);
  CHECK(full.node_features.cols() == 70);
  auto acfg = cfg;
  acfg.ablation = AblationMode::AttrsAsNodeFeatures;
  const auto abl = fixtures::inputs_for(s, table, acfg);
  CHECK(abl.node_features.cols() == 70 + cfg.kg_dim);
  CHECK(abl.node_features.leftCols(70) == full.node_features);
  CHECK(abl.kg_embedding.size() == 0);
  CHECK(acfg.effective_alpha() == 0.0);
  CHECK(init_params(acfg).index("kg_proj.W") < 0);
  const double a = run(init_params(cfg), cfg, full);
  const double b = run(init_params(acfg), acfg, abl);
  CHECK(std::isfinite(b));
  CHECK(a != b);
}

TEST_CASE("make_inputs rejects a table of the wrong width") {
  const auto cfg = fixtures::toy_config();
  const auto table = fixtures::random_embeddings(cfg.kg_dim + 1, 3);
  CHECK_THROWS_WITH_AS(fixtures::inputs_for(test_structure(3), table, cfg),
                       doctest::Contains("DimensionMismatch"), DataError);
}
