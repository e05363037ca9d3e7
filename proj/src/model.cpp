#include "esnet/model.hpp"

#include <cmath>

#include "esnet/errors.hpp"
#include "esnet/rng.hpp"

namespace esnet::model {

using ad::Var;

void ModelConfig::validate() const {
  if (hidden_dim < 1 || kg_dim < 1 || num_node_layers < 1 || num_edge_layers < 0 ||
      num_fusion_layers < 1 || num_heads < 1) {
    throw UsageError("model dimensions and layer counts must be positive (fusion layers >= 1)");
  }
  if (hidden_dim % num_heads != 0) throw UsageError("num_heads must divide hidden_dim");
  if (!std::isfinite(alpha) || !std::isfinite(beta)) throw UsageError("alpha/beta must be finite");
  featurizer.validate();
}

int ModelConfig::node_input_dim() const {
  return crystal::kAtomFeatureDim + (ablation == AblationMode::AttrsAsNodeFeatures ? kg_dim : 0);
}

void Parameters::add(std::string name, Matrix value) {
  if (index(name) >= 0) throw UsageError("duplicate parameter " + name);
  tensors_.push_back({std::move(name), std::move(value)});
}

int Parameters::index(const std::string& name) const {
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    if (tensors_[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

const Matrix& Parameters::get(const std::string& name) const {
  const int i = index(name);
  if (i < 0) throw UsageError("no parameter named " + name);
  return tensors_[static_cast<std::size_t>(i)].value;
}

bool Parameters::all_finite() const {
  for (const auto& t : tensors_) {
    if (!t.value.allFinite()) return false;
  }
  return true;
}

Parameters init_params(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(stream_seed(cfg.seed, 0x1417));
  Parameters p;
  const int d = cfg.hidden_dim;
  auto weight = [&](const std::string& name, int rows, int cols) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(rows));
    Matrix w(rows, cols);
    for (Eigen::Index c = 0; c < cols; ++c) {
      for (Eigen::Index r = 0; r < rows; ++r) w(r, c) = rng.uniform(-bound, bound);
    }
    p.add(name, std::move(w));
  };
  auto zeros = [&](const std::string& name, int cols) { p.add(name, Matrix::Zero(1, cols)); };
  auto ones = [&](const std::string& name, int cols) { p.add(name, Matrix::Ones(1, cols)); };

  weight("atom_embed.W", cfg.node_input_dim(), d);
  zeros("atom_embed.b", d);
  weight("edge_embed.W", cfg.featurizer.edge_centers, d);
  zeros("edge_embed.b", d);
  weight("angle_embed.W", cfg.featurizer.angle_centers, d);
  zeros("angle_embed.b", d);
  for (int l = 0; l < cfg.num_node_layers; ++l) {
    const std::string pre = "node" + std::to_string(l) + ".";
    weight(pre + "Wq", d, d);
    weight(pre + "Wk", 2 * d, d);
    weight(pre + "Wv", 3 * d, d);
    weight(pre + "Wo", d, d);
    weight(pre + "W1", d, d);
    weight(pre + "W2", d, d);
  }
  for (int l = 0; l < cfg.num_edge_layers; ++l) {
    const std::string pre = "edge" + std::to_string(l) + ".";
    weight(pre + "Wq", d, d);
    weight(pre + "Wk", 3 * d, d);
    weight(pre + "Wv", 3 * d, d);
    weight(pre + "Wo", d, d);
    weight(pre + "W1", d, d);
    weight(pre + "W2", d, d);
  }
  if (cfg.ablation == AblationMode::Full) {
    weight("kg_proj.W", cfg.kg_dim, d);
    zeros("kg_proj.b", d);
  }
  for (int l = 0; l < cfg.num_fusion_layers; ++l) {
    const std::string pre = "fusion" + std::to_string(l) + ".";
    ones(pre + "ln1.g", d);
    zeros(pre + "ln1.b", d);
    weight(pre + "Wv", d, d);
    weight(pre + "Wo", d, d);
    ones(pre + "ln2.g", d);
    zeros(pre + "ln2.b", d);
    weight(pre + "W1", d, d);
    zeros(pre + "b1", d);
    weight(pre + "W2", d, d);
    zeros(pre + "b2", d);
  }
  weight("head.W1", d, d);
  zeros("head.b1", d);
  weight("head.W2", d, 1);
  zeros("head.b2", 1);
  return p;
}

Matrix ablation_node_init(const crystal::CrystalGraph& graph, const embed::EmbeddingTable& table) {
  const auto n = static_cast<Eigen::Index>(graph.num_nodes());
  Matrix out(n, graph.node_features.cols() + table.dim());
  out.leftCols(graph.node_features.cols()) = graph.node_features;
  for (Eigen::Index i = 0; i < n; ++i) {
    out.row(i).tail(table.dim()) = table.vector(graph.species[static_cast<std::size_t>(i)]).transpose();
  }
  return out;
}

SampleInputs make_inputs(const crystal::CrystalGraph& graph, const embed::EmbeddingTable& table,
                         const ModelConfig& cfg) {
  if (table.dim() != cfg.kg_dim) {
    throw DataError("DimensionMismatch", "embedding table has dim " + std::to_string(table.dim()) +
                                             ", model expects " + std::to_string(cfg.kg_dim));
  }
  SampleInputs in;
  if (cfg.ablation == AblationMode::AttrsAsNodeFeatures) {
    in.node_features = ablation_node_init(graph, table);
  } else {
    in.node_features = graph.node_features;
    const auto he = embed::composition_embedding(graph.composition, table);
    in.kg_embedding = he.vector.transpose();
  }
  in.edge_features = graph.edge_features;
  in.angle_features = graph.angle_features;
  for (int k = 0; k < 3; ++k) in.lattice_edge_features[k] = graph.lattice_edge_features[k].transpose();
  for (const auto& e : graph.edges) {
    in.center.push_back(e.src);
    in.neighbor.push_back(e.dst);
  }
  return in;
}

Var Bound::operator()(const std::string& name) {
  const int i = params.index(name);
  if (i < 0) throw UsageError("no parameter named " + name);
  if (vars.size() < params.size()) vars.resize(params.size());
  auto& v = vars[static_cast<std::size_t>(i)];
  if (v.id < 0) v = tape.parameter(params[static_cast<std::size_t>(i)].value, i);
  return v;
}

namespace {

// u + silu(u W1) W2 with u = x Wo, no biases.
Var residual_update(Bound& p, const std::string& pre, Var x) {
  auto& t = p.tape;
  const Var u = ad::matmul(t, x, p(pre + "Wo"));
  const Var ff = ad::matmul(t, ad::silu(t, ad::matmul(t, u, p(pre + "W1"))), p(pre + "W2"));
  return ad::add(t, u, ff);
}

Var affine(Bound& p, Var x, const std::string& w, const std::string& b) {
  return ad::add_row(p.tape, ad::matmul(p.tape, x, p(w)), p(b));
}

}  // namespace

Var node_wise_layer(Bound& p, const std::string& pre, const ModelConfig& cfg,
                    const SampleInputs& in, Var nodes, Var edges, const ForwardOptions& opt) {
  auto& t = p.tape;
  const int heads = cfg.num_heads;
  const int width = cfg.hidden_dim / heads;
  // Row blocks of Wk = [neighbor; edge] and Wv = [center; neighbor; edge]; node
  // blocks are applied per node and gathered onto edges.
  const int hd = static_cast<int>(t.value(nodes).cols());
  const int ed = static_cast<int>(t.value(edges).cols());
  const Var wk = p(pre + "Wk"), wv = p(pre + "Wv");
  auto per_node = [&](Var w, const std::vector<int>& index) {
    return ad::gather_rows(t, ad::matmul(t, nodes, w), index);
  };
  const Var q = per_node(p(pre + "Wq"), in.center);
  const Var k = ad::add(t, per_node(ad::slice_rows(t, wk, 0, hd), in.neighbor),
                        ad::matmul(t, edges, ad::slice_rows(t, wk, hd, ed)));
  const Var v = ad::add(t,
                        ad::add(t, per_node(ad::slice_rows(t, wv, 0, hd), in.center),
                                per_node(ad::slice_rows(t, wv, hd, hd), in.neighbor)),
                        ad::matmul(t, edges, ad::slice_rows(t, wv, 2 * hd, ed)));
  const Var scores = ad::head_dot(t, q, k, heads, 1.0 / std::sqrt(static_cast<double>(width)));
  Var attn = ad::segment_softmax(t, scores, in.center, in.num_nodes());
  if (opt.zero_attention) attn = ad::scale(t, attn, 0.0);
  const Var msg = ad::hadamard(t, ad::head_expand(t, attn, width), v);
  const Var agg = ad::scatter_add_rows(t, msg, in.center, in.num_nodes());
  return ad::add(t, nodes, residual_update(p, pre, agg));
}

Var edge_wise_layer(Bound& p, const std::string& pre, const ModelConfig& cfg, Var edges,
                    const std::array<Var, 3>& angles, const std::array<Var, 3>& lattice,
                    const ForwardOptions& opt) {
  auto& t = p.tape;
  const int heads = cfg.num_heads;
  const int width = cfg.hidden_dim / heads;
  const int m = static_cast<int>(t.value(edges).rows());
  const Var q = ad::matmul(t, edges, p(pre + "Wq"));
  // Channel c input is [edges | angles[c] | lattice[c]]; the edge block is shared.
  const int ed = static_cast<int>(t.value(edges).cols());
  const int angle_dim = static_cast<int>(t.value(angles[0]).cols());
  const int ld = static_cast<int>(t.value(lattice[0]).cols());
  const Var wk = p(pre + "Wk"), wv = p(pre + "Wv");
  auto blocks = [&](Var w) {
    return std::array<Var, 3>{ad::slice_rows(t, w, 0, ed), ad::slice_rows(t, w, ed, angle_dim),
                              ad::slice_rows(t, w, ed + angle_dim, ld)};
  };
  const auto bk = blocks(wk), bv = blocks(wv);
  const Var ke = ad::matmul(t, edges, bk[0]), ve = ad::matmul(t, edges, bv[0]);
  std::vector<Var> scores, values;
  for (int c = 0; c < 3; ++c) {
    auto channel = [&](const std::array<Var, 3>& b, Var shared) {
      const Var rest = ad::add(t, ad::matmul(t, angles[c], b[1]),
                               ad::broadcast_rows(t, ad::matmul(t, lattice[c], b[2]), m));
      return ad::add(t, shared, rest);
    };
    const Var key = channel(bk, ke);
    values.push_back(channel(bv, ve));
    scores.push_back(ad::head_dot(t, q, key, heads, 1.0 / std::sqrt(static_cast<double>(width))));
  }
  // Softmax across the three lattice channels of each edge.
  std::vector<int> segment(static_cast<std::size_t>(3 * m));
  for (int c = 0; c < 3; ++c) {
    for (int e = 0; e < m; ++e) segment[static_cast<std::size_t>(c * m + e)] = e;
  }
  Var attn = ad::segment_softmax(t, ad::concat_rows(t, scores), segment, m);
  if (opt.zero_attention) attn = ad::scale(t, attn, 0.0);
  Var msg;
  for (int c = 0; c < 3; ++c) {
    const Var a = ad::head_expand(t, ad::slice_rows(t, attn, c * m, m), width);
    const Var term = ad::hadamard(t, a, values[c]);
    msg = c == 0 ? term : ad::add(t, msg, term);
  }
  return ad::add(t, edges, residual_update(p, pre, msg));
}

std::pair<Var, Var> encode_graph(Bound& p, const ModelConfig& cfg, const SampleInputs& in,
                                 const ForwardOptions& opt) {
  auto& t = p.tape;
  Var nodes = affine(p, t.constant(in.node_features), "atom_embed.W", "atom_embed.b");
  Var edges = ad::silu(t, affine(p, t.constant(in.edge_features), "edge_embed.W", "edge_embed.b"));
  std::array<Var, 3> angles, lattice;
  for (int c = 0; c < 3; ++c) {
    angles[c] = ad::silu(t, affine(p, t.constant(in.angle_features[c]), "angle_embed.W", "angle_embed.b"));
    lattice[c] =
        ad::silu(t, affine(p, t.constant(in.lattice_edge_features[c]), "edge_embed.W", "edge_embed.b"));
  }
  nodes = node_wise_layer(p, "node0.", cfg, in, nodes, edges, opt);
  for (int l = 0; l < cfg.num_edge_layers; ++l) {
    edges = edge_wise_layer(p, "edge" + std::to_string(l) + ".", cfg, edges, angles, lattice, opt);
  }
  for (int l = 1; l < cfg.num_node_layers; ++l) {
    nodes = node_wise_layer(p, "node" + std::to_string(l) + ".", cfg, in, nodes, edges, opt);
  }
  return {nodes, edges};
}

Var pool(ad::Tape& t, Var nodes) { return ad::mean_rows(t, nodes); }

Var fuse(ad::Tape& t, Var kg_projected, Var graph_feature, double alpha, double beta) {
  return ad::add(t, ad::scale(t, kg_projected, alpha), ad::scale(t, graph_feature, beta));
}

Eigen::VectorXd fuse(const Eigen::VectorXd& kg_projected, const Eigen::VectorXd& graph_feature,
                     double alpha, double beta) {
  if (kg_projected.size() != graph_feature.size()) {
    throw DataError("DimensionMismatch", "fusion inputs have different lengths");
  }
  return alpha * kg_projected + beta * graph_feature;
}

Var fusion_encoder(Bound& p, const ModelConfig& cfg, Var x, const ForwardOptions& opt) {
  auto& t = p.tape;
  if (!opt.skip_fusion_layers) {
    for (int l = 0; l < cfg.num_fusion_layers; ++l) {
      const std::string pre = "fusion" + std::to_string(l) + ".";
      // Self-attention over a single token: the softmax weight is exactly 1,
      // so the attention output is the projected value.
      Var h = ad::add_row(t, ad::mul_row(t, ad::layer_norm(t, x), p(pre + "ln1.g")), p(pre + "ln1.b"));
      h = ad::matmul(t, ad::matmul(t, h, p(pre + "Wv")), p(pre + "Wo"));
      x = ad::add(t, x, h);
      h = ad::add_row(t, ad::mul_row(t, ad::layer_norm(t, x), p(pre + "ln2.g")), p(pre + "ln2.b"));
      h = affine(p, ad::silu(t, affine(p, h, pre + "W1", pre + "b1")), pre + "W2", pre + "b2");
      x = ad::add(t, x, h);
    }
  }
  if (opt.linear_head) return affine(p, x, "head.W2", "head.b2");
  return affine(p, ad::silu(t, affine(p, x, "head.W1", "head.b1")), "head.W2", "head.b2");
}

ForwardTrace forward(ad::Tape& tape, const Parameters& params, const ModelConfig& cfg,
                     const SampleInputs& in, const ForwardOptions& opt) {
  if (in.num_nodes() < 1) throw DataError("ShapeMismatch", "graph has no nodes");
  if (in.node_features.cols() != cfg.node_input_dim()) {
    throw DataError("DimensionMismatch", "node features have width " +
                                             std::to_string(in.node_features.cols()) + ", model expects " +
                                             std::to_string(cfg.node_input_dim()));
  }
  Bound p{tape, params, {}};
  ForwardTrace tr;
  std::tie(tr.node_states, tr.edge_states) = encode_graph(p, cfg, in, opt);
  tr.graph_feature = pool(tape, tr.node_states);
  if (cfg.ablation == AblationMode::Full) {
    if (in.kg_embedding.cols() != cfg.kg_dim) {
      throw DataError("DimensionMismatch", "composition embedding has the wrong width");
    }
    const Var projected = affine(p, tape.constant(in.kg_embedding), "kg_proj.W", "kg_proj.b");
    tr.fused = fuse(tape, projected, tr.graph_feature, cfg.alpha, cfg.beta);
  } else {
    tr.fused = ad::scale(tape, tr.graph_feature, cfg.beta);
  }
  tr.output = fusion_encoder(p, cfg, tr.fused, opt);
  return tr;
}

double predict(const Model& model, const SampleInputs& in) {
  ad::Tape tape;
  const auto tr = forward(tape, model.params, model.config, in);
  const double y = tape.value(tr.output)(0, 0);
  if (!std::isfinite(y)) throw NumericError("prediction is not finite");
  return y * model.target_std + model.target_mean;
}

double predict(const Model& model, const crystal::CrystalStructure& s,
               const kg::ElementTable& elements, const embed::EmbeddingTable& embeddings) {
  const auto graph = crystal::build_graph(s, elements, model.config.featurizer);
  return predict(model, make_inputs(graph, embeddings, model.config));
}

LossValue loss_and_grad(double pred, double target, LossKind kind) {
  const double r = pred - target;
  if (kind == LossKind::MSE) return {r * r, 2.0 * r};
  return {std::abs(r), r > 0 ? 1.0 : (r < 0 ? -1.0 : 0.0)};
}

AdamState AdamState::zeros(const Parameters& params) {
  AdamState s;
  for (const auto& t : params.tensors()) {
    s.m.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
    s.v.push_back(Matrix::Zero(t.value.rows(), t.value.cols()));
  }
  return s;
}

void adam_step(Parameters& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (state.m.size() != params.size()) state = AdamState::zeros(params);
  if (grads.size() != params.size()) throw UsageError("gradient count does not match parameters");
  ++state.t;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& g = grads[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
    v = cfg.beta2 * v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    params[i].value.array() -=
        cfg.learning_rate * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.eps);
  }
}

SampleGradient loss_gradient(const Parameters& params, const ModelConfig& cfg,
                             const SampleInputs& in, double target, LossKind kind,
                             const ForwardOptions& opt) {
  ad::Tape tape;
  const auto tr = forward(tape, params, cfg, in, opt);
  SampleGradient out;
  out.pred = tape.value(tr.output)(0, 0);
  const auto lv = loss_and_grad(out.pred, target, kind);
  out.loss = lv.loss;
  if (!std::isfinite(out.loss)) throw NumericError("loss is not finite");
  tape.backward(tr.output, lv.grad);
  out.grads = tape.gradients(params.size());
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (out.grads[i].size() == 0) {
      out.grads[i] = Matrix::Zero(params[i].value.rows(), params[i].value.cols());
    }
  }
  return out;
}

GradCheckReport grad_check(const Parameters& params, const ModelConfig& cfg,
                           const SampleInputs& in, double target, LossKind kind, double epsilon,
                           std::size_t min_coordinates, std::uint64_t seed,
                           const ForwardOptions& opt, double abs_floor) {
  const auto analytic = loss_gradient(params, cfg, in, target, kind, opt);
  Parameters probe = params;
  auto loss_at = [&]() {
    ad::Tape tape;
    const auto tr = forward(tape, probe, cfg, in, opt);
    return loss_and_grad(tape.value(tr.output)(0, 0), target, kind).loss;
  };

  std::vector<std::pair<std::size_t, Eigen::Index>> coords;
  Rng rng(stream_seed(seed, 0x6c));
  Eigen::Index total = 0;
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto size = params[i].value.size();
    coords.emplace_back(i, static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(size))));
    total += size;
  }
  while (coords.size() < min_coordinates) {
    auto flat = static_cast<Eigen::Index>(rng.below(static_cast<std::uint64_t>(total)));
    std::size_t i = 0;
    while (flat >= params[i].value.size()) flat -= params[i++].value.size();
    coords.emplace_back(i, flat);
  }

  GradCheckReport report;
  report.coordinates = coords.size();
  report.tensors_covered = params.size();
  double diff2 = 0.0, exact2 = 0.0, numeric2 = 0.0;
  for (const auto& [i, flat] : coords) {
    double& x = probe[i].value.data()[flat];
    const double saved = x;
    x = saved + epsilon;
    const double up = loss_at();
    x = saved - epsilon;
    const double down = loss_at();
    x = saved;
    const double numeric = (up - down) / (2.0 * epsilon);
    const double exact = analytic.grads[i].data()[flat];
    const double scale = std::max({std::abs(exact), std::abs(numeric), abs_floor});
    const double rel = std::abs(exact - numeric) / scale;
    diff2 += (exact - numeric) * (exact - numeric);
    exact2 += exact * exact;
    numeric2 += numeric * numeric;
    if (rel > report.max_rel_error || report.worst.empty()) {
      report.max_rel_error = std::max(rel, report.max_rel_error);
      const auto rows = params[i].value.rows();
      report.worst = params[i].name + "[" + std::to_string(flat % rows) + "," +
                     std::to_string(flat / rows) + "]";
    }
  }
  report.norm_rel_error = std::sqrt(diff2) / std::max({std::sqrt(exact2), std::sqrt(numeric2), abs_floor});
  return report;
}

}  // namespace esnet::model
