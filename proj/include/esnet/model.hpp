#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "esnet/autodiff.hpp"
#include "esnet/crystal_graph.hpp"
#include "esnet/kg_embed.hpp"

namespace esnet::model {

using Matrix = Eigen::MatrixXd;

enum class AblationMode { Full, AttrsAsNodeFeatures };
enum class LossKind { L1, MSE };

struct ModelConfig {
  int hidden_dim = 64;  // d2
  int kg_dim = 64;      // d1, width of the element embeddings
  int num_node_layers = 3;
  int num_edge_layers = 1;
  int num_fusion_layers = 4;
  int num_heads = 4;
  double alpha = 1.0;
  double beta = 1.0;
  AblationMode ablation = AblationMode::Full;
  std::uint64_t seed = 42;
  crystal::FeaturizerConfig featurizer;

  void validate() const;
  int node_input_dim() const;
  // Fusion weight on the element-knowledge branch; 0 in ablation mode.
  double effective_alpha() const { return ablation == AblationMode::Full ? alpha : 0.0; }
};

struct Tensor {
  std::string name;
  Matrix value;
};

class Parameters {
 public:
  void add(std::string name, Matrix value);
  std::size_t size() const noexcept { return tensors_.size(); }
  const Tensor& operator[](std::size_t i) const { return tensors_[i]; }
  Tensor& operator[](std::size_t i) { return tensors_[i]; }
  int index(const std::string& name) const;  // -1 when absent
  const Matrix& get(const std::string& name) const;
  const std::vector<Tensor>& tensors() const noexcept { return tensors_; }
  bool all_finite() const;

 private:
  std::vector<Tensor> tensors_;
};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights, zero biases, unit
// layer-norm gains; deterministic per cfg.seed.
Parameters init_params(const ModelConfig& cfg);

// Model-ready tensors for one crystal.
struct SampleInputs {
  Matrix node_features;  // n x node_input_dim
  Matrix edge_features;  // m x edge_centers
  std::array<Matrix, 3> angle_features;
  std::array<Matrix, 3> lattice_edge_features;  // each 1 x edge_centers
  std::vector<int> center;    // edge src
  std::vector<int> neighbor;  // edge dst
  Matrix kg_embedding;        // 1 x d1; empty in ablation mode

  int num_nodes() const { return static_cast<int>(node_features.rows()); }
  int num_edges() const { return static_cast<int>(center.size()); }
};

// Node features for the ablation: [70-dim atom vector | element embedding].
Matrix ablation_node_init(const crystal::CrystalGraph& graph, const embed::EmbeddingTable& table);

SampleInputs make_inputs(const crystal::CrystalGraph& graph, const embed::EmbeddingTable& table,
                         const ModelConfig& cfg);

// Test hooks.
struct ForwardOptions {
  bool zero_attention = false;   // all node/edge attention weights forced to 0
  bool skip_fusion_layers = false;
  bool linear_head = false;
};

struct ForwardTrace {
  ad::Var node_states;
  ad::Var edge_states;
  ad::Var graph_feature;  // H_g
  ad::Var fused;          // H_f
  ad::Var output;         // 1 x 1, normalized target units
};

struct Bound {
  ad::Tape& tape;
  const Parameters& params;
  std::vector<ad::Var> vars;  // lazily bound parameters
  ad::Var operator()(const std::string& name);
};

// Embedding lifts followed by node-wise / edge-wise layers: returns node and edge states.
std::pair<ad::Var, ad::Var> encode_graph(Bound& p, const ModelConfig& cfg, const SampleInputs& in,
                                         const ForwardOptions& opt);

ad::Var node_wise_layer(Bound& p, const std::string& prefix, const ModelConfig& cfg,
                        const SampleInputs& in, ad::Var nodes, ad::Var edges,
                        const ForwardOptions& opt);
ad::Var edge_wise_layer(Bound& p, const std::string& prefix, const ModelConfig& cfg,
                        ad::Var edges, const std::array<ad::Var, 3>& angles,
                        const std::array<ad::Var, 3>& lattice, const ForwardOptions& opt);
ad::Var pool(ad::Tape& t, ad::Var nodes);
ad::Var fuse(ad::Tape& t, ad::Var kg_projected, ad::Var graph_feature, double alpha, double beta);
ad::Var fusion_encoder(Bound& p, const ModelConfig& cfg, ad::Var fused, const ForwardOptions& opt);

ForwardTrace forward(ad::Tape& tape, const Parameters& params, const ModelConfig& cfg,
                     const SampleInputs& in, const ForwardOptions& opt = {});

// Standalone fusion for plain vectors.
Eigen::VectorXd fuse(const Eigen::VectorXd& kg_projected, const Eigen::VectorXd& graph_feature,
                     double alpha, double beta);

struct Model {
  ModelConfig config;
  Parameters params;
  double target_mean = 0.0;
  double target_std = 1.0;
};

double predict(const Model& model, const SampleInputs& in);
double predict(const Model& model, const crystal::CrystalStructure& s,
               const kg::ElementTable& elements, const embed::EmbeddingTable& embeddings);

struct LossValue {
  double loss = 0.0;
  double grad = 0.0;  // d loss / d pred
};

LossValue loss_and_grad(double pred, double target, LossKind kind);

struct AdamConfig {
  double learning_rate = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Matrix> m;
  std::vector<Matrix> v;
  std::int64_t t = 0;

  static AdamState zeros(const Parameters& params);
};

// Bias-corrected Adam; increments state.t before the update.
void adam_step(Parameters& params, const std::vector<Matrix>& grads, AdamState& state,
               const AdamConfig& cfg);

struct SampleGradient {
  double pred = 0.0;  // normalized units
  double loss = 0.0;
  std::vector<Matrix> grads;  // one per parameter, zero-filled when unused
};

// Loss of one sample (target in normalized units) and its gradient.
SampleGradient loss_gradient(const Parameters& params, const ModelConfig& cfg,
                             const SampleInputs& in, double target, LossKind kind,
                             const ForwardOptions& opt = {});

struct GradCheckReport {
  double max_rel_error = 0.0;
  double norm_rel_error = 0.0;  // |analytic - numeric| / max(|analytic|, |numeric|) over the sampled vector
  std::size_t coordinates = 0;
  std::size_t tensors_covered = 0;
  std::string worst;  // tensor[row,col] of the worst coordinate
};

// Analytic vs central-difference gradient over a random subset of at
// least `min_coordinates` coordinates, one or more in every tensor.
// Relative error uses max(|analytic|, |numeric|, abs_floor) as the scale.
GradCheckReport grad_check(const Parameters& params, const ModelConfig& cfg,
                           const SampleInputs& in, double target, LossKind kind, double epsilon,
                           std::size_t min_coordinates = 200, std::uint64_t seed = 7,
                           const ForwardOptions& opt = {}, double abs_floor = 1e-6);

}  // namespace esnet::model
