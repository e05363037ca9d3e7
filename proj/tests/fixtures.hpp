#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <string>
#include <vector>

#include "esnet/crystal_graph.hpp"
#include "esnet/element_kg.hpp"
#include "esnet/kg_embed.hpp"
#include "esnet/model.hpp"
#include "esnet/rng.hpp"

#ifndef ESNET_DATA_DIR
#define ESNET_DATA_DIR "data"
#endif

namespace fixtures {

inline std::string data_path(const std::string& name) { return std::string(ESNET_DATA_DIR) + "/" + name; }

inline const esnet::kg::ElementTable& elements() {
  static const auto table = esnet::kg::load_element_table(data_path("elements.tsv"));
  return table;
}

inline const std::vector<std::string>& species_pool() {
  static const std::vector<std::string> pool = {"H",  "Li", "C",  "N",  "O",  "F",  "Na", "Mg",
                                                "Al", "Si", "P",  "S",  "Cl", "K",  "Ca", "Ti",
                                                "Fe", "Cu", "Zn", "Ce", "U",  "Ba", "La", "Bi"};
  return pool;
}

// Random well-conditioned triclinic cell with 1..max_atoms atoms.
inline esnet::crystal::CrystalStructure random_structure(esnet::Rng& rng, int max_atoms = 8,
                                                         double min_len = 2.5, double max_len = 5.0) {
  using esnet::crystal::Mat3;
  using esnet::crystal::Vec3;
  Mat3 lattice;
  for (;;) {
    for (int r = 0; r < 3; ++r) {
      for (int c = 0; c < 3; ++c) lattice(r, c) = rng.uniform(-0.35, 0.35);
      lattice(r, r) = 1.0;
      lattice.row(r) *= rng.uniform(min_len, max_len) / lattice.row(r).norm();
    }
    const double vol = std::abs(lattice.determinant());
    if (vol > 0.4 * lattice.row(0).norm() * lattice.row(1).norm() * lattice.row(2).norm()) break;
  }
  const int n = 1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(max_atoms)));
  std::vector<std::string> species;
  std::vector<Vec3> frac;
  for (int i = 0; i < n; ++i) {
    species.push_back(species_pool()[rng.below(species_pool().size())]);
    frac.emplace_back(rng.uniform(), rng.uniform(), rng.uniform());
  }
  return esnet::crystal::make_structure("rand", lattice, species, frac);
}

inline esnet::crystal::Mat3 random_rotation(esnet::Rng& rng) {
  Eigen::Quaterniond q(rng.normal(), rng.normal(), rng.normal(), rng.normal());
  q.normalize();
  return q.toRotationMatrix();
}

// Rows of the lattice rotated: L <- L R^T, fractional coordinates unchanged.
inline esnet::crystal::CrystalStructure rotated(const esnet::crystal::CrystalStructure& s,
                                                const esnet::crystal::Mat3& r) {
  auto out = s;
  out.lattice = s.lattice * r.transpose();
  return out;
}

// Gaussian vectors for every element symbol in the bundled table.
inline esnet::embed::EmbeddingTable random_embeddings(int dim, std::uint64_t seed) {
  esnet::Rng rng(seed);
  std::vector<std::string> tokens;
  for (const auto& r : elements().records()) tokens.push_back(r.symbol);
  esnet::embed::RowMatrix v(static_cast<Eigen::Index>(tokens.size()), dim);
  for (Eigen::Index i = 0; i < v.rows(); ++i) {
    for (Eigen::Index j = 0; j < v.cols(); ++j) v(i, j) = rng.normal();
  }
  return {tokens, v};
}

// Small model used by most tests.
inline esnet::model::ModelConfig toy_config() {
  esnet::model::ModelConfig cfg;
  cfg.hidden_dim = 16;
  cfg.kg_dim = 8;
  cfg.num_node_layers = 2;
  cfg.num_edge_layers = 1;
  cfg.num_fusion_layers = 2;
  cfg.num_heads = 2;
  cfg.featurizer.cutoff = 4.0;
  cfg.featurizer.min_neighbors = 4;
  cfg.featurizer.edge_centers = 12;
  cfg.featurizer.angle_centers = 5;
  return cfg;
}

inline esnet::model::SampleInputs inputs_for(const esnet::crystal::CrystalStructure& s,
                                             const esnet::embed::EmbeddingTable& table,
                                             const esnet::model::ModelConfig& cfg) {
  return esnet::model::make_inputs(esnet::crystal::build_graph(s, elements(), cfg.featurizer), table,
                                   cfg);
}

inline double max_abs_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) return INFINITY;
  return a.size() == 0 ? 0.0 : (a - b).cwiseAbs().maxCoeff();
}

}  // namespace fixtures
