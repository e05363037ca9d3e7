#pragma once

#include <Eigen/Dense>
#include <array>
#include <iosfwd>
#include <nlohmann/json_fwd.hpp>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "esnet/element_kg.hpp"

namespace esnet::crystal {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;
using IVec3 = std::array<int, 3>;

// M = (A, P, L): species, fractional coordinates, lattice rows in Angstrom.
struct CrystalStructure {
  std::string id;
  std::vector<std::string> species;
  std::vector<Vec3> frac_coords;
  Mat3 lattice = Mat3::Identity();

  std::size_t size() const noexcept { return species.size(); }
  // (symbol, atom count), sorted by symbol.
  std::vector<std::pair<std::string, double>> composition() const;
};

// Checks shapes, species and lattice; wraps coordinates into [0, 1).
CrystalStructure make_structure(std::string id, Mat3 lattice, std::vector<std::string> species,
                                std::vector<Vec3> frac_coords);
CrystalStructure parse_structure(const nlohmann::json& record);
nlohmann::json structure_to_json(const CrystalStructure& s);

int atomic_number(std::string_view symbol);  // 0 when not an element symbol
Vec3 frac_to_cart(const Vec3& frac, const Mat3& lattice);
double wrap_unit(double x);

struct NeighborEdge {
  int src = 0;  // center atom i
  int dst = 0;  // neighbor atom j
  IVec3 image{0, 0, 0};
  Vec3 vector = Vec3::Zero();  // r_j + image . L - r_i
  double distance = 0.0;
};

struct NeighborList {
  std::vector<NeighborEdge> edges;
  double cutoff = 0.0;  // radius actually used after adaptive expansion
};

inline constexpr double kCutoffGrowth = 1.2;

Vec3 edge_vector(const CrystalStructure& s, int i, int j, const IVec3& image);

// All (i, j, image) with 0 < |e| <= cutoff, ordered by (src, dst, image).
// While some atom has fewer than min_neighbors edges, the cutoff grows by
// kCutoffGrowth and the search repeats.
NeighborList neighbor_search(const CrystalStructure& s, double cutoff, int min_neighbors = 0);

// Test oracle: same edge definition, enumerated over a box bounded via the
// smallest singular value of the lattice instead of per-pair plane spacing.
std::vector<NeighborEdge> brute_force_neighbors(const CrystalStructure& s, double cutoff);

// 70-dim atom vector. Layout offsets:
inline constexpr int kAtomFeatureDim = 70;
inline constexpr int kFlagOffset = 0;       // lanthanide, actinide
inline constexpr int kGroupOffset = 2;      // 18
inline constexpr int kPeriodOffset = 20;    // 9
inline constexpr int kRadiusOffset = 29;    // 10
inline constexpr int kValenceOffset = 39;   // 17
inline constexpr int kIonizationOffset = 56;  // 10
inline constexpr int kBlockOffset = 66;     // 4

struct AtomFeatureVector {
  std::array<double, kAtomFeatureDim> values{};
  bool clamped = false;  // some property fell outside its encoded range

  Eigen::VectorXd as_vector() const;
};

bool is_lanthanide(int z);
bool is_actinide(int z);

AtomFeatureVector encode_atom(std::string_view symbol, const kg::ElementTable& table);

Eigen::VectorXd rbf_expand(double x, std::span<const double> centers, double gamma);
std::vector<double> linspace(double lo, double hi, int n);

struct FeaturizerConfig {
  double cutoff = 8.0;
  int min_neighbors = 12;
  double distance_scale = 1.0;  // c in c / |e|, Angstrom
  int edge_centers = 64;
  double edge_min = 0.0;
  double edge_max = 1.5;
  int angle_centers = 10;

  // Adjacent centers overlap at exp(-1/4).
  double edge_gamma() const;
  double angle_gamma() const;
  void validate() const;
};

Eigen::VectorXd edge_feature(double distance, const FeaturizerConfig& cfg);
std::array<Eigen::VectorXd, 3> angle_features(const Vec3& edge, const Mat3& lattice,
                                              const FeaturizerConfig& cfg);

struct CrystalGraph {
  std::string id;
  Eigen::MatrixXd node_features;  // n x 70
  std::vector<NeighborEdge> edges;
  Eigen::MatrixXd edge_features;  // m x edge_centers
  std::array<Eigen::MatrixXd, 3> angle_features;  // each m x angle_centers
  std::array<Eigen::VectorXd, 3> lattice_edge_features;  // edge_feature(|row_k|)
  std::vector<std::pair<std::string, double>> composition;
  std::vector<std::string> species;
  double cutoff = 0.0;

  std::size_t num_nodes() const noexcept { return static_cast<std::size_t>(node_features.rows()); }
  std::size_t num_edges() const noexcept { return edges.size(); }
};

CrystalGraph build_graph(const CrystalStructure& s, const kg::ElementTable& table,
                         const FeaturizerConfig& cfg);

// Plain-text dump: "graph", "nodes", "edges", "lattice", "composition"
// sections, numbers in shortest round-trip form.
void write_graph(std::ostream& out, const CrystalGraph& g);

}  // namespace esnet::crystal
