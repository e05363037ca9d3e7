#include "esnet/crystal_graph.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <nlohmann/json.hpp>
#include <ostream>

#include "esnet/errors.hpp"
#include "esnet/text.hpp"

namespace esnet::crystal {

namespace {

constexpr std::array<std::string_view, 118> kSymbols = {
    "H",  "He", "Li", "Be", "B",  "C",  "N",  "O",  "F",  "Ne", "Na", "Mg", "Al", "Si", "P",
    "S",  "Cl", "Ar", "K",  "Ca", "Sc", "Ti", "V",  "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn",
    "Ga", "Ge", "As", "Se", "Br", "Kr", "Rb", "Sr", "Y",  "Zr", "Nb", "Mo", "Tc", "Ru", "Rh",
    "Pd", "Ag", "Cd", "In", "Sn", "Sb", "Te", "I",  "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd",
    "Pm", "Sm", "Eu", "Gd", "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W",  "Re",
    "Os", "Ir", "Pt", "Au", "Hg", "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th",
    "Pa", "U",  "Np", "Pu", "Am", "Cm", "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db",
    "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn", "Nh", "Fl", "Mc", "Lv", "Ts", "Og"};

constexpr int kMaxImageSpan = 1000;
constexpr int kMaxCutoffExpansions = 64;

bool edge_qualifies(double distance, double cutoff) { return distance > 0.0 && distance <= cutoff; }

// Per-axis integer span needed so that no image within `cutoff` is missed,
// using the spacing between lattice planes (1 / |column k of L^-1|).
std::array<double, 3> plane_reach(const Mat3& lattice, double cutoff) {
  const Mat3 inv = lattice.inverse();
  if (!inv.allFinite()) throw DataError("DegenerateLattice", "lattice is not invertible");
  std::array<double, 3> reach{};
  for (int k = 0; k < 3; ++k) {
    reach[k] = cutoff * inv.col(k).norm();
    if (!std::isfinite(reach[k]) || reach[k] > kMaxImageSpan) {
      throw DataError("DegenerateLattice", "periodic image bound is unbounded or too large");
    }
  }
  return reach;
}

int one_hot_index(double value, int lo, int hi, bool& clamped) {
  const long v = std::lround(value);
  if (v < lo || v > hi || std::abs(value - static_cast<double>(v)) > 1e-9) clamped = true;
  return static_cast<int>(std::clamp<long>(v, lo, hi)) - lo;
}

}  // namespace

int atomic_number(std::string_view symbol) {
  for (std::size_t i = 0; i < kSymbols.size(); ++i) {
    if (kSymbols[i] == symbol) return static_cast<int>(i) + 1;
  }
  return 0;
}

double wrap_unit(double x) {
  double w = x - std::floor(x);
  if (w >= 1.0) w = 0.0;  // x slightly below an integer
  return w;
}

Vec3 frac_to_cart(const Vec3& frac, const Mat3& lattice) {
  return (frac.transpose() * lattice).transpose();
}

std::vector<std::pair<std::string, double>> CrystalStructure::composition() const {
  std::map<std::string, double> counts;
  for (const auto& s : species) counts[s] += 1.0;
  return {counts.begin(), counts.end()};
}

CrystalStructure make_structure(std::string id, Mat3 lattice, std::vector<std::string> species,
                                std::vector<Vec3> frac_coords) {
  if (species.size() != frac_coords.size()) {
    throw DataError("ShapeMismatch", std::to_string(species.size()) + " species but " +
                                         std::to_string(frac_coords.size()) + " coordinate rows");
  }
  if (species.empty()) throw DataError("ShapeMismatch", "structure has no atoms");
  if (!lattice.allFinite()) throw DataError("BadLattice", "lattice has non-finite entries");
  const double scale = lattice.row(0).norm() * lattice.row(1).norm() * lattice.row(2).norm();
  const double det = lattice.determinant();
  if (!(scale > 0.0) || std::abs(det) <= 1e-10 * scale) {
    throw DataError("BadLattice", "lattice matrix is singular");
  }
  for (const auto& sp : species) {
    if (atomic_number(sp) == 0) throw DataError("UnknownSpecies", "unknown species '" + sp + "'");
  }
  for (auto& f : frac_coords) {
    if (!f.allFinite()) throw DataError("ShapeMismatch", "non-finite fractional coordinate");
    for (int k = 0; k < 3; ++k) f[k] = wrap_unit(f[k]);
  }
  return CrystalStructure{std::move(id), std::move(species), std::move(frac_coords), lattice};
}

CrystalStructure parse_structure(const nlohmann::json& record) {
  if (!record.is_object()) throw DataError("ParseError", "structure record must be an object");
  for (const char* key : {"lattice", "frac_coords", "species"}) {
    if (!record.contains(key)) throw DataError("ParseError", std::string("missing field ") + key);
  }
  const auto& lat = record.at("lattice");
  if (!lat.is_array() || lat.size() != 3) {
    throw DataError("ShapeMismatch", "lattice must be a 3x3 array");
  }
  Mat3 lattice;
  for (int r = 0; r < 3; ++r) {
    if (!lat[r].is_array() || lat[r].size() != 3) {
      throw DataError("ShapeMismatch", "lattice must be a 3x3 array");
    }
    for (int c = 0; c < 3; ++c) lattice(r, c) = lat[r][c].get<double>();
  }
  std::vector<Vec3> frac;
  for (const auto& row : record.at("frac_coords")) {
    if (!row.is_array() || row.size() != 3) {
      throw DataError("ShapeMismatch", "frac_coords rows must have 3 entries");
    }
    frac.emplace_back(row[0].get<double>(), row[1].get<double>(), row[2].get<double>());
  }
  auto species = record.at("species").get<std::vector<std::string>>();
  const std::string id = record.contains("id") ? record.at("id").get<std::string>() : std::string();
  return make_structure(id, lattice, std::move(species), std::move(frac));
}

nlohmann::json structure_to_json(const CrystalStructure& s) {
  nlohmann::json j;
  j["id"] = s.id;
  j["lattice"] = nlohmann::json::array();
  for (int r = 0; r < 3; ++r) {
    j["lattice"].push_back({s.lattice(r, 0), s.lattice(r, 1), s.lattice(r, 2)});
  }
  j["frac_coords"] = nlohmann::json::array();
  for (const auto& f : s.frac_coords) j["frac_coords"].push_back({f[0], f[1], f[2]});
  j["species"] = s.species;
  return j;
}

Vec3 edge_vector(const CrystalStructure& s, int i, int j, const IVec3& image) {
  const Vec3 delta(s.frac_coords[j][0] + image[0] - s.frac_coords[i][0],
                   s.frac_coords[j][1] + image[1] - s.frac_coords[i][1],
                   s.frac_coords[j][2] + image[2] - s.frac_coords[i][2]);
  return frac_to_cart(delta, s.lattice);
}

NeighborList neighbor_search(const CrystalStructure& s, double cutoff, int min_neighbors) {
  if (!(cutoff > 0.0)) throw UsageError("cutoff must be positive");
  const int n = static_cast<int>(s.size());
  NeighborList out;
  for (int attempt = 0; attempt <= kMaxCutoffExpansions; ++attempt) {
    const auto reach = plane_reach(s.lattice, cutoff);
    out.edges.clear();
    out.cutoff = cutoff;
    std::vector<int> degree(n, 0);
    for (int i = 0; i < n; ++i) {
      for (int j = 0; j < n; ++j) {
        std::array<int, 3> lo{}, hi{};
        for (int k = 0; k < 3; ++k) {
          const double d = s.frac_coords[j][k] - s.frac_coords[i][k];
          // One extra image each side absorbs rounding at the boundary.
          lo[k] = static_cast<int>(std::ceil(-reach[k] - d)) - 1;
          hi[k] = static_cast<int>(std::floor(reach[k] - d)) + 1;
        }
        for (int a = lo[0]; a <= hi[0]; ++a) {
          for (int b = lo[1]; b <= hi[1]; ++b) {
            for (int c = lo[2]; c <= hi[2]; ++c) {
              const IVec3 image{a, b, c};
              const Vec3 e = edge_vector(s, i, j, image);
              const double dist = e.norm();
              if (!edge_qualifies(dist, cutoff)) continue;
              out.edges.push_back({i, j, image, e, dist});
              ++degree[i];
            }
          }
        }
      }
    }
    if (*std::min_element(degree.begin(), degree.end()) >= min_neighbors) return out;
    cutoff *= kCutoffGrowth;
  }
  throw DataError("DegenerateLattice", "cutoff expansion did not reach min_neighbors");
}

std::vector<NeighborEdge> brute_force_neighbors(const CrystalStructure& s, double cutoff) {
  const Eigen::JacobiSVD<Mat3> svd(s.lattice);
  const double smallest = svd.singularValues().minCoeff();
  if (!(smallest > 0.0)) throw DataError("DegenerateLattice", "lattice is singular");
  // |delta_frac| <= |e| / sigma_min, plus one cell for the in-cell offset.
  const int box = static_cast<int>(std::ceil(cutoff / smallest)) + 1;
  if (box > kMaxImageSpan) throw DataError("DegenerateLattice", "image box too large");
  const int n = static_cast<int>(s.size());
  std::vector<NeighborEdge> edges;
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j < n; ++j) {
      for (int a = -box; a <= box; ++a) {
        for (int b = -box; b <= box; ++b) {
          for (int c = -box; c <= box; ++c) {
            const IVec3 image{a, b, c};
            const Vec3 e = edge_vector(s, i, j, image);
            const double dist = e.norm();
            if (edge_qualifies(dist, cutoff)) edges.push_back({i, j, image, e, dist});
          }
        }
      }
    }
  }
  return edges;
}

Eigen::VectorXd AtomFeatureVector::as_vector() const {
  return Eigen::Map<const Eigen::VectorXd>(values.data(), kAtomFeatureDim);
}

bool is_lanthanide(int z) { return z >= 57 && z <= 71; }
bool is_actinide(int z) { return z >= 89 && z <= 103; }

AtomFeatureVector encode_atom(std::string_view symbol, const kg::ElementTable& table) {
  const int known_z = atomic_number(symbol);
  if (known_z > kg::kMaxAtomicNumber) {
    throw DataError("OutOfSupportedRange", std::string(symbol) + " (Z = " +
                                               std::to_string(known_z) + ") is not supported");
  }
  const auto& rec = table.at(symbol);
  const int z = rec.atomic_number;
  if (z > kg::kMaxAtomicNumber) {
    throw DataError("OutOfSupportedRange", std::string(symbol) + " is not supported");
  }

  static const auto radius_rule = kg::uniform_rule("CovalentRadius", 32.0, 232.0, 10);
  static const auto ionization_rule = kg::uniform_rule("FirstIonizationEnergy", 3.0, 65.0, 10);

  AtomFeatureVector f;
  auto& v = f.values;
  v[kFlagOffset] = is_lanthanide(z) ? 1.0 : 0.0;
  v[kFlagOffset + 1] = is_actinide(z) ? 1.0 : 0.0;

  v[kGroupOffset + one_hot_index(rec.number("Group"), 1, 18, f.clamped)] = 1.0;

  double period = rec.number("Period");
  if (is_lanthanide(z)) period = 8;
  if (is_actinide(z)) period = 9;
  v[kPeriodOffset + one_hot_index(period, 1, 9, f.clamped)] = 1.0;

  const auto radius = kg::discretize(rec.number("CovalentRadius"), radius_rule);
  f.clamped |= radius.clamped;
  v[kRadiusOffset + radius.bin] = 1.0;

  v[kValenceOffset + one_hot_index(rec.number("ValenceElectrons"), 1, 17, f.clamped)] = 1.0;

  const auto ionization = kg::discretize(rec.number("FirstIonizationEnergy"), ionization_rule);
  f.clamped |= ionization.clamped;
  v[kIonizationOffset + ionization.bin] = 1.0;

  static constexpr std::array<std::string_view, 4> kBlocks = {"s", "p", "d", "f"};
  const auto& block = rec.label("Block");
  const auto it = std::find(kBlocks.begin(), kBlocks.end(), block);
  if (it == kBlocks.end()) {
    throw DataError("MissingAttribute", std::string(symbol) + " has unknown block '" + block + "'");
  }
  v[kBlockOffset + (it - kBlocks.begin())] = 1.0;
  return f;
}

std::vector<double> linspace(double lo, double hi, int n) {
  std::vector<double> out(n);
  if (n == 1) {
    out[0] = lo;
    return out;
  }
  const double step = (hi - lo) / (n - 1);
  for (int i = 0; i < n; ++i) out[i] = lo + step * i;
  out[n - 1] = hi;
  return out;
}

Eigen::VectorXd rbf_expand(double x, std::span<const double> centers, double gamma) {
  if (centers.empty()) throw UsageError("rbf_expand needs at least one center");
  Eigen::VectorXd out(static_cast<Eigen::Index>(centers.size()));
  for (std::size_t k = 0; k < centers.size(); ++k) {
    const double d = x - centers[k];
    out[static_cast<Eigen::Index>(k)] = std::exp(-gamma * d * d);
  }
  return out;
}

double FeaturizerConfig::edge_gamma() const {
  const double spacing = (edge_max - edge_min) / (edge_centers - 1);
  return 1.0 / (4.0 * spacing * spacing);
}

double FeaturizerConfig::angle_gamma() const {
  const double spacing = 2.0 / (angle_centers - 1);
  return 1.0 / (4.0 * spacing * spacing);
}

void FeaturizerConfig::validate() const {
  if (!(cutoff > 0.0) || min_neighbors < 0 || !(distance_scale > 0.0) || edge_centers < 2 ||
      angle_centers < 2 || !(edge_min < edge_max)) {
    throw UsageError("invalid featurizer config");
  }
}

Eigen::VectorXd edge_feature(double distance, const FeaturizerConfig& cfg) {
  if (!(distance > 0.0)) throw DataError("InvalidDistance", "edge distance must be positive");
  thread_local std::vector<double> centers;
  centers = linspace(cfg.edge_min, cfg.edge_max, cfg.edge_centers);
  return rbf_expand(cfg.distance_scale / distance, centers, cfg.edge_gamma());
}

std::array<Eigen::VectorXd, 3> angle_features(const Vec3& edge, const Mat3& lattice,
                                              const FeaturizerConfig& cfg) {
  const auto centers = linspace(-1.0, 1.0, cfg.angle_centers);
  const double gamma = cfg.angle_gamma();
  const double en = edge.norm();
  std::array<Eigen::VectorXd, 3> out;
  for (int k = 0; k < 3; ++k) {
    const Vec3 row = lattice.row(k).transpose();
    const double cosine = std::clamp(edge.dot(row) / (en * row.norm()), -1.0, 1.0);
    out[k] = rbf_expand(cosine, centers, gamma);
  }
  return out;
}

CrystalGraph build_graph(const CrystalStructure& s, const kg::ElementTable& table,
                         const FeaturizerConfig& cfg) {
  cfg.validate();
  CrystalGraph g;
  g.id = s.id;
  g.species = s.species;
  g.composition = s.composition();
  const auto n = static_cast<Eigen::Index>(s.size());
  g.node_features.resize(n, kAtomFeatureDim);
  for (Eigen::Index i = 0; i < n; ++i) {
    g.node_features.row(i) = encode_atom(s.species[i], table).as_vector().transpose();
  }

  auto neighbors = neighbor_search(s, cfg.cutoff, cfg.min_neighbors);
  g.cutoff = neighbors.cutoff;
  g.edges = std::move(neighbors.edges);
  const auto m = static_cast<Eigen::Index>(g.edges.size());
  g.edge_features.resize(m, cfg.edge_centers);
  for (auto& a : g.angle_features) a.resize(m, cfg.angle_centers);
  for (Eigen::Index e = 0; e < m; ++e) {
    const auto& edge = g.edges[e];
    g.edge_features.row(e) = edge_feature(edge.distance, cfg).transpose();
    const auto angles = angle_features(edge.vector, s.lattice, cfg);
    for (int k = 0; k < 3; ++k) g.angle_features[k].row(e) = angles[k].transpose();
  }
  for (int k = 0; k < 3; ++k) g.lattice_edge_features[k] = edge_feature(s.lattice.row(k).norm(), cfg);
  return g;
}

void write_graph(std::ostream& out, const CrystalGraph& g) {
  auto row = [&](const auto& v) {
    for (Eigen::Index c = 0; c < v.size(); ++c) out << (c ? " " : "") << text::format_double(v[c]);
  };
  out << "graph " << (g.id.empty() ? "-" : g.id) << '\n';
  out << "nodes " << g.node_features.rows() << ' ' << g.node_features.cols() << '\n';
  for (Eigen::Index i = 0; i < g.node_features.rows(); ++i) {
    out << g.species[i] << ' ';
    row(g.node_features.row(i));
    out << '\n';
  }
  out << "edges " << g.edges.size() << ' ' << g.edge_features.cols() << ' '
      << g.angle_features[0].cols() << '\n';
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const auto& edge = g.edges[e];
    const auto idx = static_cast<Eigen::Index>(e);
    out << edge.src << ' ' << edge.dst << ' ' << edge.image[0] << ' ' << edge.image[1] << ' '
        << edge.image[2] << ' ' << text::format_double(edge.distance) << " | ";
    row(g.edge_features.row(idx));
    for (int k = 0; k < 3; ++k) {
      out << " | ";
      row(g.angle_features[k].row(idx));
    }
    out << '\n';
  }
  out << "lattice " << g.lattice_edge_features[0].size() << '\n';
  for (const auto& f : g.lattice_edge_features) {
    row(f);
    out << '\n';
  }
  out << "composition " << g.composition.size() << '\n';
  for (const auto& [sym, count] : g.composition) out << sym << ' ' << text::format_double(count) << '\n';
  out << "end\n";
}

}  // namespace esnet::crystal
