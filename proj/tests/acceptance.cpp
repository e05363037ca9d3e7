// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fail.
#include <algorithm>
#include <array>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <set>
#include <sstream>
#include <tuple>

#include "esnet/errors.hpp"
#include "esnet/hash.hpp"
#include "esnet/pipeline.hpp"
#include "esnet/train.hpp"
#include "fixtures.hpp"

#ifndef ESNET_SOURCE_DIR
#define ESNET_SOURCE_DIR "."
#endif

using namespace esnet;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(const std::string& name, double limit_s, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  if (limit_s > 0 && secs >= limit_s) {
    o.pass = false;
    o.detail += " (over time limit " + std::to_string(limit_s) + " s)";
  }
  if (!o.pass) ++failures;
  std::printf("%s  %-26s %7.2fs  %s\n", o.pass ? "PASS" : "FAIL", name.c_str(), secs, o.detail.c_str());
  std::fflush(stdout);
}

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3g", x);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path scratch(const std::string& name) {
  const auto p = fs::temp_directory_path() / "esnet-acceptance" / name;
  fs::remove_all(p);
  return p;
}

pipeline::RunConfig toy_run(const fs::path& out, const pipeline::CliOverrides& cli = {}) {
  auto doc = nlohmann::json::parse(slurp(fixtures::data_path("toy_config.json")));
  doc["paths"]["out_dir"] = out.string();
  return pipeline::resolve_config(doc, ESNET_DATA_DIR, cli);
}

// ---------------------------------------------------------------------------

Outcome documentation() {
  const auto readme = slurp(fs::path(ESNET_SOURCE_DIR) / "README.md");
  std::string missing;
  for (const char* needle : {"0.177", "20.05", "0.182", "not reproducible"}) {
    if (readme.find(needle) == std::string::npos) missing += std::string(" ") + needle;
  }
  if (!missing.empty()) return {false, "README lacks:" + missing};
  return {true, "README states the desk-scale limitation"};
}

Outcome encoding_audit() {
  const auto& table = fixtures::elements();
  const std::vector<std::pair<int, int>> blocks = {
      {crystal::kGroupOffset, 18},   {crystal::kPeriodOffset, 9},      {crystal::kRadiusOffset, 10},
      {crystal::kValenceOffset, 17}, {crystal::kIonizationOffset, 10}, {crystal::kBlockOffset, 4}};
  int audited = 0;
  for (int z = 1; z <= 103; ++z) {
    const kg::ElementRecord* rec = nullptr;
    for (const auto& r : table.records()) {
      if (r.atomic_number == z) rec = &r;
    }
    if (!rec) return {false, "no element with Z=" + std::to_string(z)};
    const auto v = crystal::encode_atom(rec->symbol, table).as_vector();
    if (v.size() != 70) return {false, rec->symbol + " has length " + std::to_string(v.size())};
    for (const auto& [off, len] : blocks) {
      int ones = 0, others = 0;
      for (int k = off; k < off + len; ++k) {
        if (v(k) == 1.0) ++ones;
        else if (v(k) != 0.0) ++others;
      }
      if (ones != 1 || others != 0) return {false, rec->symbol + " block at " + std::to_string(off) + " not one-hot"};
    }
    const bool lan = z >= 57 && z <= 71, act = z >= 89 && z <= 103;
    if (v(0) != (lan ? 1.0 : 0.0) || v(1) != (act ? 1.0 : 0.0)) return {false, rec->symbol + " f-block flags wrong"};
    ++audited;
  }
  return {true, std::to_string(audited) + " elements, 6 one-hot blocks each, flags correct"};
}

Outcome neighbor_oracle() {
  Rng rng(2024);
  std::size_t edges = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 50; ++trial) {
    const auto s = fixtures::random_structure(rng, 8, 2.0, 6.0);
    const double cutoff = rng.uniform(2.5, 6.0);
    const auto fast = crystal::neighbor_search(s, cutoff, 0).edges;
    const auto brute = crystal::brute_force_neighbors(s, cutoff);
    using Key = std::tuple<int, int, int, int, int>;
    std::map<Key, double> a, b;
    for (const auto& e : fast) a[Key{e.src, e.dst, e.image[0], e.image[1], e.image[2]}] = e.distance;
    for (const auto& e : brute) b[Key{e.src, e.dst, e.image[0], e.image[1], e.image[2]}] = e.distance;
    if (a.size() != fast.size() || b.size() != brute.size()) return {false, "duplicate edges in trial " + std::to_string(trial)};
    if (a.size() != b.size()) {
      return {false, "trial " + std::to_string(trial) + ": " + std::to_string(a.size()) + " vs " +
                         std::to_string(b.size()) + " edges"};
    }
    for (const auto& [k, d] : a) {
      const auto it = b.find(k);
      if (it == b.end()) return {false, "edge set differs in trial " + std::to_string(trial)};
      worst = std::max(worst, std::abs(d - it->second));
    }
    edges += a.size();
  }
  if (worst >= 1e-12) return {false, "max distance diff " + fmt(worst)};
  return {true, "50 structures, " + std::to_string(edges) + " edges identical, max |dd| " + fmt(worst)};
}

Eigen::VectorXd pooled_graph_features(const crystal::CrystalGraph& g) {
  std::vector<Eigen::VectorXd> parts;
  parts.push_back(g.node_features.colwise().mean().transpose());
  parts.push_back(g.edge_features.colwise().mean().transpose());
  for (const auto& a : g.angle_features) parts.push_back(a.colwise().mean().transpose());
  Eigen::Index n = 0;
  for (const auto& p : parts) n += p.size();
  Eigen::VectorXd out(n);
  n = 0;
  for (const auto& p : parts) {
    out.segment(n, p.size()) = p;
    n += p.size();
  }
  return out;
}

Outcome invariance() {
  auto cfg = fixtures::toy_config();
  const auto& elements = fixtures::elements();
  const auto table = fixtures::random_embeddings(cfg.kg_dim, 9);
  const model::Model m{cfg, model::init_params(cfg), 1.3, 0.8};
  Rng rng(77);
  double feat = 0.0, pred = 0.0, perm = 0.0, super = 0.0;
  double lo = INFINITY, hi = -INFINITY;
  int structures = 0;
  for (int k = 0; k < 5; ++k, ++structures) {
    const auto s = fixtures::random_structure(rng, 5);
    const auto g = crystal::build_graph(s, elements, cfg.featurizer);
    const double p0 = model::predict(m, s, elements, table);
    lo = std::min(lo, p0);
    hi = std::max(hi, p0);
    for (int r = 0; r < 20; ++r) {
      const auto rs = fixtures::rotated(s, fixtures::random_rotation(rng));
      const auto h = crystal::build_graph(rs, elements, cfg.featurizer);
      if (h.num_edges() != g.num_edges()) return {false, "rotation changed the edge count"};
      feat = std::max({feat, fixtures::max_abs_diff(g.node_features, h.node_features),
                       fixtures::max_abs_diff(g.edge_features, h.edge_features)});
      for (int c = 0; c < 3; ++c) {
        feat = std::max({feat, fixtures::max_abs_diff(g.angle_features[c], h.angle_features[c]),
                         fixtures::max_abs_diff(g.lattice_edge_features[c], h.lattice_edge_features[c])});
      }
      pred = std::max(pred, std::abs(model::predict(m, rs, elements, table) - p0));
    }

    std::vector<std::size_t> order(s.size());
    std::iota(order.begin(), order.end(), 0);
    std::reverse(order.begin(), order.end());
    std::vector<std::string> sp;
    std::vector<crystal::Vec3> fc;
    for (auto i : order) {
      sp.push_back(s.species[i]);
      fc.push_back(s.frac_coords[i]);
    }
    const auto ps = crystal::make_structure("perm", s.lattice, sp, fc);
    perm = std::max(perm, std::abs(model::predict(m, ps, elements, table) - p0));

    crystal::Mat3 l2 = s.lattice;
    l2.row(0) *= 2.0;
    sp.clear();
    fc.clear();
    for (int copy = 0; copy < 2; ++copy) {
      for (std::size_t i = 0; i < s.size(); ++i) {
        sp.push_back(s.species[i]);
        fc.emplace_back((s.frac_coords[i](0) + copy) / 2.0, s.frac_coords[i](1), s.frac_coords[i](2));
      }
    }
    auto fz = cfg.featurizer;
    fz.min_neighbors = 0;
    const auto big = crystal::make_structure("super", l2, sp, fc);
    const auto a = pooled_graph_features(crystal::build_graph(s, elements, fz));
    const auto b = pooled_graph_features(crystal::build_graph(big, elements, fz));
    super = std::max(super, fixtures::max_abs_diff(a, b));
  }
  // Predictions must also vary across structures.
  const bool ok = feat < 1e-8 && pred < 1e-8 && perm < 1e-10 && super < 1e-6 && hi - lo > 1e-3;
  return {ok, std::to_string(structures) + " structures x 20 rotations: features " + fmt(feat) + ", predictions " +
                  fmt(pred) + "; permutation " + fmt(perm) + "; supercell pooled " + fmt(super) +
                  "; prediction spread " + fmt(hi - lo)};
}

double skipgram_objective(const embed::SkipGramModel& m, std::uint32_t c, std::uint32_t ctx,
                          const std::vector<std::uint32_t>& neg) {
  auto nls = [](double x) { return std::log1p(std::exp(-x)); };
  const Eigen::VectorXd v = m.input.row(c).transpose();
  double loss = nls(m.output.row(ctx).dot(v));
  for (auto n : neg) loss += nls(-m.output.row(n).dot(v));
  return loss;
}

Outcome gradients() {
  const auto cfg = fixtures::toy_config();
  const auto params = model::init_params(cfg);
  const auto table = fixtures::random_embeddings(cfg.kg_dim, 3);
  Rng rng(5);
  const auto in = fixtures::inputs_for(fixtures::random_structure(rng, 4), table, cfg);
  model::Model m{cfg, params, 0.0, 1.0};
  const double pred = model::predict(m, in);
  const auto r = model::grad_check(params, cfg, in, pred + 0.6, model::LossKind::MSE, 1e-5, 200);

  embed::Corpus corpus;
  corpus.add({"Na", "isGroupOf", "Group1", "isGroupOf", "K"});
  corpus.add({"Cl", "isGroupOf", "Group17", "isGroupOf", "F"});
  embed::SkipGramConfig sc;
  sc.dim = 8;
  auto sg = embed::init_skipgram(corpus, sc);
  const auto v = static_cast<std::uint64_t>(sg.vocab.size());
  double worst = 0.0;
  const double h = 1e-6;
  for (int draw = 0; draw < 100; ++draw) {
    for (Eigen::Index i = 0; i < sg.input.size(); ++i) sg.input.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < sg.output.size(); ++i) sg.output.data()[i] = rng.normal();
    const auto c = static_cast<std::uint32_t>(rng.below(v));
    const auto ctx = static_cast<std::uint32_t>(rng.below(v));
    std::vector<std::uint32_t> neg;
    for (int k = 0; k < 5; ++k) neg.push_back(static_cast<std::uint32_t>(rng.below(v)));
    const auto g = embed::skipgram_loss_grad(sg, c, ctx, neg);
    double d2 = 0.0, a2 = 0.0, n2 = 0.0;
    auto sweep = [&](embed::RowMatrix& w, const std::map<std::uint32_t, Eigen::VectorXd>& grads) {
      for (Eigen::Index row = 0; row < w.rows(); ++row) {
        for (Eigen::Index col = 0; col < w.cols(); ++col) {
          const double saved = w(row, col);
          w(row, col) = saved + h;
          const double up = skipgram_objective(sg, c, ctx, neg);
          w(row, col) = saved - h;
          const double down = skipgram_objective(sg, c, ctx, neg);
          w(row, col) = saved;
          const double num = (up - down) / (2 * h);
          const auto it = grads.find(static_cast<std::uint32_t>(row));
          const double ana = it == grads.end() ? 0.0 : it->second(col);
          d2 += (num - ana) * (num - ana);
          a2 += ana * ana;
          n2 += num * num;
        }
      }
    };
    sweep(sg.input, g.input);
    sweep(sg.output, g.output);
    worst = std::max(worst, std::sqrt(d2) / std::max({std::sqrt(a2), std::sqrt(n2), 1e-12}));
  }
  const bool ok = r.max_rel_error < 1e-4 && r.coordinates >= 200 && r.tensors_covered == params.size() &&
                  worst < 1e-6;
  return {ok, "model max rel " + fmt(r.max_rel_error) + " over " + std::to_string(r.coordinates) +
                  " coords / " + std::to_string(r.tensors_covered) + " tensors; skip-gram " + fmt(worst)};
}

Outcome overfit() {
  pipeline::CliOverrides cli;
  cli.task = "band_gap";
  const auto cfg = pipeline::resolve_config(nlohmann::json::object(), "", cli);
  if (cfg.model.num_fusion_layers != 8 || cfg.train.learning_rate != 5e-4 ||
      cfg.train.loss != model::LossKind::L1) {
    return {false, "band_gap preset not applied"};
  }
  auto mcfg = cfg.model;
  auto tcfg = cfg.train;
  tcfg.epochs = 500;
  const auto table = fixtures::random_embeddings(mcfg.kg_dim, 13);
  Rng rng(8);
  std::vector<model::TrainSample> data;
  for (int i = 0; i < 20; ++i) {
    const auto s = fixtures::random_structure(rng, 4, 3.0, 5.0);
    data.push_back({"syn" + std::to_string(i), fixtures::inputs_for(s, table, mcfg), rng.uniform(0.0, 4.0)});
  }
  const auto r = model::train_loop(data, {}, mcfg, tcfg);
  const double first = r.log.front().train_mae, last = r.log.back().train_mae;
  return {last < 0.05 * first, "epoch 1 MAE " + fmt(first) + " eV, epoch 500 MAE " + fmt(last) + " eV (" +
                                   fmt(100 * last / first) + "%)"};
}

Outcome embedding_clusters() {
  std::vector<kg::Triple> triples;
  const std::vector<std::string> a = {"Aa", "Ab", "Ac", "Ad", "Ae"}, b = {"Ba", "Bb", "Bc", "Bd", "Be"};
  for (const auto& e : a) {
    triples.push_back({e, "isColorOf", "ColorRed"});
    triples.push_back({e, "isShapeOf", "ShapeRound"});
  }
  for (const auto& e : b) {
    triples.push_back({e, "isColorOf", "ColorBlue"});
    triples.push_back({e, "isShapeOf", "ShapeSquare"});
  }
  const auto graph = kg::build_kg(triples);
  embed::WalkConfig w;
  w.walks_per_entity = 20;
  embed::SkipGramConfig sc;
  sc.dim = 16;
  sc.epochs = 10;
  const auto corpus = embed::merge_corpora(embed::structural_document(graph, w), embed::lexical_document(graph));
  const auto t = embed::train_skipgram(corpus, sc).table;
  double intra = 0, inter = 0;
  int ni = 0, nx = 0;
  std::vector<std::string> all = a;
  all.insert(all.end(), b.begin(), b.end());
  for (std::size_t i = 0; i < all.size(); ++i) {
    for (std::size_t j = i + 1; j < all.size(); ++j) {
      const double c = embed::cosine_similarity(t.vector(all[i]), t.vector(all[j]));
      if ((i < a.size()) == (j < a.size())) {
        intra += c;
        ++ni;
      } else {
        inter += c;
        ++nx;
      }
    }
  }
  intra /= ni;
  inter /= nx;
  return {intra > inter, "mean intra " + fmt(intra) + " vs inter " + fmt(inter)};
}

Outcome composition() {
  const auto table = fixtures::random_embeddings(16, 31);
  const auto h = embed::composition_embedding({{"Na", 2}, {"Al", 2}, {"Si", 6}, {"O", 16}}, table);
  const Eigen::VectorXd direct = (2 * table.vector("Na") + 2 * table.vector("Al") + 6 * table.vector("Si") +
                                  16 * table.vector("O")) / 26.0;
  const double err = (h.vector - direct).cwiseAbs().maxCoeff();
  double kdiff = 0.0;
  for (int k = 1; k <= 6; ++k) {
    const auto hk = embed::composition_embedding({{"Na", 1.0 * k}, {"Al", 1.0 * k}, {"Si", 3.0 * k}, {"O", 8.0 * k}},
                                                 table);
    for (std::size_t i = 0; i < hk.fractions.size(); ++i) {
      if (hk.fractions[i].first != h.fractions[i].first) return {false, "fraction order changed"};
      kdiff = std::max(kdiff, std::abs(hk.fractions[i].second - h.fractions[i].second));
    }
    kdiff = std::max(kdiff, (hk.vector - h.vector).cwiseAbs().maxCoeff());
  }
  return {err < 1e-12 && kdiff < 1e-12, "|H_e - direct| " + fmt(err) + ", k=1..6 variation " + fmt(kdiff)};
}

const fs::path& full_run(int which) {
  static const std::array<fs::path, 2> dirs = [] {
    std::array<fs::path, 2> d{scratch("full1"), scratch("full2")};
    for (const auto& p : d) pipeline::run_pipeline(toy_run(p), pipeline::default_stages());
    return d;
  }();
  return dirs[which];
}

Outcome ablation() {
  pipeline::CliOverrides cli;
  cli.no_kg_encoder = true;
  const auto out = scratch("ablation");
  const auto cfg = toy_run(out, cli);
  const auto rep = pipeline::run_pipeline(cfg, pipeline::default_stages());
  const auto abl = model::load_checkpoint((out / "checkpoint.bin").string());
  const auto full = model::load_checkpoint((full_run(0) / "checkpoint.bin").string());
  std::ifstream emb(out / "embeddings.txt");
  const auto table = embed::read_embeddings(emb);
  Rng rng(99);
  const auto s = fixtures::random_structure(rng, 6);
  const auto in =
      model::make_inputs(crystal::build_graph(s, fixtures::elements(), cfg.model.featurizer), table, abl.model.config);
  const double pa = model::predict(abl.model, s, fixtures::elements(), table);
  const double pf = model::predict(full.model, s, fixtures::elements(), table);
  const bool ok = abl.model.config.ablation == model::AblationMode::AttrsAsNodeFeatures &&
                  in.node_features.cols() == 70 + cfg.model.kg_dim && rep.test_mae.has_value() && pa != pf;
  return {ok, "node width " + std::to_string(in.node_features.cols()) + " (70+" + std::to_string(cfg.model.kg_dim) +
                  "), test MAE " + fmt(rep.test_mae.value_or(NAN)) + ", prediction " + fmt(pa) + " vs full " +
                  fmt(pf)};
}

Outcome determinism() {
  const bool metrics = slurp(full_run(0) / "metrics.tsv") == slurp(full_run(1) / "metrics.tsv");
  const auto h1 = sha256_file((full_run(0) / "checkpoint.bin").string());
  const auto h2 = sha256_file((full_run(1) / "checkpoint.bin").string());
  return {metrics && h1 == h2, std::string("metrics ") + (metrics ? "identical" : "differ") +
                                   ", checkpoint sha256 " + h1.substr(0, 16) + (h1 == h2 ? " == " : " != ") +
                                   h2.substr(0, 16)};
}

}  // namespace

int main() {
  report("documentation", 0, documentation);
  report("encoding audit", 1.0, encoding_audit);
  report("neighbor oracle", 10.0, neighbor_oracle);
  report("invariance", 0, invariance);
  report("gradient verification", 60.0, gradients);
  report("overfit", 300.0, overfit);
  report("embedding sanity", 30.0, embedding_clusters);
  report("composition embedding", 0, composition);
  report("ablation path", 0, ablation);
  report("determinism", 0, determinism);
  std::printf("%d failed\n", failures);
  return failures == 0 ? 0 : 1;
}
