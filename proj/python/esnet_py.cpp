#include <pybind11/eigen.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <fstream>

#include "esnet/config.hpp"
#include "esnet/crystal_graph.hpp"
#include "esnet/element_kg.hpp"
#include "esnet/errors.hpp"
#include "esnet/kg_embed.hpp"
#include "esnet/pipeline.hpp"
#include "esnet/train.hpp"

namespace py = pybind11;
using namespace esnet;

namespace {

crystal::CrystalStructure structure_from(const std::string& record_json) {
  return crystal::parse_structure(nlohmann::json::parse(record_json));
}

py::dict graph_dict(const crystal::CrystalGraph& g) {
  const auto m = static_cast<Eigen::Index>(g.edges.size());
  Eigen::MatrixXi pairs(m, 2), images(m, 3);
  Eigen::VectorXd dist(m);
  for (Eigen::Index e = 0; e < m; ++e) {
    const auto& edge = g.edges[static_cast<std::size_t>(e)];
    pairs(e, 0) = edge.src;
    pairs(e, 1) = edge.dst;
    for (int k = 0; k < 3; ++k) images(e, k) = edge.image[k];
    dist(e) = edge.distance;
  }
  py::dict d;
  d["node_features"] = g.node_features;
  d["edge_index"] = pairs;
  d["images"] = images;
  d["distances"] = dist;
  d["edge_features"] = g.edge_features;
  d["angle_features"] = std::vector<Eigen::MatrixXd>(g.angle_features.begin(), g.angle_features.end());
  d["cutoff"] = g.cutoff;
  d["composition"] = g.composition;
  return d;
}

py::dict neighbors_dict(const std::vector<crystal::NeighborEdge>& edges, double cutoff) {
  crystal::CrystalGraph g;
  g.edges = edges;
  g.cutoff = cutoff;
  auto d = graph_dict(g);
  py::dict out;
  for (const char* k : {"edge_index", "images", "distances", "cutoff"}) out[k] = d[k];
  return out;
}

}  // namespace

PYBIND11_MODULE(_esnet, m) {
  m.doc() = "Element-knowledge crystal property prediction (C++ core).";

  auto base = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<DataError>(m, "DataError", base.ptr());
  py::register_exception<UsageError>(m, "UsageError", base.ptr());
  py::register_exception<NumericError>(m, "NumericError", base.ptr());

  py::class_<kg::ElementTable>(m, "ElementTable")
      .def_property_readonly("symbols",
                             [](const kg::ElementTable& t) {
                               std::vector<std::string> s;
                               for (const auto& r : t.records()) s.push_back(r.symbol);
                               return s;
                             })
      .def_property_readonly("attributes",
                             [](const kg::ElementTable& t) {
                               std::vector<std::string> s;
                               for (const auto& a : t.schema()) s.push_back(a.name);
                               return s;
                             })
      .def("__len__", [](const kg::ElementTable& t) { return t.records().size(); })
      .def("atomic_number", [](const kg::ElementTable& t, const std::string& sym) { return t.at(sym).atomic_number; });

  m.def("load_element_table", &kg::load_element_table, py::arg("path"));

  m.def(
      "build_triples",
      [](const kg::ElementTable& t, int bins) {
        std::vector<std::tuple<std::string, std::string, std::string>> out;
        for (const auto& tr : kg::build_triples(t, kg::default_rules(t, bins))) {
          out.emplace_back(tr.subject, tr.predicate, tr.object);
        }
        return out;
      },
      py::arg("table"), py::arg("bins") = kg::kDefaultBins);

  m.def(
      "composition_embedding",
      [](const std::vector<std::pair<std::string, double>>& composition, const std::vector<std::string>& tokens,
         const Eigen::MatrixXd& vectors) {
        const embed::EmbeddingTable table(tokens, vectors);
        const auto h = embed::composition_embedding(composition, table);
        return std::make_pair(Eigen::VectorXd(h.vector), h.fractions);
      },
      py::arg("composition"), py::arg("tokens"), py::arg("vectors"),
      "Stoichiometry-weighted mean of element vectors; returns (vector, fractions).");

  m.def(
      "read_embeddings",
      [](const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataError("MissingInput", "cannot open " + path);
        const auto t = embed::read_embeddings(in);
        return std::make_pair(t.tokens(), Eigen::MatrixXd(t.vectors()));
      },
      py::arg("path"));

  m.def(
      "encode_atom",
      [](const std::string& symbol, const kg::ElementTable& t) { return crystal::encode_atom(symbol, t).as_vector(); },
      py::arg("symbol"), py::arg("table"));

  m.def(
      "neighbor_search",
      [](const std::string& record, double cutoff, int min_neighbors) {
        const auto nl = crystal::neighbor_search(structure_from(record), cutoff, min_neighbors);
        return neighbors_dict(nl.edges, nl.cutoff);
      },
      py::arg("structure_json"), py::arg("cutoff"), py::arg("min_neighbors") = 0);

  m.def(
      "brute_force_neighbors",
      [](const std::string& record, double cutoff) {
        return neighbors_dict(crystal::brute_force_neighbors(structure_from(record), cutoff), cutoff);
      },
      py::arg("structure_json"), py::arg("cutoff"));

  m.def(
      "build_graph",
      [](const std::string& record, const kg::ElementTable& t, const std::string& featurizer_json) {
        crystal::FeaturizerConfig cfg;
        update_from_json(nlohmann::json::parse(featurizer_json), cfg);
        return graph_dict(crystal::build_graph(structure_from(record), t, cfg));
      },
      py::arg("structure_json"), py::arg("table"), py::arg("featurizer_json") = "{}");

  m.def(
      "run_pipeline",
      [](const std::string& config_path, const std::vector<std::string>& stage_names,
         std::optional<std::uint64_t> seed, std::optional<std::string> out, std::optional<std::string> task,
         bool no_kg_encoder, const std::string& element_table) {
        pipeline::CliOverrides cli{seed, out, task, no_kg_encoder};
        auto cfg = pipeline::load_run_config(config_path, cli);
        if (cfg.paths.element_table.empty()) cfg.paths.element_table = element_table;
        std::vector<pipeline::Stage> stages;
        for (const auto& s : stage_names) stages.push_back(pipeline::parse_stage(s));
        if (stages.empty()) stages = pipeline::default_stages();
        pipeline::RunReport r;
        {
          py::gil_scoped_release release;
          r = pipeline::run_pipeline(cfg, stages);
        }
        py::dict d;
        std::vector<std::string> names;
        for (auto s : r.stages) names.push_back(pipeline::stage_name(s));
        d["stages"] = names;
        std::vector<std::tuple<int, double, std::optional<double>>> log;
        for (const auto& e : r.train_log) log.emplace_back(e.epoch, e.train_mae, e.val_mae);
        d["train_log"] = log;
        d["test_mae"] = r.test_mae;
        d["test_count"] = r.test_count;
        d["files"] = r.files;
        d["out_dir"] = cfg.paths.out_dir;
        return d;
      },
      py::arg("config_path") = "", py::arg("stages") = std::vector<std::string>{}, py::arg("seed") = py::none(),
      py::arg("out") = py::none(), py::arg("task") = py::none(), py::arg("no_kg_encoder") = false,
      py::arg("element_table") = "");

  m.def(
      "predict",
      [](const std::string& checkpoint, const std::string& record, const kg::ElementTable& t,
         const std::string& embeddings) {
        const auto ckpt = model::load_checkpoint(checkpoint);
        std::ifstream in(embeddings);
        if (!in) throw DataError("MissingInput", "cannot open " + embeddings);
        return model::predict(ckpt.model, structure_from(record), t, embed::read_embeddings(in));
      },
      py::arg("checkpoint"), py::arg("structure_json"), py::arg("table"), py::arg("embeddings"));
}
