#include "esnet/pipeline.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <istream>
#include <numeric>
#include <set>
#include <sstream>

#include "esnet/config.hpp"
#include "esnet/hash.hpp"
#include "esnet/parallel.hpp"
#include "esnet/rng.hpp"
#include "esnet/text.hpp"

#ifndef ESNET_DEFAULT_ELEMENT_TABLE
#define ESNET_DEFAULT_ELEMENT_TABLE "data/elements.tsv"
#endif

namespace fs = std::filesystem;

namespace esnet::pipeline {

namespace {

std::string line_error(std::size_t line, const std::string& what) {
  return "line " + std::to_string(line) + ": " + what;
}

DatasetRecord parse_record(const std::string& line) {
  const auto j = nlohmann::json::parse(line);
  DatasetRecord rec;
  rec.structure = crystal::parse_structure(j);
  if (j.contains("targets")) {
    const auto& t = j.at("targets");
    if (!t.is_object()) throw DataError("ParseError", "targets must be an object");
    for (const auto& [name, value] : t.items()) {
      if (value.is_null()) continue;
      if (!value.is_number()) throw DataError("ParseError", "target " + name + " is not a number");
      const double v = value.get<double>();
      if (!std::isfinite(v)) throw DataError("ParseError", "target " + name + " is not finite");
      rec.targets[name] = v;
    }
  }
  if (j.contains("units")) {
    const auto& u = j.at("units");
    if (!u.is_object()) throw DataError("ParseError", "units must be an object");
    for (const auto& [name, value] : u.items()) rec.units[name] = value.get<std::string>();
  }
  return rec;
}

std::string hex64(std::uint64_t v) {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

fs::path resolve_path(const std::string& base, const std::string& p) {
  if (p.empty() || base.empty()) return p;
  const fs::path path(p);
  return path.is_absolute() ? path : fs::path(base) / path;
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("WriteError", "cannot write " + path.string());
  body(out);
  out.flush();
  if (!out) throw DataError("WriteError", "failed writing " + path.string());
}

std::ifstream open_input(const fs::path& path, const std::string& what) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("MissingInput", what + " not found at " + path.string());
  return in;
}

// Values carried between stages of one run.
struct Context {
  const RunConfig& cfg;
  fs::path out;
  RunReport& report;
  std::optional<kg::ElementTable> elements;
  std::optional<std::vector<kg::Triple>> triples;
  std::optional<embed::EmbeddingTable> embeddings;
  std::optional<std::vector<DatasetRecord>> dataset;

  void wrote(const std::string& name) { report.files.push_back(name); }

  const kg::ElementTable& element_table() {
    if (!elements) {
      const std::string path =
          cfg.paths.element_table.empty() ? ESNET_DEFAULT_ELEMENT_TABLE : cfg.paths.element_table;
      if (!fs::exists(path)) throw DataError("MissingInput", "element table not found at " + path);
      elements = kg::load_element_table(path);
    }
    return *elements;
  }

  const embed::EmbeddingTable& embedding_table() {
    if (!embeddings) {
      const auto path = cfg.embeddings_path();
      if (!fs::exists(path)) {
        throw DataError("MissingInput", "no embedding table at " + path + " (run kg-embed first)");
      }
      auto in = open_input(path, "embedding table");
      embeddings = embed::read_embeddings(in);
    }
    return *embeddings;
  }

  const std::vector<DatasetRecord>& records() {
    if (!dataset) {
      if (cfg.paths.dataset.empty()) throw DataError("MissingInput", "no dataset path configured");
      if (!fs::exists(cfg.paths.dataset)) {
        throw DataError("MissingInput", "dataset not found at " + cfg.paths.dataset);
      }
      dataset = load_dataset(cfg.paths.dataset);
    }
    return *dataset;
  }

  int threads() const { return resolve_threads(cfg.train.threads); }
};

SplitSpec effective_split(const SplitSpec& spec, std::size_t n) {
  if (spec.n_train + spec.n_val + spec.n_test != 0) return spec;
  SplitSpec s = spec;
  s.n_val = n / 10;
  s.n_test = n / 10;
  s.n_train = n - s.n_val - s.n_test;
  return s;
}

void check_units(const std::vector<DatasetRecord>& records, const RunConfig& cfg) {
  for (const auto& r : records) {
    const auto it = r.units.find(cfg.target);
    if (it != r.units.end() && it->second != cfg.unit) {
      throw DataError("UnitMismatch", "record " + r.structure.id + " gives " + cfg.target + " in " +
                                          it->second + ", run expects " + cfg.unit);
    }
  }
}

std::vector<model::TrainSample> to_samples(Context& ctx, const std::vector<DatasetRecord>& records,
                                           const model::ModelConfig& mcfg, bool need_target) {
  const auto& elements = ctx.element_table();
  const auto& table = ctx.embedding_table();
  if (need_target) require_target(records, ctx.cfg.target);
  std::vector<model::TrainSample> out(records.size());
  parallel_for(records.size(), ctx.threads(), [&](std::size_t i) {
    const auto& r = records[i];
    const auto graph = crystal::build_graph(r.structure, elements, mcfg.featurizer);
    out[i].id = r.structure.id;
    out[i].inputs = model::make_inputs(graph, table, mcfg);
    const auto t = r.targets.find(ctx.cfg.target);
    if (t != r.targets.end()) out[i].target = t->second;
  });
  return out;
}

void stage_kg_build(Context& ctx) {
  const auto& table = ctx.element_table();
  ctx.triples = kg::build_triples(table, kg::default_rules(table, ctx.cfg.bins));
  write_file(ctx.out / "triples.tsv", [&](std::ostream& o) { kg::write_triples(o, *ctx.triples); });
  ctx.wrote("triples.tsv");
}

void stage_kg_embed(Context& ctx) {
  if (!ctx.triples) {
    const auto path = ctx.out / "triples.tsv";
    if (fs::exists(path)) {
      auto in = open_input(path, "triples");
      ctx.triples = kg::read_triples(in);
    } else {
      const auto& table = ctx.element_table();
      ctx.triples = kg::build_triples(table, kg::default_rules(table, ctx.cfg.bins));
    }
  }
  const auto graph = kg::build_kg(*ctx.triples);
  const auto corpus = embed::merge_corpora(embed::structural_document(graph, ctx.cfg.walk),
                                           embed::lexical_document(graph));
  write_file(ctx.out / "corpus.txt", [&](std::ostream& o) { embed::write_corpus(o, corpus); });
  ctx.wrote("corpus.txt");
  auto result = embed::train_skipgram(corpus, ctx.cfg.skipgram);
  write_file(ctx.out / "embed_loss.tsv", [&](std::ostream& o) {
    for (std::size_t e = 0; e < result.epoch_loss.size(); ++e) {
      o << e + 1 << '\t' << text::format_double(result.epoch_loss[e]) << '\n';
    }
  });
  ctx.wrote("embed_loss.tsv");
  const auto path = ctx.cfg.embeddings_path();
  write_file(path, [&](std::ostream& o) { embed::write_embeddings(o, result.table); });
  if (fs::path(path).parent_path() == ctx.out) ctx.wrote("embeddings.txt");
  ctx.embeddings = std::move(result.table);
}

void stage_featurize(Context& ctx) {
  ctx.embedding_table();
  const auto& elements = ctx.element_table();
  const auto& records = ctx.records();
  std::vector<crystal::CrystalGraph> graphs(records.size());
  parallel_for(records.size(), ctx.threads(), [&](std::size_t i) {
    graphs[i] = crystal::build_graph(records[i].structure, elements, ctx.cfg.model.featurizer);
  });
  write_file(ctx.out / "graphs.txt", [&](std::ostream& o) {
    for (const auto& g : graphs) crystal::write_graph(o, g);
  });
  ctx.wrote("graphs.txt");
}

void stage_train(Context& ctx) {
  const auto& records = ctx.records();
  check_units(records, ctx.cfg);
  const auto splits = split_dataset(records, effective_split(ctx.cfg.split, records.size()));
  const auto train = to_samples(ctx, splits.train, ctx.cfg.model, true);
  const auto val = to_samples(ctx, splits.val, ctx.cfg.model, true);
  auto result = model::train_loop(train, val, ctx.cfg.model, ctx.cfg.train);
  ctx.report.train_log = result.log;
  write_file(ctx.cfg.checkpoint_path(),
             [&](std::ostream& o) { model::save_checkpoint(o, result.best); });
  if (fs::path(ctx.cfg.checkpoint_path()).parent_path() == ctx.out) ctx.wrote("checkpoint.bin");
  write_file(ctx.out / "metrics.tsv", [&](std::ostream& o) { model::write_metrics(o, result.log); });
  ctx.wrote("metrics.tsv");
}

model::Model load_model(Context& ctx) {
  auto in = open_input(ctx.cfg.checkpoint_path(), "checkpoint");
  return model::load_checkpoint(in).model;
}

void stage_evaluate(Context& ctx) {
  const auto& records = ctx.records();
  check_units(records, ctx.cfg);
  const auto splits = split_dataset(records, effective_split(ctx.cfg.split, records.size()));
  if (splits.test.empty()) throw DataError("EmptyInput", "test split is empty");
  const auto m = load_model(ctx);
  const auto test = to_samples(ctx, splits.test, m.config, true);
  std::vector<double> preds(test.size());
  parallel_for(test.size(), ctx.threads(),
               [&](std::size_t i) { preds[i] = model::predict(m, test[i].inputs); });
  std::vector<double> targets;
  for (const auto& s : test) targets.push_back(s.target);
  const double err = mae(preds, targets);
  ctx.report.test_mae = err;
  ctx.report.test_count = test.size();
  write_file(ctx.out / "eval.tsv", [&](std::ostream& o) {
    o << "split\tcount\tmae\tunit\n";
    o << "test\t" << test.size() << '\t' << text::format_double(err) << '\t' << ctx.cfg.unit << '\n';
  });
  ctx.wrote("eval.tsv");
  write_file(ctx.out / "residuals.tsv", [&](std::ostream& o) {
    o << "id\ttarget\tprediction\tresidual\n";
    for (std::size_t i = 0; i < test.size(); ++i) {
      o << test[i].id << '\t' << text::format_double(targets[i]) << '\t'
        << text::format_double(preds[i]) << '\t' << text::format_double(preds[i] - targets[i])
        << '\n';
    }
  });
  ctx.wrote("residuals.tsv");
}

void stage_predict(Context& ctx) {
  const auto& records = ctx.records();
  const auto m = load_model(ctx);
  const auto samples = to_samples(ctx, records, m.config, false);
  std::vector<double> preds(samples.size());
  parallel_for(samples.size(), ctx.threads(),
               [&](std::size_t i) { preds[i] = model::predict(m, samples[i].inputs); });
  write_file(ctx.out / "predictions.tsv", [&](std::ostream& o) {
    o << "id\tprediction\tunit\n";
    for (std::size_t i = 0; i < samples.size(); ++i) {
      o << samples[i].id << '\t' << text::format_double(preds[i]) << '\t' << ctx.cfg.unit << '\n';
    }
  });
  ctx.wrote("predictions.tsv");
}

void write_manifest(const RunConfig& cfg, const fs::path& out, const RunReport& report) {
  std::set<std::string> names;
  for (const auto& entry : fs::directory_iterator(out)) {
    if (entry.is_regular_file() && entry.path().filename() != "manifest.json") {
      names.insert(entry.path().filename().string());
    }
  }
  nlohmann::json files = nlohmann::json::object();
  for (const auto& n : names) files[n] = sha256_file((out / n).string());
  nlohmann::json stages = nlohmann::json::array();
  for (const auto s : report.stages) stages.push_back(stage_name(s));
  const auto effective = to_json(cfg);
  const nlohmann::json doc = {
      {"format", "esnet-manifest-1"},
      {"stages", stages},
      {"config", effective},
      {"seeds",
       {{"walk", cfg.walk.seed},
        {"skipgram", cfg.skipgram.seed},
        {"model", cfg.model.seed},
        {"train", cfg.train.seed},
        {"split", cfg.split.seed}}},
      {"config_hashes",
       {{"run_sha256", sha256_hex(effective.dump())},
        {"model_train", hex64(model::config_hash(cfg.model, cfg.train))}}},
      {"files", files}};
  write_file(out / "manifest.json", [&](std::ostream& o) { o << doc.dump(2) << '\n'; });
}

}  // namespace

std::vector<DatasetRecord> parse_dataset(std::istream& in) {
  std::vector<DatasetRecord> out;
  std::string line;
  std::size_t number = 0;
  while (std::getline(in, line)) {
    ++number;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(parse_record(line));
    } catch (const Error& e) {
      throw DataError("ParseError", line_error(number, e.code() + ": " + e.detail()));
    } catch (const nlohmann::json::exception& e) {
      throw DataError("ParseError", line_error(number, e.what()));
    }
  }
  return out;
}

std::vector<DatasetRecord> load_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("MissingInput", "cannot open dataset " + path);
  return parse_dataset(in);
}

void require_target(const std::vector<DatasetRecord>& records, const std::string& property) {
  for (const auto& r : records) {
    if (!r.targets.count(property)) {
      throw DataError("MissingTarget", "record " + r.structure.id + " has no " + property);
    }
  }
}

Splits split_dataset(const std::vector<DatasetRecord>& records, const SplitSpec& spec) {
  const std::size_t total = spec.n_train + spec.n_val + spec.n_test;
  if (total > records.size()) {
    throw DataError("SizeExceeded", "split needs " + std::to_string(total) + " records, dataset has " +
                                        std::to_string(records.size()));
  }
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  Rng rng(stream_seed(spec.seed, 0x5b1, 0));
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  Splits s;
  std::size_t k = 0;
  for (; k < spec.n_train; ++k) s.train.push_back(records[order[k]]);
  for (; k < spec.n_train + spec.n_val; ++k) s.val.push_back(records[order[k]]);
  for (; k < total; ++k) s.test.push_back(records[order[k]]);
  return s;
}

double mae(std::span<const double> preds, std::span<const double> targets) {
  if (preds.size() != targets.size()) {
    throw DataError("LengthMismatch", std::to_string(preds.size()) + " predictions vs " +
                                          std::to_string(targets.size()) + " targets");
  }
  if (preds.empty()) throw DataError("EmptyInput", "mae of no values");
  double sum = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) sum += std::abs(preds[i] - targets[i]);
  return sum / static_cast<double>(preds.size());
}

const std::vector<TaskPreset>& task_presets() {
  static const std::vector<TaskPreset> presets = {
      {"band_gap", "band_gap", "eV", 8, 0.0005, model::LossKind::L1},
      {"formation_energy", "formation_energy", "eV/atom", 4, 0.0007, model::LossKind::MSE},
  };
  return presets;
}

const TaskPreset& task_preset(const std::string& name) {
  for (const auto& p : task_presets()) {
    if (p.name == name) return p;
  }
  throw UsageError("unknown task preset '" + name + "' (expected band_gap or formation_energy)");
}

std::string stage_name(Stage stage) {
  switch (stage) {
    case Stage::KgBuild: return "kg-build";
    case Stage::KgEmbed: return "kg-embed";
    case Stage::Featurize: return "featurize";
    case Stage::Train: return "train";
    case Stage::Evaluate: return "evaluate";
    case Stage::Predict: return "predict";
  }
  return "unknown";
}

Stage parse_stage(const std::string& name) {
  for (const auto s : {Stage::KgBuild, Stage::KgEmbed, Stage::Featurize, Stage::Train,
                       Stage::Evaluate, Stage::Predict}) {
    if (stage_name(s) == name) return s;
  }
  throw UsageError("unknown stage '" + name + "'");
}

std::vector<Stage> default_stages() {
  return {Stage::KgBuild, Stage::KgEmbed, Stage::Featurize, Stage::Train, Stage::Evaluate};
}

void RunConfig::validate() const {
  walk.validate();
  skipgram.validate();
  model.validate();
  train.validate();
  if (skipgram.dim != model.kg_dim) {
    throw UsageError("skipgram.dim (" + std::to_string(skipgram.dim) + ") must equal model.kg_dim (" +
                     std::to_string(model.kg_dim) + ")");
  }
  if (bins < 1) throw UsageError("bins must be >= 1");
  if (paths.out_dir.empty()) throw UsageError("output directory is empty");
  if (target.empty()) throw UsageError("target property is empty");
}

std::string RunConfig::embeddings_path() const {
  return paths.embeddings.empty() ? (fs::path(paths.out_dir) / "embeddings.txt").string()
                                  : paths.embeddings;
}

std::string RunConfig::checkpoint_path() const {
  return paths.checkpoint.empty() ? (fs::path(paths.out_dir) / "checkpoint.bin").string()
                                  : paths.checkpoint;
}

void apply_preset(const TaskPreset& preset, RunConfig& cfg) {
  cfg.task = preset.name;
  cfg.target = preset.target;
  cfg.unit = preset.unit;
  cfg.model.num_fusion_layers = preset.num_fusion_layers;
  cfg.train.learning_rate = preset.learning_rate;
  cfg.train.loss = preset.loss;
}

void set_seed(RunConfig& cfg, std::uint64_t seed) {
  cfg.walk.seed = seed;
  cfg.skipgram.seed = seed;
  cfg.model.seed = seed;
  cfg.train.seed = seed;
  cfg.split.seed = seed;
}

nlohmann::json to_json(const RunConfig& cfg) {
  return {{"paths",
           {{"element_table", cfg.paths.element_table},
            {"dataset", cfg.paths.dataset},
            {"embeddings", cfg.paths.embeddings},
            {"checkpoint", cfg.paths.checkpoint},
            {"out_dir", cfg.paths.out_dir}}},
          {"task", cfg.task},
          {"target", cfg.target},
          {"unit", cfg.unit},
          {"bins", cfg.bins},
          {"walk", esnet::to_json(cfg.walk)},
          {"skipgram", esnet::to_json(cfg.skipgram)},
          {"model", esnet::to_json(cfg.model)},
          {"train", esnet::to_json(cfg.train)},
          {"split",
           {{"n_train", cfg.split.n_train},
            {"n_val", cfg.split.n_val},
            {"n_test", cfg.split.n_test},
            {"seed", cfg.split.seed}}}};
}

RunConfig resolve_config(const nlohmann::json& doc, const std::string& base_dir,
                         const CliOverrides& cli) {
  if (!doc.is_null() && !doc.is_object()) throw UsageError("config must be a JSON object");
  static const std::set<std::string> known = {"paths", "task",  "target", "unit",  "bins", "seed",
                                              "walk",  "skipgram", "model", "train", "split"};
  if (doc.is_object()) {
    for (const auto& [key, value] : doc.items()) {
      if (!known.count(key)) throw UsageError("unknown config key '" + key + "'");
    }
  }
  auto get = [&](const char* key) -> const nlohmann::json* {
    return doc.is_object() && doc.contains(key) ? &doc.at(key) : nullptr;
  };
  try {
    RunConfig cfg;
    std::string task = cli.task.value_or("");
    if (task.empty()) {
      if (const auto* t = get("task")) task = t->get<std::string>();
    }
    if (!task.empty()) apply_preset(task_preset(task), cfg);
    if (const auto* s = get("seed")) set_seed(cfg, s->get<std::uint64_t>());
    if (const auto* p = get("paths")) {
      if (!p->is_object()) throw UsageError("paths must be an object");
      auto path = [&](const char* key, std::string& field) {
        if (p->contains(key)) field = resolve_path(base_dir, p->at(key).get<std::string>()).string();
      };
      path("element_table", cfg.paths.element_table);
      path("dataset", cfg.paths.dataset);
      path("embeddings", cfg.paths.embeddings);
      path("checkpoint", cfg.paths.checkpoint);
      path("out_dir", cfg.paths.out_dir);
    }
    if (const auto* t = get("target")) cfg.target = t->get<std::string>();
    if (const auto* u = get("unit")) cfg.unit = u->get<std::string>();
    if (const auto* b = get("bins")) cfg.bins = b->get<int>();
    if (const auto* w = get("walk")) update_from_json(*w, cfg.walk);
    if (const auto* s = get("skipgram")) update_from_json(*s, cfg.skipgram);
    if (const auto* m = get("model")) update_from_json(*m, cfg.model);
    if (const auto* t = get("train")) update_from_json(*t, cfg.train);
    if (const auto* s = get("split")) {
      if (!s->is_object()) throw UsageError("split must be an object");
      cfg.split.n_train = s->value("n_train", cfg.split.n_train);
      cfg.split.n_val = s->value("n_val", cfg.split.n_val);
      cfg.split.n_test = s->value("n_test", cfg.split.n_test);
      cfg.split.seed = s->value("seed", cfg.split.seed);
    }
    if (cli.seed) set_seed(cfg, *cli.seed);
    if (cli.out_dir) cfg.paths.out_dir = *cli.out_dir;
    if (cli.no_kg_encoder) cfg.model.ablation = model::AblationMode::AttrsAsNodeFeatures;
    cfg.validate();
    return cfg;
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("bad config value: ") + e.what());
  }
}

RunConfig load_run_config(const std::string& path, const CliOverrides& cli) {
  if (path.empty()) return resolve_config(nlohmann::json(), "", cli);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot open config " + path);
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw UsageError("config " + path + " is not valid JSON: " + e.what());
  }
  return resolve_config(doc, fs::path(path).parent_path().string(), cli);
}

RunReport run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages) {
  cfg.validate();
  const fs::path out(cfg.paths.out_dir);
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw DataError("WriteError", "cannot create " + out.string() + ": " + ec.message());
  RunReport report;
  Context ctx{cfg, out, report, {}, {}, {}, {}};
  for (const auto stage : stages) {
    try {
      switch (stage) {
        case Stage::KgBuild: stage_kg_build(ctx); break;
        case Stage::KgEmbed: stage_kg_embed(ctx); break;
        case Stage::Featurize: stage_featurize(ctx); break;
        case Stage::Train: stage_train(ctx); break;
        case Stage::Evaluate: stage_evaluate(ctx); break;
        case Stage::Predict: stage_predict(ctx); break;
      }
    } catch (const StageError&) {
      throw;
    } catch (const Error& e) {
      throw StageError(stage, e);
    } catch (const fs::filesystem_error& e) {
      throw StageError(stage, DataError("IoError", e.what()));
    }
    report.stages.push_back(stage);
  }
  write_manifest(cfg, out, report);
  return report;
}

}  // namespace esnet::pipeline
