#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <nlohmann/json.hpp>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "esnet/crystal_graph.hpp"
#include "esnet/element_kg.hpp"
#include "esnet/errors.hpp"
#include "esnet/kg_embed.hpp"
#include "esnet/model.hpp"
#include "esnet/train.hpp"

namespace esnet::pipeline {

struct DatasetRecord {
  crystal::CrystalStructure structure;
  std::map<std::string, double> targets;
  std::map<std::string, std::string> units;  // optional, per target
};

// One JSON structure record per line; blank lines are skipped. Any problem
// with a line is reported as ParseError naming the 1-based line number.
std::vector<DatasetRecord> parse_dataset(std::istream& in);
std::vector<DatasetRecord> load_dataset(const std::string& path);

// MissingTarget for the first record without `property`.
void require_target(const std::vector<DatasetRecord>& records, const std::string& property);

struct SplitSpec {
  std::size_t n_train = 0;
  std::size_t n_val = 0;
  std::size_t n_test = 0;
  std::uint64_t seed = 42;
};

struct Splits {
  std::vector<DatasetRecord> train;
  std::vector<DatasetRecord> val;
  std::vector<DatasetRecord> test;
};

// Seeded Fisher-Yates shuffle, then contiguous train | val | test slices.
Splits split_dataset(const std::vector<DatasetRecord>& records, const SplitSpec& spec);

double mae(std::span<const double> preds, std::span<const double> targets);

struct TaskPreset {
  std::string name;
  std::string target;  // dataset property
  std::string unit;
  int num_fusion_layers = 0;
  double learning_rate = 0.0;
  model::LossKind loss = model::LossKind::L1;
};

const std::vector<TaskPreset>& task_presets();
const TaskPreset& task_preset(const std::string& name);  // UsageError when unknown

enum class Stage { KgBuild, KgEmbed, Featurize, Train, Evaluate, Predict };

std::string stage_name(Stage stage);
Stage parse_stage(const std::string& name);

struct Paths {
  std::string element_table;
  std::string dataset;
  std::string embeddings;  // empty: <out_dir>/embeddings.txt
  std::string checkpoint;  // empty: <out_dir>/checkpoint.bin
  std::string out_dir = "out";
};

struct RunConfig {
  Paths paths;
  std::string task;  // preset name; empty for none
  std::string target = "band_gap";
  std::string unit = "eV";
  int bins = kg::kDefaultBins;
  embed::WalkConfig walk;
  embed::SkipGramConfig skipgram;
  model::ModelConfig model;
  model::TrainConfig train;
  SplitSpec split;

  void validate() const;
  std::string embeddings_path() const;
  std::string checkpoint_path() const;
};

void apply_preset(const TaskPreset& preset, RunConfig& cfg);
// Sets every seed (walk, skip-gram, model init, training, split).
void set_seed(RunConfig& cfg, std::uint64_t seed);

nlohmann::json to_json(const RunConfig& cfg);

struct CliOverrides {
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out_dir;
  std::optional<std::string> task;
  bool no_kg_encoder = false;
};

// Layering: defaults, then the task preset, then the config document, then
// CLI flags. Relative paths in the document resolve against base_dir.
RunConfig resolve_config(const nlohmann::json& doc, const std::string& base_dir,
                         const CliOverrides& cli = {});
// Empty path means no config file.
RunConfig load_run_config(const std::string& path, const CliOverrides& cli = {});

// Failure inside a stage; keeps the cause's kind and code.
class StageError : public Error {
 public:
  StageError(Stage stage, const Error& cause)
      : Error(cause.kind(), cause.code(), "stage " + stage_name(stage) + ": " + cause.detail()),
        stage_(stage) {}
  Stage stage() const noexcept { return stage_; }

 private:
  Stage stage_;
};

struct RunReport {
  std::vector<Stage> stages;
  std::vector<model::EpochMetrics> train_log;
  std::optional<double> test_mae;
  std::size_t test_count = 0;
  std::vector<std::string> files;  // written by this run, relative to out_dir
};

// Runs the stages in order inside cfg.paths.out_dir and rewrites
// manifest.json (content hash of every file in out_dir, effective config,
// seeds and config hashes).
RunReport run_pipeline(const RunConfig& cfg, const std::vector<Stage>& stages);

// kg-build, kg-embed, featurize, train, evaluate.
std::vector<Stage> default_stages();

}  // namespace esnet::pipeline
