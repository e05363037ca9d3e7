// esnet command-line driver: one subcommand per pipeline stage.
#include <CLI11.hpp>
#include <iostream>

#include "esnet/errors.hpp"
#include "esnet/pipeline.hpp"
#include "esnet/text.hpp"

using namespace esnet;

namespace {

struct Flags {
  std::string config;
  std::uint64_t seed = 0;
  std::string out;
  std::string task;
  bool no_kg_encoder = false;
};

CLI::App* add_stage(CLI::App& app, const std::string& name, const std::string& help, Flags& f,
                    bool model_flags) {
  auto* sub = app.add_subcommand(name, help);
  sub->add_option("--config", f.config, "JSON run configuration");
  sub->add_option("--seed", f.seed, "seed for every random stream");
  sub->add_option("--out", f.out, "output directory");
  if (model_flags) {
    sub->add_option("--task", f.task, "task preset: band_gap | formation_energy");
    sub->add_flag("--no-kg-encoder", f.no_kg_encoder,
                  "ablation: element embeddings as node features, no fusion branch");
  }
  return sub;
}

int run(int argc, char** argv) {
  CLI::App app{"ESNet: element-knowledge crystal property prediction"};
  app.require_subcommand(1);
  Flags f;
  struct Entry {
    CLI::App* app;
    std::vector<pipeline::Stage> stages;
  };
  using pipeline::Stage;
  std::vector<Entry> entries = {
      {add_stage(app, "kg-build", "build the element knowledge graph triples", f, false),
       {Stage::KgBuild}},
      {add_stage(app, "kg-embed", "random walks and skip-gram element embeddings", f, false),
       {Stage::KgEmbed}},
      {add_stage(app, "featurize", "crystal graphs for every dataset record", f, false),
       {Stage::Featurize}},
      {add_stage(app, "train", "train the property model", f, true), {Stage::Train}},
      {add_stage(app, "evaluate", "MAE on the test split", f, true), {Stage::Evaluate}},
      {add_stage(app, "predict", "predict every dataset record", f, true), {Stage::Predict}},
      {add_stage(app, "run", "kg-build, kg-embed, featurize, train, evaluate", f, true),
       pipeline::default_stages()},
  };
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::Usage);
  }

  pipeline::CliOverrides cli;
  for (const auto& e : entries) {
    if (!e.app->parsed()) continue;
    if (e.app->count("--seed")) cli.seed = f.seed;
    if (!f.out.empty()) cli.out_dir = f.out;
    if (!f.task.empty()) cli.task = f.task;
    cli.no_kg_encoder = f.no_kg_encoder;
    const auto cfg = pipeline::load_run_config(f.config, cli);
    const auto report = pipeline::run_pipeline(cfg, e.stages);
    for (const auto& m : report.train_log) {
      std::cout << "epoch " << m.epoch << " train_mae " << text::format_double(m.train_mae);
      if (m.val_mae) std::cout << " val_mae " << text::format_double(*m.val_mae);
      std::cout << '\n';
    }
    if (report.test_mae) {
      std::cout << "test_mae " << text::format_double(*report.test_mae) << ' ' << cfg.unit << " ("
                << report.test_count << " records)\n";
    }
    for (const auto& file : report.files) std::cout << "wrote " << file << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const Error& e) {
    std::cerr << "esnet: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "esnet: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::Data);
  }
}
