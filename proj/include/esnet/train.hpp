#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "esnet/model.hpp"

namespace esnet::model {

struct TrainConfig {
  LossKind loss = LossKind::L1;
  double learning_rate = 5e-4;
  int epochs = 100;
  int batch_size = 8;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t seed = 42;
  // Worker threads for per-sample gradients; 0 reads ESNET_THREADS (default 1).
  // Results do not depend on this value.
  int threads = 0;

  void validate() const;
  AdamConfig adam() const { return {learning_rate, beta1, beta2, eps}; }
};

struct TrainSample {
  std::string id;
  SampleInputs inputs;
  double target = 0.0;  // original units
};

struct EpochMetrics {
  int epoch = 0;
  double train_mae = 0.0;
  std::optional<double> val_mae;
};

struct Checkpoint {
  Model model;
  AdamState adam;
  std::int64_t epoch = 0;
  std::uint64_t config_hash = 0;
};

struct TrainResult {
  Checkpoint best;  // lowest validation MAE; the final epoch when there is no validation split
  std::vector<EpochMetrics> log;
};

using EpochLogger = std::function<void(const EpochMetrics&)>;

TrainResult train_loop(const std::vector<TrainSample>& train, const std::vector<TrainSample>& val,
                       const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const EpochLogger& on_epoch = {});

// MAE of the model on samples, in original units.
double evaluate_mae(const Model& model, const std::vector<TrainSample>& samples,
                    std::vector<double>* predictions = nullptr);

// "epoch<TAB>train_mae<TAB>val_mae" per line; absent validation is "NA".
void write_metrics(std::ostream& out, const std::vector<EpochMetrics>& log);

std::uint64_t config_hash(const ModelConfig& model_cfg, const TrainConfig& train_cfg);

// Binary container, little-endian throughout:
//   "ESNETCK1" | u64 config_hash | i64 epoch | i64 adam_t | f64 target_mean | f64 target_std
//   | u32 len + model config JSON | u32 tensor count
//   | per tensor: u32 len + name, u32 rows, u32 cols, value, adam m, adam v
// with each matrix stored row-major as f64.
void save_checkpoint(std::ostream& out, const Checkpoint& ckpt);
Checkpoint load_checkpoint(std::istream& in);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace esnet::model
