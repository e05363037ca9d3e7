#include "esnet/train.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <istream>
#include <numeric>
#include <ostream>

#include "esnet/config.hpp"
#include "esnet/errors.hpp"
#include "esnet/hash.hpp"
#include "esnet/parallel.hpp"
#include "esnet/rng.hpp"
#include "esnet/text.hpp"

namespace esnet::model {

namespace {

constexpr char kMagic[8] = {'E', 'S', 'N', 'E', 'T', 'C', 'K', '1'};

std::vector<SampleGradient> batch_gradients(const Parameters& params, const ModelConfig& cfg,
                                            const std::vector<const TrainSample*>& batch,
                                            const std::vector<double>& targets, LossKind kind,
                                            int threads) {
  std::vector<SampleGradient> out(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    out[i] = loss_gradient(params, cfg, batch[i]->inputs, targets[i], kind);
  });
  return out;
}

template <class T>
void put(std::ostream& out, T value) {
  std::uint64_t bits = 0;
  if constexpr (std::is_same_v<T, double>) {
    bits = std::bit_cast<std::uint64_t>(value);
  } else {
    bits = static_cast<std::uint64_t>(value);
  }
  for (std::size_t i = 0; i < sizeof(T); ++i) out.put(static_cast<char>((bits >> (8 * i)) & 0xff));
}

template <class T>
T get(std::istream& in) {
  std::uint64_t bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    const int c = in.get();
    if (c == EOF) throw DataError("ParseError", "checkpoint is truncated");
    bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(c)) << (8 * i);
  }
  if constexpr (std::is_same_v<T, double>) {
    return std::bit_cast<double>(bits);
  } else {
    return static_cast<T>(bits);
  }
}

void put_string(std::ostream& out, const std::string& s) {
  put<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string get_string(std::istream& in) {
  const auto n = get<std::uint32_t>(in);
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (in.gcount() != static_cast<std::streamsize>(n)) {
    throw DataError("ParseError", "checkpoint is truncated");
  }
  return s;
}

void put_matrix(std::ostream& out, const Matrix& m) {
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) put<double>(out, m(r, c));
  }
}

Matrix get_matrix(std::istream& in, Eigen::Index rows, Eigen::Index cols) {
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = get<double>(in);
  }
  return m;
}

}  // namespace

void TrainConfig::validate() const {
  if (!(learning_rate > 0.0)) throw UsageError("learning_rate must be positive");
  if (epochs < 1 || batch_size < 1) throw UsageError("epochs and batch_size must be >= 1");
}

std::uint64_t config_hash(const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  auto train = to_json(train_cfg);
  train.erase("threads");
  const nlohmann::json doc = {{"model", to_json(model_cfg)}, {"train", train}};
  return hash64(doc.dump());
}

double evaluate_mae(const Model& model, const std::vector<TrainSample>& samples,
                    std::vector<double>* predictions) {
  if (samples.empty()) throw DataError("EmptyInput", "no samples to evaluate");
  double sum = 0.0;
  for (const auto& s : samples) {
    const double p = predict(model, s.inputs);
    if (predictions) predictions->push_back(p);
    sum += std::abs(p - s.target);
  }
  return sum / static_cast<double>(samples.size());
}

TrainResult train_loop(const std::vector<TrainSample>& train, const std::vector<TrainSample>& val,
                       const ModelConfig& model_cfg, const TrainConfig& train_cfg,
                       const EpochLogger& on_epoch) {
  model_cfg.validate();
  train_cfg.validate();
  if (train.empty()) throw DataError("EmptyInput", "training split is empty");

  Checkpoint current;
  current.model.config = model_cfg;
  current.model.params = init_params(model_cfg);
  current.adam = AdamState::zeros(current.model.params);
  current.config_hash = config_hash(model_cfg, train_cfg);

  double mean = 0.0;
  for (const auto& s : train) mean += s.target;
  mean /= static_cast<double>(train.size());
  double var = 0.0;
  for (const auto& s : train) var += (s.target - mean) * (s.target - mean);
  const double stdev = std::sqrt(var / static_cast<double>(train.size()));
  current.model.target_mean = mean;
  current.model.target_std = stdev > 1e-12 ? stdev : 1.0;

  const int threads = resolve_threads(train_cfg.threads);
  const auto adam = train_cfg.adam();
  TrainResult result;
  std::optional<double> best_val;
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    Rng rng(stream_seed(train_cfg.seed, 0x7a1, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    double abs_err = 0.0;
    for (std::size_t start = 0; start < order.size(); start += train_cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + train_cfg.batch_size);
      std::vector<const TrainSample*> batch;
      std::vector<double> targets;
      for (std::size_t b = start; b < end; ++b) {
        batch.push_back(&train[order[b]]);
        targets.push_back((train[order[b]].target - current.model.target_mean) /
                          current.model.target_std);
      }
      auto grads = batch_gradients(current.model.params, model_cfg, batch, targets,
                                   train_cfg.loss, threads);
      // Summed in batch order regardless of thread count.
      std::vector<Matrix> total = std::move(grads[0].grads);
      for (std::size_t b = 1; b < grads.size(); ++b) {
        for (std::size_t i = 0; i < total.size(); ++i) total[i] += grads[b].grads[i];
      }
      const double inv = 1.0 / static_cast<double>(batch.size());
      for (auto& g : total) g *= inv;
      for (std::size_t b = 0; b < grads.size(); ++b) {
        abs_err += std::abs(grads[b].pred - targets[b]) * current.model.target_std;
      }
      adam_step(current.model.params, total, current.adam, adam);
      if (!current.model.params.all_finite()) throw NumericError("parameters became non-finite");
    }
    current.epoch = epoch;

    EpochMetrics m;
    m.epoch = epoch;
    m.train_mae = abs_err / static_cast<double>(train.size());
    if (!val.empty()) m.val_mae = evaluate_mae(current.model, val);
    result.log.push_back(m);
    if (on_epoch) on_epoch(m);

    if (val.empty()) {
      result.best = current;
    } else if (!best_val || *m.val_mae < *best_val) {
      best_val = m.val_mae;
      result.best = current;
    }
  }
  return result;
}

void write_metrics(std::ostream& out, const std::vector<EpochMetrics>& log) {
  for (const auto& m : log) {
    out << m.epoch << '\t' << text::format_double(m.train_mae) << '\t'
        << (m.val_mae ? text::format_double(*m.val_mae) : std::string("NA")) << '\n';
  }
}

void save_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  const auto& model = ckpt.model;
  out.write(kMagic, sizeof kMagic);
  put<std::uint64_t>(out, ckpt.config_hash);
  put<std::int64_t>(out, ckpt.epoch);
  put<std::int64_t>(out, ckpt.adam.t);
  put<double>(out, model.target_mean);
  put<double>(out, model.target_std);
  put_string(out, to_json(model.config).dump());
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params.size()));
  const bool has_moments = ckpt.adam.m.size() == model.params.size();
  for (std::size_t i = 0; i < model.params.size(); ++i) {
    const auto& t = model.params[i];
    put_string(out, t.name);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.cols()));
    put_matrix(out, t.value);
    const Matrix zero = Matrix::Zero(t.value.rows(), t.value.cols());
    put_matrix(out, has_moments ? ckpt.adam.m[i] : zero);
    put_matrix(out, has_moments ? ckpt.adam.v[i] : zero);
  }
}

Checkpoint load_checkpoint(std::istream& in) {
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (in.gcount() != sizeof magic || std::memcmp(magic, kMagic, sizeof magic) != 0) {
    throw DataError("ParseError", "not an ESNet checkpoint");
  }
  Checkpoint ckpt;
  ckpt.config_hash = get<std::uint64_t>(in);
  ckpt.epoch = get<std::int64_t>(in);
  ckpt.adam.t = get<std::int64_t>(in);
  ckpt.model.target_mean = get<double>(in);
  ckpt.model.target_std = get<double>(in);
  try {
    update_from_json(nlohmann::json::parse(get_string(in)), ckpt.model.config);
  } catch (const nlohmann::json::exception& e) {
    throw DataError("ParseError", std::string("checkpoint config: ") + e.what());
  }
  const auto count = get<std::uint32_t>(in);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = get_string(in);
    const auto rows = get<std::uint32_t>(in);
    const auto cols = get<std::uint32_t>(in);
    ckpt.model.params.add(std::move(name), get_matrix(in, rows, cols));
    ckpt.adam.m.push_back(get_matrix(in, rows, cols));
    ckpt.adam.v.push_back(get_matrix(in, rows, cols));
  }
  const auto fresh = init_params(ckpt.model.config);
  if (fresh.size() != ckpt.model.params.size()) {
    throw DataError("ParseError", "checkpoint tensors do not match its config");
  }
  for (std::size_t i = 0; i < fresh.size(); ++i) {
    const auto& a = fresh[i];
    const auto& b = ckpt.model.params[i];
    if (a.name != b.name || a.value.rows() != b.value.rows() || a.value.cols() != b.value.cols()) {
      throw DataError("ParseError", "checkpoint tensor " + b.name + " does not match its config");
    }
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("WriteError", "cannot write " + path);
  save_checkpoint(out, ckpt);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("MissingInput", "cannot open checkpoint " + path);
  return load_checkpoint(in);
}

}  // namespace esnet::model
