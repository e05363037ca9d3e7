#include "esnet/config.hpp"

#include "esnet/errors.hpp"

namespace esnet {

namespace {

template <class T>
void maybe(const nlohmann::json& j, const char* key, T& field) {
  if (!j.contains(key)) return;
  try {
    field = j.at(key).get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("config key '") + key + "': " + e.what());
  }
}

void require_object(const nlohmann::json& j, const char* what) {
  if (!j.is_object()) throw UsageError(std::string(what) + " config must be a JSON object");
}

}  // namespace

std::string to_string(model::LossKind kind) { return kind == model::LossKind::L1 ? "L1" : "MSE"; }

model::LossKind parse_loss_kind(const std::string& s) {
  if (s == "L1" || s == "l1") return model::LossKind::L1;
  if (s == "MSE" || s == "mse") return model::LossKind::MSE;
  throw UsageError("unknown loss '" + s + "' (expected L1 or MSE)");
}

std::string to_string(model::AblationMode mode) {
  return mode == model::AblationMode::Full ? "full" : "attrs_as_node_features";
}

model::AblationMode parse_ablation_mode(const std::string& s) {
  if (s == "full") return model::AblationMode::Full;
  if (s == "attrs_as_node_features") return model::AblationMode::AttrsAsNodeFeatures;
  throw UsageError("unknown ablation mode '" + s + "'");
}

nlohmann::json to_json(const embed::WalkConfig& c) {
  return {{"walks_per_entity", c.walks_per_entity}, {"depth", c.depth}, {"seed", c.seed}};
}

nlohmann::json to_json(const embed::SkipGramConfig& c) {
  return {{"dim", c.dim},
          {"window", c.window},
          {"negatives", c.negatives},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"min_count", c.min_count},
          {"seed", c.seed}};
}

nlohmann::json to_json(const crystal::FeaturizerConfig& c) {
  return {{"cutoff", c.cutoff},
          {"min_neighbors", c.min_neighbors},
          {"distance_scale", c.distance_scale},
          {"edge_centers", c.edge_centers},
          {"edge_min", c.edge_min},
          {"edge_max", c.edge_max},
          {"angle_centers", c.angle_centers}};
}

nlohmann::json to_json(const model::ModelConfig& c) {
  return {{"hidden_dim", c.hidden_dim},
          {"kg_dim", c.kg_dim},
          {"num_node_layers", c.num_node_layers},
          {"num_edge_layers", c.num_edge_layers},
          {"num_fusion_layers", c.num_fusion_layers},
          {"num_heads", c.num_heads},
          {"alpha", c.alpha},
          {"beta", c.beta},
          {"ablation", to_string(c.ablation)},
          {"seed", c.seed},
          {"featurizer", to_json(c.featurizer)}};
}

nlohmann::json to_json(const model::TrainConfig& c) {
  return {{"loss", to_string(c.loss)},
          {"learning_rate", c.learning_rate},
          {"epochs", c.epochs},
          {"batch_size", c.batch_size},
          {"beta1", c.beta1},
          {"beta2", c.beta2},
          {"eps", c.eps},
          {"seed", c.seed},
          {"threads", c.threads}};
}

void update_from_json(const nlohmann::json& j, embed::WalkConfig& c) {
  require_object(j, "walk");
  maybe(j, "walks_per_entity", c.walks_per_entity);
  maybe(j, "depth", c.depth);
  maybe(j, "seed", c.seed);
}

void update_from_json(const nlohmann::json& j, embed::SkipGramConfig& c) {
  require_object(j, "skipgram");
  maybe(j, "dim", c.dim);
  maybe(j, "window", c.window);
  maybe(j, "negatives", c.negatives);
  maybe(j, "learning_rate", c.learning_rate);
  maybe(j, "epochs", c.epochs);
  maybe(j, "min_count", c.min_count);
  maybe(j, "seed", c.seed);
}

void update_from_json(const nlohmann::json& j, crystal::FeaturizerConfig& c) {
  require_object(j, "featurizer");
  maybe(j, "cutoff", c.cutoff);
  maybe(j, "min_neighbors", c.min_neighbors);
  maybe(j, "distance_scale", c.distance_scale);
  maybe(j, "edge_centers", c.edge_centers);
  maybe(j, "edge_min", c.edge_min);
  maybe(j, "edge_max", c.edge_max);
  maybe(j, "angle_centers", c.angle_centers);
}

void update_from_json(const nlohmann::json& j, model::ModelConfig& c) {
  require_object(j, "model");
  maybe(j, "hidden_dim", c.hidden_dim);
  maybe(j, "kg_dim", c.kg_dim);
  maybe(j, "num_node_layers", c.num_node_layers);
  maybe(j, "num_edge_layers", c.num_edge_layers);
  maybe(j, "num_fusion_layers", c.num_fusion_layers);
  maybe(j, "num_heads", c.num_heads);
  maybe(j, "alpha", c.alpha);
  maybe(j, "beta", c.beta);
  maybe(j, "seed", c.seed);
  if (j.contains("ablation")) c.ablation = parse_ablation_mode(j.at("ablation").get<std::string>());
  if (j.contains("featurizer")) update_from_json(j.at("featurizer"), c.featurizer);
}

void update_from_json(const nlohmann::json& j, model::TrainConfig& c) {
  require_object(j, "train");
  if (j.contains("loss")) c.loss = parse_loss_kind(j.at("loss").get<std::string>());
  maybe(j, "learning_rate", c.learning_rate);
  maybe(j, "epochs", c.epochs);
  maybe(j, "batch_size", c.batch_size);
  maybe(j, "beta1", c.beta1);
  maybe(j, "beta2", c.beta2);
  maybe(j, "eps", c.eps);
  maybe(j, "seed", c.seed);
  maybe(j, "threads", c.threads);
}

}  // namespace esnet
