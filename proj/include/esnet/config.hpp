#pragma once

#include <nlohmann/json.hpp>
#include <string>

#include "esnet/crystal_graph.hpp"
#include "esnet/kg_embed.hpp"
#include "esnet/model.hpp"
#include "esnet/train.hpp"

// JSON mapping of the tunable configs. Readers only overwrite keys that are
// present, so a partial document layers on top of existing values.
namespace esnet {

std::string to_string(model::LossKind kind);
model::LossKind parse_loss_kind(const std::string& s);
std::string to_string(model::AblationMode mode);
model::AblationMode parse_ablation_mode(const std::string& s);

nlohmann::json to_json(const embed::WalkConfig& c);
nlohmann::json to_json(const embed::SkipGramConfig& c);
nlohmann::json to_json(const crystal::FeaturizerConfig& c);
nlohmann::json to_json(const model::ModelConfig& c);
nlohmann::json to_json(const model::TrainConfig& c);

void update_from_json(const nlohmann::json& j, embed::WalkConfig& c);
void update_from_json(const nlohmann::json& j, embed::SkipGramConfig& c);
void update_from_json(const nlohmann::json& j, crystal::FeaturizerConfig& c);
void update_from_json(const nlohmann::json& j, model::ModelConfig& c);
void update_from_json(const nlohmann::json& j, model::TrainConfig& c);

}  // namespace esnet
