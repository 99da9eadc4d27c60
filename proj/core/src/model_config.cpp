#include "lpose/network.hpp"

#include <json.hpp>

namespace lpose {

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json doc;
  doc["d"] = cfg.d;
  doc["heads"] = cfg.heads;
  doc["spatial_blocks"] = cfg.spatial_blocks;
  doc["windows"] = cfg.windows;
  doc["mlp_ratio"] = cfg.mlp_ratio;
  doc["head_mlp_ratio"] = cfg.head_mlp_ratio;
  doc["dropout"] = cfg.dropout;
  doc["joints"] = cfg.joints;
  doc["frames"] = cfg.frames;
  doc["shared_lambda"] = cfg.shared_lambda;
  doc["output_scale"] = cfg.output_scale;
  return doc.dump(2);
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(std::string("model config: invalid JSON: ") + e.what());
  }
  ModelConfig cfg;
  if (doc.contains("d")) cfg.d = doc["d"].get<int>();
  if (doc.contains("heads")) cfg.heads = doc["heads"].get<int>();
  if (doc.contains("spatial_blocks")) cfg.spatial_blocks = doc["spatial_blocks"].get<int>();
  if (doc.contains("windows")) cfg.windows = doc["windows"].get<std::vector<int>>();
  if (doc.contains("mlp_ratio")) cfg.mlp_ratio = doc["mlp_ratio"].get<int>();
  if (doc.contains("head_mlp_ratio")) cfg.head_mlp_ratio = doc["head_mlp_ratio"].get<int>();
  if (doc.contains("dropout")) cfg.dropout = doc["dropout"].get<double>();
  if (doc.contains("joints")) cfg.joints = doc["joints"].get<int>();
  if (doc.contains("frames")) cfg.frames = doc["frames"].get<int>();
  if (doc.contains("shared_lambda")) cfg.shared_lambda = doc["shared_lambda"].get<bool>();
  if (doc.contains("output_scale")) cfg.output_scale = doc["output_scale"].get<double>();
  cfg.validate();
  return cfg;
}

}  // namespace lpose
