#pragma once

// JSON checkpoints: a config echo plus every parameter as a flat row-major
// array under its ParamStore name.

#include <filesystem>
#include <fstream>
#include <string>

#include <nlohmann/json.hpp>

#include "b4/config.hpp"
#include "b4/error.hpp"
#include "b4/model.hpp"

namespace b4 {

inline constexpr const char* kCheckpointFormat = "b4-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json model_config_json(const ModelConfig& m) {
  return {{"width", m.width},           {"key_width", m.key_width}, {"prototypes", m.prototypes},
          {"layers", m.layers},         {"max_tokens", m.max_tokens}, {"vocab_size", m.vocab_size},
          {"lookback", m.lookback},     {"ffn_width", m.ffn_width}, {"init_std", m.init_std},
          {"hash_seed", m.hash_seed},   {"layout", layout_name(m.layout)}, {"mask_padding", m.mask_padding}};
}

inline nlohmann::json checkpoint_json(const B4Model& model, const nlohmann::json& config_echo) {
  nlohmann::json params = nlohmann::json::object();
  for (const Parameter& p : model.params().all()) {
    params[p.name] = {{"shape", p.value.shape()}, {"data", p.value.storage()}};
  }
  return {{"format", kCheckpointFormat},
          {"version", kCheckpointVersion},
          {"model", model_config_json(model.config())},
          {"config", config_echo},
          {"parameters", params}};
}

/// Writes via a temporary file and rename.
inline void save_checkpoint(const std::filesystem::path& path, const B4Model& model, const nlohmann::json& config_echo) {
  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write checkpoint " + tmp.string());
    out << checkpoint_json(model, config_echo).dump() << '\n';
    if (!out) throw IoError("write failed for " + tmp.string());
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
}

/// Copies checkpoint parameters into a model built from `expected`; every key
/// and shape must match.
inline void load_parameters(const nlohmann::json& doc, B4Model& model, const std::string& source) {
  if (!doc.is_object() || doc.value("format", "") != kCheckpointFormat) {
    throw CheckpointError(source + ": not a b4 checkpoint");
  }
  if (doc.value("version", 0) != kCheckpointVersion) throw CheckpointError(source + ": unsupported checkpoint version");
  const nlohmann::json expected = model_config_json(model.config());
  if (!doc.contains("model")) throw CheckpointError(source + ": missing model section");
  for (const auto& [key, value] : expected.items()) {
    if (key == "init_std") continue;
    if (!doc["model"].contains(key) || doc["model"][key] != value) {
      throw CheckpointError(source + ": model." + key + " is " + (doc["model"].contains(key) ? doc["model"][key].dump() : "missing") +
                            " in the checkpoint but " + value.dump() + " in the config");
    }
  }
  const nlohmann::json& params = doc.at("parameters");
  if (params.size() != model.params().all().size()) throw CheckpointError(source + ": parameter count mismatch");
  for (Parameter& p : model.params().all()) {
    if (!params.contains(p.name)) throw CheckpointError(source + ": missing parameter " + p.name);
    const nlohmann::json& entry = params[p.name];
    Shape shape;
    std::vector<double> data;
    try {
      shape = entry.at("shape").get<Shape>();
      data = entry.at("data").get<std::vector<double>>();
    } catch (const nlohmann::json::exception&) {
      throw CheckpointError(source + ": malformed parameter " + p.name);
    }
    if (shape != p.value.shape()) {
      throw CheckpointError(source + ": parameter " + p.name + " has shape " + shape_string(shape) + ", model expects " +
                            shape_string(p.value.shape()));
    }
    if (data.size() != p.value.size()) throw CheckpointError(source + ": parameter " + p.name + " has wrong length");
    p.value = Tensor(shape, std::move(data));
    if (!p.value.all_finite()) throw CheckpointError(source + ": parameter " + p.name + " has non-finite values");
  }
}

/// Builds a model for `cfg` and fills it from the checkpoint at `path`.
inline B4Model load_checkpoint(const std::filesystem::path& path, const ModelConfig& cfg) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open checkpoint " + path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw CheckpointError(path.string() + ": unreadable checkpoint: " + e.what());
  }
  B4Model model(cfg, 0);
  load_parameters(doc, model, path.string());
  return model;
}

}  // namespace b4
