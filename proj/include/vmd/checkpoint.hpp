#pragma once

#include "vmd/backbone.hpp"

#include "json.hpp"

#include <string>

namespace vmd {

// ckpt_<tag>.json (manifest) + ckpt_<tag>.bin (little-endian float32, parameters
// back to back in manifest order). Returns the manifest path.
std::string save_checkpoint(const Backbone<float>& model, const std::string& dir, const std::string& tag,
                            const nlohmann::json& meta = nlohmann::json::object());

// Checks the manifest against the model (attention-mask layout, names, shapes,
// dtype, blob size) before touching any parameter; errors name the culprit.
void load_checkpoint(Backbone<float>& model, const std::string& manifest_path);

// Builds the backbone recorded in the manifest and loads it.
Backbone<float> load_model(const std::string& manifest_path);

nlohmann::json read_manifest(const std::string& manifest_path);

}  // namespace vmd
