#pragma once
// Binary checkpoint format, version 1. All integers little-endian.
//
//   offset  size   field
//   0       8      magic "RRHFCKPT"
//   8       4      u32 format version (1)
//   12      4      u32 metadata length M
//   16      M      metadata, UTF-8 JSON object: {"model": {...ModelConfig...},
//                  "meta": {...free-form provenance, e.g. config_hash...}}
//   16+M    4      u32 parameter count N
//   then N records:
//           2      u16 name length L
//           L      name bytes
//           1      u8 rank R
//           8*R    u64 dimensions
//           8*n    f64 values, row-major, n = product of dimensions
//
// The content hash covers the parameter table only (everything after the
// metadata), so provenance notes never change a model's identity.

#include <filesystem>
#include <string>

#include "json.hpp"
#include "rrhf/model.hpp"

namespace rrhf {

struct Checkpoint {
  Model model;
  nlohmann::json meta = nlohmann::json::object();
};

void save_checkpoint(const std::filesystem::path& path, const Model& model,
                     const nlohmann::json& meta = nlohmann::json::object());
Checkpoint load_checkpoint(const std::filesystem::path& path);

// SHA-256 of the serialised parameter table.
std::string model_hash(const Model& model);

nlohmann::json to_json(const ModelConfig& config);
ModelConfig model_config_from_json(const nlohmann::json& j, const std::string& key_path = "model");

}  // namespace rrhf
