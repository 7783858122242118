#pragma once

// JSON forms of parameter snapshots and dense matrices.
//
// A snapshot document:
//   {"format": "routemlp.snapshot/1", "epoch": 3, "seed": 42,
//    "layers": [{"rows": 30, "cols": 20, "weight": [row-major...], "bias": [...]}, ...],
//    "adam": {"t": 57, "m": [layers...], "v": [layers...]}}
// Doubles are written with round-trip precision, so a reload is bit-exact.

#include <json.hpp>

#include <filesystem>
#include <string>

#include "routemlp/train.hpp"

namespace routemlp::io {

using nlohmann::json;

json matrix_to_json(const nn::MatrixXd& m);  // {"rows", "cols", "values" row-major}
nn::MatrixXd matrix_from_json(const json& j);

json layers_to_json(std::span<const nn::Layer> layers);
std::vector<nn::Layer> layers_from_json(const json& j);

json snapshot_to_json(const nn::ParamSnapshot& snap);
nn::ParamSnapshot snapshot_from_json(const json& j);

/// Writes through a temporary file and rename, so readers never see a partial file.
void write_text_atomic(const std::filesystem::path& path, const std::string& content);
std::string read_text(const std::filesystem::path& path);

}  // namespace routemlp::io
