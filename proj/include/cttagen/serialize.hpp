#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "cttagen/tensor.hpp"

namespace cttagen {

using json = nlohmann::ordered_json;

// Versioned JSON record {v, shape, data}; doubles round-trip exactly.
json tensor_to_json(const Tensor& t);
Tensor tensor_from_json(const json& j, bool requires_grad = false);

json load_json_file(const std::filesystem::path& path);
void save_json_file(const std::filesystem::path& path, const json& j);

}  // namespace cttagen
