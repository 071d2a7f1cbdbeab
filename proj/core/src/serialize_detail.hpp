#pragma once

#include <string>

#include "flatlora/data.hpp"
#include "flatlora/model.hpp"
#include "flatlora/perturb.hpp"
#include "json.hpp"

namespace flatlora::detail {

nlohmann::json spec_to_json(const ModelSpec& spec);
ModelSpec spec_from_json(const nlohmann::json& j);

nlohmann::json dataset_to_json(const DatasetSpec& spec);
DatasetSpec dataset_from_json(const nlohmann::json& j);

nlohmann::json record_to_json(const PerturbationRecord& r);
PerturbationRecord record_from_json(const nlohmann::json& j);

// Throws ConfigError naming every key of `j` not present in `allowed`.
void reject_unknown_keys(const nlohmann::json& j,
                         const std::vector<std::string>& allowed,
                         const std::string& where);

}  // namespace flatlora::detail
