#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "federation.hpp"
#include "scenegen.hpp"

#include "json.hpp"

namespace fedddl::harness {

using Json = nlohmann::ordered_json;

// Everything a run needs. The master seed drives both the dataset and training.
struct RunConfig {
  std::uint64_t seed = 1;
  scenegen::DatasetSpec dataset;
  federation::ExperimentConfig experiment;
  std::string output_dir = "runs/default";
  bool record_wall_time = false;
  std::vector<std::string> warnings;  // filled by parse_config
};

RunConfig default_config();

// Applies a dotted-path override ("training.lr=0.05") to a raw config document.
// The value is parsed as JSON when possible and taken as a string otherwise.
void apply_override(Json& doc, std::string_view assignment);

// Strict parse: unknown keys, wrong types and out-of-range values throw
// InvalidConfig naming the field.
RunConfig parse_config(const Json& doc);

// Raw document from disk; InvalidConfig when missing or not JSON.
Json read_config_document(const std::string& path);

RunConfig load_config(const std::string& path, const std::vector<std::string>& overrides);

Json to_json(const RunConfig& cfg);

std::string method_name(federation::Method m);

}  // namespace fedddl::harness
