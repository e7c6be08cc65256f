#pragma once

// Binary checkpoint container and JSON forms of the small value types.
//
// Layout (see docs/checkpoint_format.md):
//   line 1   "BMSCKPT1"
//   line 2   byte length of the JSON header, decimal
//   header   UTF-8 JSON object; "blocks" lists {name, length} in file order
//   payload  the blocks back to back as little-endian IEEE-754 float64

#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "bms/drift_model.hpp"
#include "bms/schedules.hpp"
#include "bms/targets.hpp"
#include "bms/types.hpp"

namespace bms {

using Json = nlohmann::json;

struct Checkpoint {
  Json header = Json::object();
  std::vector<std::pair<std::string, Vec>> blocks;

  void add(std::string name, Vec data) { blocks.emplace_back(std::move(name), std::move(data)); }
  bool has(const std::string& name) const;
  /// Throws IoError when missing.
  const Vec& block(const std::string& name) const;
};

/// Writes to path + ".tmp" and renames, so a reader never sees a partial file.
void write_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint read_checkpoint(const std::string& path);

Json to_json(const NoiseSchedule& s);
NoiseSchedule schedule_from_json(const Json& j);
Json to_json(const Architecture& a);
Architecture architecture_from_json(const Json& j);
Json to_json(const PriorDistribution& p);
PriorDistribution prior_from_json(const Json& j);

/// Field with its architecture and output scaling in the header; parameters in block "theta".
void save_field(const std::string& path, const DriftField& f, Json extra = Json::object());
DriftField field_from_checkpoint(const Checkpoint& ck);
DriftField load_field(const std::string& path);

}  // namespace bms
