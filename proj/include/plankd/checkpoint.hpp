#pragma once

#include <string>
#include <utility>
#include <vector>

#include "plankd/params.hpp"
#include "plankd/planner.hpp"

namespace plankd {

// PKD1 container, little-endian, f32 payload. Groups are saved with a name
// prefix ("student.", "ib.", ...) so one file can hold several modules.
struct CheckpointEntry {
  std::string name;
  grad::Shape shape;
  std::vector<float> values;
};

void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, const ParamMap*>>& groups);
std::vector<CheckpointEntry> read_checkpoint(const std::string& path);

// Copies entries under `prefix` into matching names of dst (prefix stripped);
// shape disagreements raise FormatError.
void load_group(const std::vector<CheckpointEntry>& entries, const std::string& prefix,
                ParamMap& dst);

void save_planner(const planner::PlannerModel& model, const std::string& path);
// Reconstructs the config from the stored tensor shapes.
planner::PlannerModel load_planner(const std::string& path, const std::string& prefix = "");
planner::PlannerModel planner_from_entries(const std::vector<CheckpointEntry>& entries,
                                           const std::string& prefix);

}  // namespace plankd
