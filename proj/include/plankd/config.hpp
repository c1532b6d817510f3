#pragma once

#include <string>
#include <utility>
#include <vector>

#include "plankd/scenario.hpp"
#include "plankd/trainer.hpp"

namespace plankd::harness {

using KeyValues = std::vector<std::pair<std::string, std::string>>;

// flat "key = value" lines, '#' comments, blank lines ignored
KeyValues parse_config_text(const std::string& text);
KeyValues load_config_file(const std::string& path);

// Extractors reject keys outside the known union so typos fail loudly.
scenario::GenParams gen_params_from(const KeyValues& kv);
train::DistillConfig distill_config_from(const KeyValues& kv);
planner::PlannerConfig teacher_config_from(const KeyValues& kv);

// PLANKD_SEED, when set, overrides every seed-valued field
void apply_env_seed(scenario::GenParams& p);
void apply_env_seed(train::DistillConfig& c);
bool env_seed(std::uint64_t& out);

}  // namespace plankd::harness
