#include "plankd/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>
#include <stdexcept>

namespace plankd::harness {

namespace {

const std::set<std::string> kKnownKeys = {
    // GenParams
    "seed", "scenes", "T", "obstacle_min", "obstacle_max", "junction_prob", "light_prob",
    "speed_limit", "road_half_width", "delta", "clutter",
    // DistillConfig
    "alpha_z", "alpha_r", "alpha_e", "beta", "sigma_kernel", "lr", "epochs", "batch_size",
    "seed_data", "seed_init", "seed_train", "ablation", "teacher_waypoint_source",
    "student_conv_widths", "student_head_hidden", "student_command_embed",
    // teacher architecture for train-teacher
    "teacher_conv_widths", "teacher_head_hidden", "teacher_command_embed",
};

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

const std::string* find(const KeyValues& kv, const std::string& key) {
  for (const auto& [k, v] : kv) {
    if (k == key) return &v;
  }
  return nullptr;
}

double get_double(const KeyValues& kv, const std::string& key, double fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::size_t pos = 0;
  double out = std::stod(*v, &pos);
  if (pos != v->size()) throw std::invalid_argument("config: bad numeric value for '" + key + "'");
  return out;
}

std::uint64_t get_u64(const KeyValues& kv, const std::string& key, std::uint64_t fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::size_t pos = 0;
  unsigned long long out = std::stoull(*v, &pos);
  if (pos != v->size()) throw std::invalid_argument("config: bad integer value for '" + key + "'");
  return out;
}

std::vector<std::size_t> get_size_list(const KeyValues& kv, const std::string& key,
                                       std::vector<std::size_t> fallback) {
  const std::string* v = find(kv, key);
  if (!v) return fallback;
  std::vector<std::size_t> out;
  std::stringstream ss(*v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (item.empty()) continue;
    out.push_back(static_cast<std::size_t>(std::stoull(item)));
  }
  if (out.empty()) throw std::invalid_argument("config: empty list for '" + key + "'");
  return out;
}

void check_known(const KeyValues& kv) {
  for (const auto& [k, v] : kv) {
    if (!kKnownKeys.count(k)) throw std::invalid_argument("config: unknown key '" + k + "'");
  }
}

}  // namespace

KeyValues parse_config_text(const std::string& text) {
  KeyValues out;
  std::stringstream ss(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::invalid_argument("config: line " + std::to_string(lineno) + " is not 'key = value'");
    }
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::invalid_argument("config: empty key on line " + std::to_string(lineno));
    }
    for (auto& [k, v] : out) {
      if (k == key) throw std::invalid_argument("config: duplicate key '" + key + "'");
    }
    out.emplace_back(std::move(key), std::move(value));
  }
  return out;
}

KeyValues load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::invalid_argument("config: cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

scenario::GenParams gen_params_from(const KeyValues& kv) {
  check_known(kv);
  scenario::GenParams p;
  p.seed = get_u64(kv, "seed", p.seed);
  p.scenes = static_cast<std::uint32_t>(get_u64(kv, "scenes", p.scenes));
  p.T = static_cast<std::uint32_t>(get_u64(kv, "T", p.T));
  p.obstacle_min = static_cast<std::uint32_t>(get_u64(kv, "obstacle_min", p.obstacle_min));
  p.obstacle_max = static_cast<std::uint32_t>(get_u64(kv, "obstacle_max", p.obstacle_max));
  p.junction_prob = get_double(kv, "junction_prob", p.junction_prob);
  p.light_prob = get_double(kv, "light_prob", p.light_prob);
  p.speed_limit = get_double(kv, "speed_limit", p.speed_limit);
  p.road_half_width = get_double(kv, "road_half_width", p.road_half_width);
  p.delta = get_double(kv, "delta", p.delta);
  p.clutter = get_u64(kv, "clutter", p.clutter ? 1 : 0) != 0;
  return p;
}

train::DistillConfig distill_config_from(const KeyValues& kv) {
  check_known(kv);
  train::DistillConfig c;
  c.alpha_z = get_double(kv, "alpha_z", c.alpha_z);
  c.alpha_r = get_double(kv, "alpha_r", c.alpha_r);
  c.alpha_e = get_double(kv, "alpha_e", c.alpha_e);
  c.beta = get_double(kv, "beta", c.beta);
  c.sigma_kernel = get_double(kv, "sigma_kernel", c.sigma_kernel);
  c.delta = get_double(kv, "delta", c.delta);
  c.lr = get_double(kv, "lr", c.lr);
  c.epochs = static_cast<std::size_t>(get_u64(kv, "epochs", c.epochs));
  c.batch_size = static_cast<std::size_t>(get_u64(kv, "batch_size", c.batch_size));
  c.T = static_cast<std::size_t>(get_u64(kv, "T", c.T));
  c.seed_data = get_u64(kv, "seed_data", c.seed_data);
  c.seed_init = get_u64(kv, "seed_init", c.seed_init);
  c.seed_train = get_u64(kv, "seed_train", c.seed_train);
  if (const std::string* v = find(kv, "ablation")) c.ablation = train::ablation_from_name(*v);
  if (const std::string* v = find(kv, "teacher_waypoint_source")) {
    if (*v == "expert") {
      c.teacher_waypoint_source = train::TeacherWaypointSource::kExpert;
    } else if (*v == "teacher_output") {
      c.teacher_waypoint_source = train::TeacherWaypointSource::kTeacherOutput;
    } else {
      throw std::invalid_argument("config: teacher_waypoint_source must be expert|teacher_output");
    }
  }
  c.student.conv_widths = get_size_list(kv, "student_conv_widths", c.student.conv_widths);
  c.student.head_hidden = get_size_list(kv, "student_head_hidden", c.student.head_hidden);
  c.student.command_embed =
      static_cast<std::size_t>(get_u64(kv, "student_command_embed", c.student.command_embed));
  c.student.T = c.T;
  if (c.alpha_z < 0 || c.alpha_r < 0 || c.alpha_e < 0 || c.beta < 0) {
    throw std::invalid_argument("config: loss coefficients must be nonnegative");
  }
  if (c.batch_size == 0) throw std::invalid_argument("config: batch_size must be >= 1");
  return c;
}

planner::PlannerConfig teacher_config_from(const KeyValues& kv) {
  check_known(kv);
  planner::PlannerConfig c;  // teacher defaults
  c.conv_widths = get_size_list(kv, "teacher_conv_widths", c.conv_widths);
  c.head_hidden = get_size_list(kv, "teacher_head_hidden", c.head_hidden);
  c.command_embed =
      static_cast<std::size_t>(get_u64(kv, "teacher_command_embed", c.command_embed));
  c.T = static_cast<std::size_t>(get_u64(kv, "T", c.T));
  return c;
}

bool env_seed(std::uint64_t& out) {
  const char* v = std::getenv("PLANKD_SEED");
  if (!v || !*v) return false;
  char* end = nullptr;
  unsigned long long parsed = std::strtoull(v, &end, 10);
  if (!end || *end != '\0') throw std::invalid_argument("PLANKD_SEED is not an integer");
  out = parsed;
  return true;
}

void apply_env_seed(scenario::GenParams& p) {
  std::uint64_t s;
  if (env_seed(s)) p.seed = s;
}

void apply_env_seed(train::DistillConfig& c) {
  std::uint64_t s;
  if (env_seed(s)) {
    c.seed_data = s;
    c.seed_init = s;
    c.seed_train = s;
  }
}

}  // namespace plankd::harness
