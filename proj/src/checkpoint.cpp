#include "plankd/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "plankd/errors.hpp"

namespace plankd {

namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

void put_u32(std::vector<char>& out, std::uint32_t v) {
  const char* c = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), c, c + 4);
}

void put_f32(std::vector<char>& out, float v) {
  const char* c = reinterpret_cast<const char*>(&v);
  out.insert(out.end(), c, c + 4);
}

struct Reader {
  const std::vector<char>& buf;
  std::size_t off = 0;
  std::string path;

  void need(std::size_t n, const char* what) {
    if (off + n > buf.size()) {
      throw FormatError(path + ": truncated file, " + what + " at byte offset " +
                        std::to_string(off));
    }
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, &buf[off], 4);
    off += 4;
    return v;
  }
  float f32(const char* what) {
    need(4, what);
    float v;
    std::memcpy(&v, &buf[off], 4);
    off += 4;
    return v;
  }
  std::string str(std::size_t n, const char* what) {
    need(n, what);
    std::string s(&buf[off], n);
    off += n;
    return s;
  }
};

}  // namespace

void write_checkpoint(const std::string& path,
                      const std::vector<std::pair<std::string, const ParamMap*>>& groups) {
  std::vector<char> buf;
  buf.insert(buf.end(), {'P', 'K', 'D', '1'});
  put_u32(buf, 1);  // version
  std::uint32_t count = 0;
  for (const auto& [prefix, pm] : groups) count += static_cast<std::uint32_t>(pm->size());
  put_u32(buf, count);
  for (const auto& [prefix, pm] : groups) {
    for (const auto& [name, t] : *pm) {
      std::string full = prefix + name;
      put_u32(buf, static_cast<std::uint32_t>(full.size()));
      buf.insert(buf.end(), full.begin(), full.end());
      put_u32(buf, static_cast<std::uint32_t>(t.shape().size()));
      for (std::size_t d : t.shape()) put_u32(buf, static_cast<std::uint32_t>(d));
      for (double v : t.values()) put_f32(buf, static_cast<float>(v));
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError(path + ": write failed");
}

std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r{buf, 0, path};

  r.need(4, "magic");
  if (std::memcmp(buf.data(), "PKD1", 4) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0");
  }
  r.off = 4;
  std::uint32_t version = r.u32("version");
  if (version != 1) {
    throw FormatError(path + ": unsupported version " + std::to_string(version) +
                      " at byte offset 4");
  }
  std::uint32_t count = r.u32("tensor count");
  std::vector<CheckpointEntry> entries(count);
  for (CheckpointEntry& e : entries) {
    std::uint32_t name_len = r.u32("name length");
    if (name_len > 4096) {
      throw FormatError(path + ": implausible name length at byte offset " +
                        std::to_string(r.off - 4));
    }
    e.name = r.str(name_len, "name");
    std::size_t rank_off = r.off;
    std::uint32_t rank = r.u32("rank");
    if (rank == 0 || rank > 8) {
      throw FormatError(path + ": dimension disagreement (rank " + std::to_string(rank) +
                        ") at byte offset " + std::to_string(rank_off));
    }
    std::size_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      std::size_t dim_off = r.off;
      std::uint32_t dim = r.u32("dim");
      if (dim == 0) {
        throw FormatError(path + ": dimension disagreement (zero dim) at byte offset " +
                          std::to_string(dim_off));
      }
      e.shape.push_back(dim);
      n *= dim;
    }
    e.values.resize(n);
    for (float& v : e.values) v = r.f32("tensor value");
  }
  if (r.off != buf.size()) {
    throw FormatError(path + ": trailing bytes at byte offset " + std::to_string(r.off));
  }
  return entries;
}

void load_group(const std::vector<CheckpointEntry>& entries, const std::string& prefix,
                ParamMap& dst) {
  for (auto& [name, t] : dst) {
    const CheckpointEntry* found = nullptr;
    std::string full = prefix + name;
    for (const CheckpointEntry& e : entries) {
      if (e.name == full) {
        found = &e;
        break;
      }
    }
    if (!found) throw FormatError("checkpoint: missing tensor '" + full + "'");
    if (found->shape != t.shape()) {
      throw FormatError("checkpoint: dimension disagreement for '" + full + "': " +
                        grad::shape_str(found->shape) + " vs " + grad::shape_str(t.shape()));
    }
    auto& vals = t.values();
    for (std::size_t i = 0; i < vals.size(); ++i) vals[i] = found->values[i];
  }
}

void save_planner(const planner::PlannerModel& model, const std::string& path) {
  write_checkpoint(path, {{"", &model.params}});
}

planner::PlannerModel planner_from_entries(const std::vector<CheckpointEntry>& entries,
                                           const std::string& prefix) {
  planner::PlannerConfig cfg;
  cfg.conv_widths.clear();
  cfg.head_hidden.clear();

  auto find = [&](const std::string& name) -> const CheckpointEntry* {
    for (const CheckpointEntry& e : entries) {
      if (e.name == prefix + name) return &e;
    }
    return nullptr;
  };

  for (std::size_t l = 0;; ++l) {
    const CheckpointEntry* w = find("backbone." + std::to_string(l) + ".w");
    if (!w) break;
    cfg.conv_widths.push_back(w->shape[0]);
  }
  const CheckpointEntry* embed = find("embed.w");
  if (!embed || cfg.conv_widths.empty()) {
    throw FormatError("checkpoint: not a planner container (prefix '" + prefix + "')");
  }
  cfg.command_embed = embed->shape[0];
  for (std::size_t l = 0;; ++l) {
    const CheckpointEntry* w = find("head." + std::to_string(l) + ".w");
    if (!w) break;
    cfg.head_hidden.push_back(w->shape[0]);
  }
  const CheckpointEntry* out_w = find("head.out.w");
  if (!out_w) throw FormatError("checkpoint: missing head.out.w under prefix '" + prefix + "'");
  cfg.T = out_w->shape[0] / 2;

  planner::PlannerModel model = planner::build_planner(cfg, 0);
  load_group(entries, prefix, model.params);
  return model;
}

planner::PlannerModel load_planner(const std::string& path, const std::string& prefix) {
  return planner_from_entries(read_checkpoint(path), prefix);
}

}  // namespace plankd
