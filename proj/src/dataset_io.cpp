#include "plankd/dataset_io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <vector>

#include "plankd/errors.hpp"

namespace plankd::scenario {

namespace {

static_assert(std::endian::native == std::endian::little,
              "serialization assumes a little-endian host");

void put_bytes(std::vector<char>& out, const void* p, std::size_t n) {
  const char* c = static_cast<const char*>(p);
  out.insert(out.end(), c, c + n);
}

void put_u8(std::vector<char>& out, std::uint8_t v) { put_bytes(out, &v, 1); }
void put_u32(std::vector<char>& out, std::uint32_t v) { put_bytes(out, &v, 4); }
void put_u64(std::vector<char>& out, std::uint64_t v) { put_bytes(out, &v, 8); }
void put_f32(std::vector<char>& out, float v) { put_bytes(out, &v, 4); }

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
  std::uint8_t u8(const char* what) {
    need(1, what);
    return static_cast<std::uint8_t>(buf[off++]);
  }
  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v;
    std::memcpy(&v, &buf[off], 4);
    off += 4;
    return v;
  }
  std::uint64_t u64(const char* what) {
    need(8, what);
    std::uint64_t v;
    std::memcpy(&v, &buf[off], 8);
    off += 8;
    return v;
  }
  float f32(const char* what) {
    need(4, what);
    float v;
    std::memcpy(&v, &buf[off], 4);
    off += 4;
    return v;
  }
};

std::vector<char> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return buf;
}

void write_file(const std::string& path, const std::vector<char>& buf) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace

void write_dataset(const Dataset& d, const std::string& path) {
  std::vector<char> buf;
  put_bytes(buf, "PKDS", 4);
  put_u32(buf, d.version);
  put_u32(buf, static_cast<std::uint32_t>(d.scenes.size()));
  put_u32(buf, d.T);
  put_u32(buf, d.C);
  put_u32(buf, d.H);
  put_u32(buf, d.W);
  for (const Scene& s : d.scenes) {
    put_u64(buf, s.scene_seed);
    put_f32(buf, s.speed);
    put_u8(buf, static_cast<std::uint8_t>(s.command));
    for (std::uint8_t b : s.states.as_array()) put_u8(buf, b);
    put_u32(buf, static_cast<std::uint32_t>(s.obstacles.size()));
    for (const ObstaclePose& o : s.obstacles) {
      put_f32(buf, o.x);
      put_f32(buf, o.y);
      put_f32(buf, o.vx);
      put_f32(buf, o.vy);
      put_u8(buf, static_cast<std::uint8_t>(o.kind));
    }
    for (const auto& w : s.expert_traj) {
      put_f32(buf, w[0]);
      put_f32(buf, w[1]);
    }
    for (float v : s.bev) put_f32(buf, v);
  }
  write_file(path, buf);
}

Dataset read_dataset(const std::string& path) {
  std::vector<char> buf = read_file(path);
  Reader r{buf, 0, path};

  r.need(4, "magic");
  if (std::memcmp(&buf[0], "PKDS", 4) != 0) {
    throw FormatError(path + ": bad magic at byte offset 0");
  }
  r.off = 4;

  Dataset d;
  d.version = r.u32("version");
  if (d.version != 1) {
    throw FormatError(path + ": unsupported version " + std::to_string(d.version) +
                      " at byte offset 4");
  }
  std::uint32_t count = r.u32("scene count");
  std::size_t t_off = r.off;
  d.T = r.u32("T");
  d.C = r.u32("C");
  d.H = r.u32("H");
  d.W = r.u32("W");
  if (d.T == 0 || d.C != kChannels || d.H != kGrid || d.W != kGrid) {
    throw FormatError(path + ": dimension disagreement (T=" + std::to_string(d.T) +
                      " C=" + std::to_string(d.C) + " H=" + std::to_string(d.H) +
                      " W=" + std::to_string(d.W) + ") at byte offset " + std::to_string(t_off));
  }

  d.scenes.resize(count);
  for (Scene& s : d.scenes) {
    s.scene_seed = r.u64("scene seed");
    s.speed = r.f32("speed");
    s.command = static_cast<Command>(r.u8("command"));
    if (static_cast<std::uint8_t>(s.command) > 3) {
      throw FormatError(path + ": invalid command byte at byte offset " + std::to_string(r.off - 1));
    }
    std::array<std::uint8_t, 8> st{};
    for (auto& b : st) b = r.u8("planning state");
    s.states = PlanningStates::from_array(st);
    std::uint32_t nob = r.u32("obstacle count");
    s.obstacles.resize(nob);
    for (ObstaclePose& o : s.obstacles) {
      o.x = r.f32("obstacle x");
      o.y = r.f32("obstacle y");
      o.vx = r.f32("obstacle vx");
      o.vy = r.f32("obstacle vy");
      o.kind = static_cast<ObstacleKind>(r.u8("obstacle kind"));
      if (static_cast<std::uint8_t>(o.kind) > 1) {
        throw FormatError(path + ": invalid obstacle kind at byte offset " + std::to_string(r.off - 1));
      }
    }
    s.expert_traj.resize(d.T);
    for (auto& w : s.expert_traj) {
      w[0] = r.f32("waypoint x");
      w[1] = r.f32("waypoint y");
    }
    s.bev.resize(static_cast<std::size_t>(d.C) * d.H * d.W);
    for (float& v : s.bev) v = r.f32("bev value");
  }
  if (r.off != buf.size()) {
    throw FormatError(path + ": trailing bytes at byte offset " + std::to_string(r.off));
  }
  return d;
}

std::string file_hash(const std::string& path) {
  std::vector<char> buf = read_file(path);
  std::uint64_t h = 0xcbf29ce484222325ull;
  for (char c : buf) {
    h ^= static_cast<std::uint8_t>(c);
    h *= 0x100000001b3ull;
  }
  char out[17];
  std::snprintf(out, sizeof(out), "%016llx", static_cast<unsigned long long>(h));
  return std::string(out);
}

}  // namespace plankd::scenario
