#include "plankd/report.hpp"

#include <cstdio>
#include <fstream>
#include <sstream>

#include "plankd/errors.hpp"

namespace plankd::harness {

namespace {

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw FormatError(path + ": cannot open file for writing");
  out << text;
  if (!out) throw FormatError(path + ": write failed");
}

}  // namespace

void write_train_report(const train::TrainReport& report, const std::string& path) {
  std::string text = "# plankd train report\n";
  text += report.digest_text();
  text += "# timing (not part of the determinism digest)\n";
  for (std::size_t e = 0; e < report.epoch_wall_seconds.size(); ++e) {
    text += "wall epoch " + std::to_string(e) + " seconds=" + fmt(report.epoch_wall_seconds[e]) + "\n";
  }
  write_text(path, text);
}

train::TrainReport read_train_report(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError(path + ": cannot open file");
  train::TrainReport r;
  std::string line;
  auto value_after = [](const std::string& s, const std::string& key) {
    std::size_t p = s.find(key + "=");
    if (p == std::string::npos) throw FormatError("report: missing field " + key);
    std::size_t start = p + key.size() + 1;
    std::size_t end = s.find(' ', start);
    return std::stod(s.substr(start, end - start));
  };
  while (std::getline(in, line)) {
    if (line.rfind("step ", 0) == 0) {
      train::StepRecord rec;
      rec.total = value_after(line, "total");
      rec.l_w = value_after(line, "l_w");
      rec.l_w_star = value_after(line, "l_w_star");
      rec.neg_l_ib = value_after(line, "neg_l_ib");
      rec.l_z = value_after(line, "l_z");
      rec.l_rank = value_after(line, "l_rank");
      rec.l_e = value_after(line, "l_e");
      r.steps.push_back(rec);
    } else if (line.rfind("epoch ", 0) == 0) {
      EvalMetrics m;
      m.waypoint_l1 = value_after(line, "waypoint_l1");
      m.crucial_l1 = value_after(line, "crucial_l1");
      m.collision_proxy_rate = value_after(line, "collision_proxy_rate");
      m.composite_score = value_after(line, "composite_score");
      r.epoch_eval.push_back(m);
    } else if (line.rfind("wall epoch ", 0) == 0) {
      r.epoch_wall_seconds.push_back(value_after(line, "seconds"));
    } else if (!line.empty() && line[0] != '#') {
      if (line.rfind("seeds ", 0) == 0) {
        r.seed_echo += line + "\n";
      } else {
        r.config_echo += line + "\n";
      }
    }
  }
  return r;
}

void write_step_csv(const train::TrainReport& report, const std::string& path) {
  std::string text = "step,total,l_w,l_w_star,neg_l_ib,l_z,l_rank,l_e\n";
  for (std::size_t i = 0; i < report.steps.size(); ++i) {
    const train::StepRecord& r = report.steps[i];
    text += std::to_string(i) + "," + fmt(r.total) + "," + fmt(r.l_w) + "," + fmt(r.l_w_star) +
            "," + fmt(r.neg_l_ib) + "," + fmt(r.l_z) + "," + fmt(r.l_rank) + "," + fmt(r.l_e) +
            "\n";
  }
  write_text(path, text);
}

void write_epoch_csv(const train::TrainReport& report, const std::string& path) {
  std::string text = "epoch,waypoint_l1,crucial_l1,collision_proxy_rate,composite_score\n";
  for (std::size_t e = 0; e < report.epoch_eval.size(); ++e) {
    const EvalMetrics& m = report.epoch_eval[e];
    text += std::to_string(e) + "," + fmt(m.waypoint_l1) + "," + fmt(m.crucial_l1) + "," +
            fmt(m.collision_proxy_rate) + "," + fmt(m.composite_score) + "\n";
  }
  write_text(path, text);
}

void write_manifest(const RunManifest& m, const std::string& path) {
  std::string text = "# plankd run manifest\n";
  text += "command = " + m.command + "\n";
  for (const auto& [k, v] : m.config) text += "config." + k + " = " + v + "\n";
  for (const auto& [k, v] : m.inputs) text += "input." + k + " = " + v + "\n";
  for (const auto& [k, v] : m.outputs) text += "output." + k + " = " + v + "\n";
  for (const auto& [k, v] : m.metrics) text += "metric." + k + " = " + v + "\n";
  write_text(path, text);
}

std::string format_metrics(const EvalMetrics& m) {
  std::string out;
  out += "waypoint_l1 = " + fmt(m.waypoint_l1) + "\n";
  out += "crucial_l1 = " + fmt(m.crucial_l1) + "\n";
  out += "collision_proxy_rate = " + fmt(m.collision_proxy_rate) + "\n";
  out += "composite_score = " + fmt(m.composite_score) + "\n";
  return out;
}

}  // namespace plankd::harness
