#pragma once

#include <string>

#include "plankd/config.hpp"
#include "plankd/trainer.hpp"

namespace plankd::harness {

// One key = value record per line plus embedded step/epoch lines; timing goes
// in a marked section kept out of the determinism digest.
void write_train_report(const train::TrainReport& report, const std::string& path);
train::TrainReport read_train_report(const std::string& path);

// loss curves: header row, one row per step / per epoch
void write_step_csv(const train::TrainReport& report, const std::string& path);
void write_epoch_csv(const train::TrainReport& report, const std::string& path);

struct RunManifest {
  std::string command;
  KeyValues config;
  KeyValues inputs;   // e.g. dataset path -> content hash
  KeyValues outputs;  // artifact kind -> path
  KeyValues metrics;
};

void write_manifest(const RunManifest& m, const std::string& path);

std::string format_metrics(const EvalMetrics& m);

}  // namespace plankd::harness
