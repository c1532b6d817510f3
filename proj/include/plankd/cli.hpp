#pragma once

#include <string>
#include <vector>

namespace plankd::harness {

// Subcommands: gen-data, train-teacher, distill, eval, ablate, plot, bench.
// Exit codes: 0 success, 1 usage error, 2 data/checkpoint format error,
// 3 numeric abort.
int cli(const std::vector<std::string>& args);

}  // namespace plankd::harness
