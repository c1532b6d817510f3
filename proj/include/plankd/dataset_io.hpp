#pragma once

#include <string>

#include "plankd/scenario.hpp"

namespace plankd::scenario {

// PKDS container, little-endian. Malformed input raises FormatError naming the
// byte offset of the offending field.
void write_dataset(const Dataset& d, const std::string& path);
Dataset read_dataset(const std::string& path);

// FNV-1a over the file bytes, hex-encoded; used by run manifests.
std::string file_hash(const std::string& path);

}  // namespace plankd::scenario
