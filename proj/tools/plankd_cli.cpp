#include <vector>
#include <string>

#include "plankd/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return plankd::harness::cli(args);
}
