#include <string>
#include <vector>

#include "d3re/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return d3re::run_cli(std::move(args));
}
