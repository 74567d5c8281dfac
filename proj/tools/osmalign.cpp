#include <string>
#include <vector>

#include "osmalign/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return osmalign::cli::run(args);
}
