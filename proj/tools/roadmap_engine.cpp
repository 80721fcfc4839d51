#include <string>
#include <vector>

#include "roadmap/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return roadmap::cli::run(args, std::cout, std::cerr);
}
