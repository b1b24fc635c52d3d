#include <iostream>

#include "vaeneu/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return vaeneu::cli::run(args, std::cout, std::cerr);
}
