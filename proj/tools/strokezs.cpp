#include <iostream>

#include "strokezs/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return strokezs::cli::run(args, std::cout, std::cerr);
}
