#include <iostream>
#include <string>
#include <vector>

#include "berngrad/cli_args.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return berngrad::cli::cli_main(args, std::cout, std::cerr);
}
