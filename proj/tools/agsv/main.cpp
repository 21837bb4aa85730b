#include <iostream>
#include <string>
#include <vector>

#include "agsv/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return agsv::cli::run(args, std::cout, std::cerr);
}
