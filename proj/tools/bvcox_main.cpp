#include <iostream>
#include <string>
#include <vector>

#include "bvcox/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return bvcox::run_cli(args, std::cout, std::cerr);
}
