#include <iostream>
#include <string>
#include <vector>

#include "cmvf/commands.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cmvf::run_cli(args, std::cout, std::cerr);
}
