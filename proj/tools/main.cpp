#include <iostream>

#include "medvqa/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv, argv + argc);
  return medvqa::run_cli(args, std::cout, std::cerr);
}
