#include <iostream>
#include <string>
#include <vector>

#include "cmlm/cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return cmlm::run(args, std::cout, std::cerr);
}
