#include <iostream>
#include <string>
#include <vector>

#include "abstain/pipeline.h"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return abstain::RunCommand(args, std::cout, std::cerr);
}
