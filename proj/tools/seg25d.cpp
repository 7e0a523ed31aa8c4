#include <iostream>

#include "seg25d/cli.hpp"

int main(int argc, char** argv) {
  return seg25d::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
