#include <iostream>

#include "dataforge/cli.hpp"

int main(int argc, char** argv) {
  return dataforge::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
