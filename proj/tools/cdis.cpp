#include <iostream>
#include <string>
#include <vector>

#include "cdis/cli.hpp"

int main(int argc, char** argv) {
  return cdis::run_cli(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
