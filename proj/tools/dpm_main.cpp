#include <iostream>
#include <string>
#include <vector>

#include "dpm/cli.hpp"

int main(int argc, char** argv) {
  return dpm::cli::run(std::vector<std::string>(argv + 1, argv + argc), std::cout, std::cerr);
}
