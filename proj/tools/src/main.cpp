// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  return est_tools::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
