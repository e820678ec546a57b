#include <iostream>
#include <string>
#include <vector>

#include "rrp/cli.hpp"

int main(int argc, char** argv) {
  return rrp::run_cli(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
