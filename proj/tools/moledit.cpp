#include <iostream>
#include <string>
#include <vector>

#include "moledit/cli.hpp"

int main(int argc, char** argv) {
  return moledit::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
