#include <iostream>

#include "attndiff/cli.hpp"

int main(int argc, char** argv) {
  return attndiff::cli::run(argc, argv, std::cout, std::cerr);
}
