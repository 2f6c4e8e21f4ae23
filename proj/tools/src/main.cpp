#include <cstdlib>
#include <iostream>

#include "cli.hpp"

int main(int argc, char** argv) {
  qamoe::cli::Environment env;
  env.out_dir = std::getenv("QAMOE_OUT");
  return qamoe::cli::run(argc, argv, std::cout, std::cerr, env);
}
