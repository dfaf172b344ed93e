#include <iostream>

#include "neonav/cli.hpp"

int main(int argc, char** argv) { return neonav::cli::run(argc, argv, std::cout, std::cerr); }
