#include <iostream>

#include "dgsan/cli.hpp"

int main(int argc, char** argv) { return dgsan::cli::run(argc, argv, std::cout, std::cerr); }
