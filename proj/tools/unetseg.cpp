#include <iostream>

#include "unetseg/cli.hpp"

int main(int argc, char** argv) { return unetseg::cli::run(argc, argv, std::cout, std::cerr); }
