#include <iostream>

#include "crossgaze/cli/commands.hpp"

int main(int argc, char** argv) { return crossgaze::cli::run(argc, argv, std::cout, std::cerr); }
