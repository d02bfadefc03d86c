#include <iostream>

#include "rainex/cli.hpp"

int main(int argc, char** argv) { return rainex::cli::run(argc, argv, std::cout, std::cerr); }
