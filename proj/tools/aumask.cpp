#include "aumask/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return aumask::cli::run(argc, argv, std::cout, std::cerr); }
