#include <iostream>

#include "neon/cli.hpp"

int main(int argc, char** argv) { return neon::cli_main(argc, argv, std::cout, std::cerr); }
