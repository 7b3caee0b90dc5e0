#include "massub/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return massub::run_cli(argc, argv, std::cout, std::cerr); }
