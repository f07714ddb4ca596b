#include "irra/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return irra::run_cli(argc, argv, std::cout, std::cerr); }
