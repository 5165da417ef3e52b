#include <iostream>

#include "stackvault/cli.hpp"

int main(int argc, char** argv) { return stackvault::run_cli(argc, argv, std::cout, std::cerr); }
