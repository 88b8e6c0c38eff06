#include <iostream>

#include "cvla/cli.hpp"

int main(int argc, char** argv) { return cvla::run_cli(argc, argv, std::cout, std::cerr); }
