#include <iostream>

#include "dagpu/cli.hpp"

int main(int argc, char** argv) { return dagpu::cli::main(argc, argv, std::cout, std::cerr); }
