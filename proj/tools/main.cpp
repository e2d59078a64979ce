#include <iostream>

#include "cvpe/cli.hpp"

int main(int argc, char** argv) { return cvpe::cli::run(argc, argv, std::cout, std::cerr); }
