#include <iostream>

#include "mca/cli.hpp"

int main(int argc, char** argv) { return mca::cli::run(argc, argv, std::cout, std::cerr); }
