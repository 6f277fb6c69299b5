#include <iostream>

#include "iontrap/cli.hpp"

int main(int argc, char** argv) { return iontrap::cli::run(argc, argv, std::cout, std::cerr); }
