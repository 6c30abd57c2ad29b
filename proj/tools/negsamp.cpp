#include <iostream>

#include "negsamp/cli.hpp"

int main(int argc, char** argv) { return negsamp::cli::run(argc, argv, std::cout, std::cerr); }
