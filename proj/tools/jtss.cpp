#include <iostream>

#include "jtss/cli.hpp"

int main(int argc, char** argv) { return jtss::cli::run(argc, argv, std::cout, std::cerr); }
