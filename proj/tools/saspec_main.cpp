#include <iostream>

#include "saspec/cli.hpp"

int main(int argc, char** argv) { return saspec::cli::run(argc, argv, std::cout, std::cerr); }
