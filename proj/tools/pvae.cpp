#include <iostream>

#include "pvae/cli.hpp"

int main(int argc, char** argv) { return pvae::run_cli(argc, argv, std::cout, std::cerr); }
