#include <iostream>

#include "illiquid/cli.hpp"

int main(int argc, char** argv) { return illiquid::run_cli(argc, argv, std::cout, std::cerr); }
