#include <iostream>

#include "sager/cli.hpp"

int main(int argc, char** argv) { return sager::run(argc, argv, std::cout, std::cerr); }
