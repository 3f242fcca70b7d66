#include "fpad/cli.hpp"

#include <iostream>

int main(int argc, char** argv) { return fpad::cli::dispatch(argc, argv, std::cout, std::cerr); }
