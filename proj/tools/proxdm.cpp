#include <iostream>

#include "proxdm/cli.hpp"

int main(int argc, char** argv) { return proxdm::cli::run_main(argc, argv, std::cout, std::cerr); }
