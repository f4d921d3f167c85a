#include <iostream>

#include "lidargen/cli.hpp"

int main(int argc, char** argv) {
    return lidargen::cli::main(argc, argv, std::cout, std::cerr);
}
