#include <iostream>

#include "qpmerge/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return qpmerge::run_cli(args, std::cout, std::cerr);
}
