#include <iostream>
#include <string>
#include <vector>

#include "naturalfinger/cli.hpp"

int main(int argc, char** argv) {
    return nf::cli::run(std::vector<std::string>(argv, argv + argc), std::cout, std::cerr);
}
