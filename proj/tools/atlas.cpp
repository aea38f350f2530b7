#include <string>
#include <vector>

#include "atlas/cli.hpp"

int main(int argc, char** argv) {
    return atlas::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
