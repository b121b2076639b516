#include <string>
#include <vector>

#include "stcal/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return stcal::run_cli(args);
}
