#include <vector>
#include <string>

#include "hpsl/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return hpsl::cli::run(args);
}
