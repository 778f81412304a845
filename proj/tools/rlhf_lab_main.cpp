#include <string>
#include <vector>

#include "rlhf_lab/commands.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return rlhf_lab::commands::cli_dispatch(args);
}
