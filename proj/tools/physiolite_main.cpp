#include "physiolite/cli.hpp"

int main(int argc, char** argv) {
    std::vector<std::string> args(argv + 1, argv + argc);
    return physiolite::cli_dispatch(args);
}
