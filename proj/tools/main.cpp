#include "planktonfl_cli.hpp"

int main(int argc, char** argv) {
    return planktonfl::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
