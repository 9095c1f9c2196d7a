#include "frailcwm/cli.hpp"

int main(int argc, char** argv) { return frailcwm::cli::run(argc, argv); }
