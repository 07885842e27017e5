#include "mnarvam/cli.hpp"

int main(int argc, char** argv) { return mnarvam::cli::run(argc, argv); }
