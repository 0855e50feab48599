#include "binloc/cli.hpp"

int main(int argc, char** argv) { return binloc::cli_main(argc, argv); }
