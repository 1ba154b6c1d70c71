#include "voxseg/cli.hpp"

int main(int argc, char** argv) { return voxseg::cli_main(argc, argv); }
