#include "nwflow/cli.hpp"

int main(int argc, char** argv) { return nwflow::cli_main(argc, argv); }
