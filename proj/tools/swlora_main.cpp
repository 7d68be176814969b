#include "swlora/cli.hpp"

int main(int argc, char** argv) { return swlora::run_cli(argc, argv); }
