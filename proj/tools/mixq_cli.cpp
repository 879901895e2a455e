#include "mixq/cli.hpp"

int main(int argc, char** argv) { return mixq::run_cli(argc, argv); }
