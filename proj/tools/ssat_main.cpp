#include "ssat/cli.hpp"

int main(int argc, char** argv) { return ssat::run_cli(argc, argv); }
