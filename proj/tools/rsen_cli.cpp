#include "cli.hpp"

int main(int argc, char** argv) { return rsen::cli::run_cli(argc, argv); }
