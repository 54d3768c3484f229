#include "hparse/cli.hpp"

int main(int argc, char** argv) { return hparse::run_cli(argc, argv); }
