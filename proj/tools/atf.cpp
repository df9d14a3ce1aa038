#include "atf/cli.hpp"

int main(int argc, char** argv) { return atf::cli::run_cli(argc, argv); }
