#include "scc/cli.hpp"

int main(int argc, char** argv) { return scc::cli::run(argc, argv); }
