#include "tabformer/cli.hpp"

int main(int argc, char** argv) { return tabformer::cli::main(argc, argv); }
