#include "spherebg/cli.hpp"

int main(int argc, char** argv) { return spherebg::cli::run(argc, argv); }
