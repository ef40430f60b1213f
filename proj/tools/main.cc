#include "cli.h"

int main(int argc, char** argv) { return hfprune::cli::run(argc, argv); }
