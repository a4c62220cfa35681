#include "phenolca/cli.hpp"

int main(int argc, char** argv) { return phenolca::cli::run(argc, argv); }
