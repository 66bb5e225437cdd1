#include "fsuie/cli.hpp"

int main(int argc, char** argv) { return fsuie::cli::run(argc, argv); }
