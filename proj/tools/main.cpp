#include "mgalign/cli.hpp"

int main(int argc, char** argv) { return mgalign::cli::run(argc, argv); }
