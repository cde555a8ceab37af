#include "stackpred/cli.hpp"

int main(int argc, char** argv) { return stackpred::cli::run(argc, argv); }
