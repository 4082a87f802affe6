#include "dpr/cli.hpp"

int main(int argc, char** argv) { return dpr::cli::run(argc, argv); }
