#include "ste/cli.hpp"

int main(int argc, char** argv) { return ste::cli::run(argc, argv); }
