#include "cvrmpc/cli.hpp"

int main(int argc, char** argv) { return cvrmpc::cli_main(argc, argv); }
