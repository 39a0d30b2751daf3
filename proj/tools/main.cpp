#include "cli.hpp"

int main(int argc, char** argv) { return mresim::cli_main(argc, argv); }
