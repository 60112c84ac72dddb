#include "cfcc/reservoir.hpp"

int main(int argc, char** argv) { return cfcc::res::cli_main(argc, argv); }
