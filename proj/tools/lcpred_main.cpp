#include "lcpred/cli.hpp"

int main(int argc, char** argv) { return lcpred::run_cli(argc, argv); }
