#include "fedsim/simctl.hpp"

int main(int argc, char** argv) { return fedsim::simctl::cli_main(argc, argv); }
