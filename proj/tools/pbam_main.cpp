#include "pbam/harness.hpp"

int main(int argc, char** argv) { return pbam::cli_main(argc, argv); }
