#include "dvsl/harness.hpp"

int main(int argc, char** argv) { return dvsl::harness::cli(argc, argv); }
