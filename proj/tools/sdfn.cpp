#include "sdfn/cli.hpp"

int main(int argc, char** argv) { return sdfn::run_cli(argc, argv); }
