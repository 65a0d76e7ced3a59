#include "vdmood/cli.hpp"

int main(int argc, char** argv) { return vdmood::run_cli(argc, argv); }
