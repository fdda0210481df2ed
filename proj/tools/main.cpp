#include "prefdiff/cli.hpp"

int main(int argc, char** argv) { return prefdiff::cmd_dispatch(argc, argv); }
