#include "modrestore/cli.hpp"

int main(int argc, char** argv) { return modrestore::run_cli(argc, argv); }
