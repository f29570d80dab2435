#include "attr/cli.hpp"

int main(int argc, char** argv) { return attr::run_cli(argc, argv); }
