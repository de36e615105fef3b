#include "panelqmle/cli.hpp"

int main(int argc, char** argv) { return panelqmle::run_cli(argc, argv); }
