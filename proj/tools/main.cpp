#include "commands.hpp"

int main(int argc, char** argv) { return pwcli::run_cli(argc, argv); }
