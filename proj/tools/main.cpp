#include "itnas_cli.hpp"

int main(int argc, char** argv) { return itnas::cli::cli_main(argc, argv); }
