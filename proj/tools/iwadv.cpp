#include "iwadv/cli/commands.hpp"

int main(int argc, char** argv) { return iwadv::cli::run(argc, argv); }
