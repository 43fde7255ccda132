#include "toycast/cli/commands.hpp"

int main(int argc, char** argv) { return toycast::cli::run(argc, argv); }
