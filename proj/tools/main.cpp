#include "commands.hpp"

int main(int argc, char** argv) { return ega::cli::run(argc, argv); }
