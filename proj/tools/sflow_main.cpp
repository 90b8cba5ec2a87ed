#include "commands.hpp"

int main(int argc, char** argv) { return sflow::cli::dispatch(argc, argv); }
