#include <gmdkit/cli.hpp>

int main(int argc, char** argv) { return gmdkit::cli::main_entry(argc, argv); }
