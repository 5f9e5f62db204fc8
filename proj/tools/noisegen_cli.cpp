#include <noisegen/cli.hpp>

int main(int argc, char** argv) { return noisegen::cli_main(argc, argv); }
