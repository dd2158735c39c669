#include <discq/cli.hpp>

int main(int argc, char** argv) { return discq::cli_main(argc, argv); }
