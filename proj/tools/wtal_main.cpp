#include "wtal/cli.hpp"

int main(int argc, char** argv) { return wtal::cli::run(argc, argv); }
