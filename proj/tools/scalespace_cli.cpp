#include "scalespace/cli.hpp"

int main(int argc, char** argv) { return scalespace::cli::dispatch(argc, argv); }
