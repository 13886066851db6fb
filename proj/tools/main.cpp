#include "fxattn/cli.hpp"

int main(int argc, char** argv) { return fxattn::cli::dispatch(argc, argv); }
