#include "hgpose/cli.hpp"

int main(int argc, char** argv) { return hgpose::run_cli(argc, argv); }
