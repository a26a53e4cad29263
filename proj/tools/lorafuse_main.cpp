#include "lorafuse/cli.hpp"

int main(int argc, char** argv) { return lorafuse::run_cli(argc, argv); }
