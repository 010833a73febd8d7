#include "fedimpres/app.hpp"

int main(int argc, char** argv) { return fedimpres::run_cli(argc, argv); }
