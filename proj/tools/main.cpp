#include "cli.hpp"

int main(int argc, char** argv) { return conformal_triage::cli::run(argc, argv); }
