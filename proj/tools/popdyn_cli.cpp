#include <iostream>

#include "popdyn/cli/app.hpp"

int main(int argc, char** argv) { return popdyn::cli::run_app(argc, argv, std::cout, std::cerr); }
