#include <iostream>

#include "bicross/cli/app.hpp"

int main(int argc, char** argv) { return bicross::cli::dispatch(argc, argv, std::cout, std::cerr); }
