#include <iostream>

#include "gptx/workbench.hpp"

int main(int argc, char** argv) {
    return gptx::cli::run(argc, argv, std::cout, std::cerr);
}
