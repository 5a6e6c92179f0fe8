#include <iostream>

#include "dpnmt/cli.hpp"

int main(int argc, char** argv) {
    return dpnmt::dispatch({argv + 1, argv + argc}, std::cout, std::cerr);
}
