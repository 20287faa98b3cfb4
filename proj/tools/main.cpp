#include "batchverify/cli.hpp"

#include <iostream>

int main(int argc, char **argv)
{
    return batchverify::cli::main(argc, argv, std::cout, std::cerr);
}
