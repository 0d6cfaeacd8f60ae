#include "tailsim/cli.hpp"

int main(int argc, char** argv)
{
    return tailsim::cli::main(argc, argv);
}
