#include "usersim/cli.hpp"

int main(int argc, char** argv)
{
    return usersim::cli::run(argc, argv);
}
