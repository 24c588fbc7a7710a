// SPDX-License-Identifier: Apache-2.0
#include "act/cli.hpp"

int main(int argc, char** argv)
{
    return act::run_cli(std::vector<std::string>(argv + 1, argv + argc));
}
