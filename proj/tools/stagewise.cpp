// SPDX-License-Identifier: Apache-2.0
#include <iostream>

#include "stagewise/service/cli.hpp"

int main(int argc, char** argv) { return stagewise::service::run_cli(argc, argv, std::cout, std::cerr); }
