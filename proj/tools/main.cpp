// SPDX-License-Identifier: Apache-2.0
#include "cli.hpp"

int main(int argc, char** argv) {
  return fieldfuse::cli::run(std::vector<std::string>(argv + 1, argv + argc));
}
