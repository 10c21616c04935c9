#include "dpa/nn.hpp"

#include <cstdio>

int main() {
  std::puts("dpa-lab: experiment runner (subcommands land with the experiment modules)");
  return 0;
}
