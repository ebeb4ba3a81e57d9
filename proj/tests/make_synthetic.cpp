// Writes a small synthetic CIFAR-10 directory for the CLI smoke test.

#include <cstdio>
#include <string>

#include "adabin/data.hpp"

int main(int argc, char** argv) {
  if (argc != 4) {
    std::fprintf(stderr, "usage: make_synthetic <dir> <records per train file> <test records>\n");
    return 2;
  }
  adabin::write_synthetic_cifar10(argv[1], std::stoul(argv[2]), std::stoul(argv[3]), 1);
  return 0;
}
