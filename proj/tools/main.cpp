#include <iostream>

#include "mergeguard/io/cli.hpp"

int main(int argc, char** argv) {
  return mergeguard::io::cli_dispatch(argc, argv, std::cout, std::cerr);
}
