#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "cli.hpp"

int main(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  // Installed under a subcommand's name, the binary runs that subcommand.
  const auto self = std::filesystem::path(argc > 0 ? argv[0] : "").filename().string();
  for (const char* sub : {"sim-run", "covert-bench", "pixel-attack", "cnn-attack", "llm-attack", "sanitize"}) {
    if (self == sub) args.insert(args.begin(), self);
  }
  return stalereg::cli::run(args, std::cout, std::cerr);
}
