#include <iostream>

#include "commands.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Render synthetic crop-row days with exact keypoint labels"};
  auto run = metakey::tools::add_synth_gen(app);
  CLI11_PARSE(app, argc, argv);
  try {
    return run();
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
