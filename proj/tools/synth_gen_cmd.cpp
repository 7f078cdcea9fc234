#include <iostream>
#include <memory>

#include "commands.hpp"
#include "metakey/harness/experiment.hpp"

namespace metakey::tools {

std::function<int()> add_synth_gen(CLI::App& app) {
  struct Options {
    std::string regime = "synthetic-early";
    std::int64_t days = 1;
    std::int64_t images = 100;
    std::uint64_t seed = 0;
    std::string out;
    int size = 128;
    std::string prefix;
  };
  auto o = std::make_shared<Options>();
  app.add_option("--regime", o->regime, "synthetic-early, synthetic-late or synthetic-very-late")
      ->capture_default_str();
  app.add_option("--days", o->days, "days to generate")->check(CLI::PositiveNumber)->capture_default_str();
  app.add_option("--images-per-day", o->images, "images per day")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  app.add_option("--seed", o->seed, "generator seed")->capture_default_str();
  app.add_option("--out", o->out, "output directory")->required();
  app.add_option("--size", o->size, "square image size in pixels")->check(CLI::Range(8, 4096))->capture_default_str();
  app.add_option("--day-prefix", o->prefix, "day id prefix (default <regime>-d)");
  return [o] {
    harness::RegimeSpec r;
    r.params = taskdata::synth_preset(o->regime);
    r.name = r.params.name;
    r.days = o->days;
    r.images_per_day = o->images;
    r.seed = o->seed;
    r.day_prefix = o->prefix.empty() ? r.name + "-d" : o->prefix;
    const auto manifest = harness::write_synthetic_dataset(r, o->size, o->size, o->out);
    std::cout << "wrote " << o->days * o->images << " images, manifest " << manifest << "\n";
    return 0;
  };
}

}  // namespace metakey::tools
