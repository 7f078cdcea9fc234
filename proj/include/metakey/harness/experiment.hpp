#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "metakey/baseline/baseline.hpp"
#include "metakey/harness/ini.hpp"
#include "metakey/kpnet/model.hpp"
#include "metakey/metacore/config.hpp"
#include "metakey/taskdata/split.hpp"
#include "metakey/taskdata/synth.hpp"

namespace metakey::harness {

enum class TrainMode { maml, maml_pp, anil_pp, baseline };

std::string_view to_string(TrainMode m);
/// Accepts maml, maml_pp (maml++), anil_pp (anil++), baseline.
TrainMode parse_train_mode(std::string_view text);
bool is_meta(TrainMode m);
metacore::Mode meta_mode(TrainMode m);

enum class SeasonWeighting { image, day };
std::string_view to_string(SeasonWeighting w);
SeasonWeighting parse_season_weighting(std::string_view text);

/// A synthetic regime section: `days` days named <prefix>00, <prefix>01, ...
struct RegimeSpec {
  std::string name;
  taskdata::SynthParams params;
  std::int64_t days = 0;
  std::int64_t images_per_day = 0;
  std::string day_prefix;
  std::uint64_t seed = 0;
};

struct SplitConfig {
  taskdata::SplitSpec spec;
  /// Which within-day portion of each listed day the split uses.
  std::optional<taskdata::Portion> portion;
};

struct ExperimentConfig {
  std::string origin;  // file the config came from, for messages
  TrainMode mode = TrainMode::maml_pp;
  std::uint64_t seed = 0;
  std::string output_dir = "metakey-out";
  std::string train_label;  // row heading in reports; defaults to the train split name
  /// Episodes between meta checkpoints and epochs between baseline ones.
  std::int64_t meta_validation_interval = 250;
  std::int64_t baseline_validation_interval = 1;
  std::int64_t eval_runs = 3;
  std::int64_t eval_k = 0;  // 0: the meta k
  SeasonWeighting season_weighting = SeasonWeighting::image;
  /// Seed of the support draws used for the validation loss of meta modes.
  std::uint64_t val_seed = 0;

  // data
  bool synthetic = true;
  int image_height = 128;
  int image_width = 128;
  std::string manifest_root;
  std::string manifest_file;
  std::uint64_t partition_seed = 0;
  std::vector<RegimeSpec> regimes;
  std::map<std::string, SplitConfig> splits;  // train, val, test

  kpnet::ModelConfig model;
  metacore::MetaConfig meta;
  baseline::BaselineConfig baseline;

  /// Sets the mode and keeps meta.mode in step with it.
  void set_mode(TrainMode m);
  /// Throws ConfigError on any inconsistency; run before any compute.
  void validate() const;
  /// Hex content hash of every setting that influences training.
  std::string fingerprint() const;
  std::int64_t effective_interval() const;
  std::int64_t effective_k() const { return eval_k > 0 ? eval_k : meta.k; }
};

ExperimentConfig parse_experiment(const IniDocument& doc, const std::string& origin = "<config>");
ExperimentConfig load_experiment(const std::string& path);

struct ExperimentData {
  taskdata::TaskCollection collection;
  taskdata::Split train;
  taskdata::Split val;
  taskdata::Split test;
};

/// Generates or loads the images and builds the three splits.
ExperimentData build_data(const ExperimentConfig& config,
                          const std::function<void(const std::string&)>& warn = {});

/// Synthetic days of one regime, in day order.
std::vector<taskdata::Task> generate_regime(const RegimeSpec& regime, int height, int width);

/// Renders a regime's days and writes them as PPM images plus
/// `<out>/manifest.csv`. Returns the manifest path.
std::string write_synthetic_dataset(const RegimeSpec& regime, int height, int width,
                                    const std::string& out_dir);

}  // namespace metakey::harness
