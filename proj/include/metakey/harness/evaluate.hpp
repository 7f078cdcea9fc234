#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "metakey/harness/checkpoint.hpp"
#include "metakey/harness/experiment.hpp"
#include "metakey/taskdata/split.hpp"

namespace metakey::harness {

enum class ArmKind { no_finetune, baseline_ft, meta_adapt };
std::string_view to_string(ArmKind a);
ArmKind parse_arm(std::string_view text);

struct Arm {
  ArmKind kind = ArmKind::no_finetune;
  double lr = 0.0;          // baseline_ft
  std::int64_t steps = -1;  // baseline_ft; -1: the checkpoint's finetune_steps
};

struct SeasonResult {
  taskdata::Season season = taskdata::Season::early;
  double mean = 0.0;
  double std = 0.0;
  std::vector<double> per_run;
  std::int64_t days = 0;
  /// Images scored per run.
  std::int64_t images = 0;
};

struct EvalReport {
  std::string train_split;
  std::string model;  // row label
  std::string mode;
  Arm arm;
  std::int64_t k = 0;
  std::int64_t runs = 0;
  std::vector<std::uint64_t> run_seeds;
  SeasonWeighting weighting = SeasonWeighting::image;
  std::int64_t checkpoint_index = 0;
  std::string fingerprint;
  /// Adaptations whose finetune hit a non-finite loss and fell back to the
  /// last finite iterate.
  std::int64_t diverged = 0;
  std::vector<SeasonResult> seasons;  // early, late, very_late order; absent seasons omitted

  const SeasonResult* find(taskdata::Season s) const;
};

struct EvalOptions {
  Arm arm;
  std::int64_t k = 5;
  std::int64_t runs = 3;
  std::uint64_t seed = 0;
  SeasonWeighting weighting = SeasonWeighting::image;
  std::string train_split = "train";
  std::function<void(const std::string&)> warn;
};

/// Row label in the report table, e.g. "MAML++" or "Non-MAML finetune lr=0.1".
std::string arm_label(const Arm& arm, std::string_view mode);

/// Per-season test losses of one arm. Support images are drawn per day and
/// per run and are not scored. no_finetune (and any adaptation with zero
/// steps) is a single deterministic pass over every image of each day.
EvalReport evaluate(const Checkpoint& checkpoint, const taskdata::Split& test,
                    const EvalOptions& options);

nlohmann::ordered_json report_to_json(const EvalReport& report);
EvalReport report_from_json(const nlohmann::ordered_json& j);

enum class ReportFormat { csv, markdown };
ReportFormat parse_report_format(std::string_view text);

/// Rows grouped under their train split in first-appearance order.
std::string emit_report(const std::vector<EvalReport>& reports, ReportFormat format);

/// Population standard deviation (divides by n).
double population_std(const std::vector<double>& values);

}  // namespace metakey::harness
