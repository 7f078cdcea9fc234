#include "metakey/harness/evaluate.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "metakey/baseline/baseline.hpp"
#include "metakey/common/seed.hpp"
#include "metakey/metacore/adapt.hpp"
#include "metakey/taskdata/sampler.hpp"

namespace metakey::harness {

using json = nlohmann::ordered_json;

std::string_view to_string(ArmKind a) {
  switch (a) {
    case ArmKind::no_finetune:
      return "no_finetune";
    case ArmKind::baseline_ft:
      return "baseline_ft";
    case ArmKind::meta_adapt:
      return "meta_adapt";
  }
  return "no_finetune";
}

ArmKind parse_arm(std::string_view text) {
  if (text == "no_finetune") return ArmKind::no_finetune;
  if (text == "baseline_ft") return ArmKind::baseline_ft;
  if (text == "meta_adapt") return ArmKind::meta_adapt;
  throw std::invalid_argument("unknown arm '" + std::string(text) +
                              "' (expected no_finetune, baseline_ft or meta_adapt)");
}

const SeasonResult* EvalReport::find(taskdata::Season s) const {
  for (const auto& r : seasons) {
    if (r.season == s) return &r;
  }
  return nullptr;
}

double population_std(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  double mean = 0.0;
  for (double v : values) mean += v;
  mean /= static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return std::sqrt(ss / static_cast<double>(values.size()));
}

std::string arm_label(const Arm& arm, std::string_view mode) {
  auto meta_name = [&] {
    if (mode == "maml") return std::string("MAML");
    if (mode == "anil_pp") return std::string("ANIL++");
    return std::string("MAML++");
  };
  switch (arm.kind) {
    case ArmKind::meta_adapt:
      return meta_name();
    case ArmKind::no_finetune:
      return mode == "baseline" ? "Non-MAML w/o finetune" : meta_name() + " w/o adaptation";
    case ArmKind::baseline_ft: {
      char buf[64];
      std::snprintf(buf, sizeof buf, "Non-MAML finetune lr=%g", arm.lr);
      return buf;
    }
  }
  return "?";
}

namespace {

struct DayScore {
  double loss_sum = 0.0;
  std::size_t images = 0;
};

DayScore score(const metacore::Learner& learner, const kpnet::ModelWeights& weights,
               const std::vector<taskdata::Sample>& samples, at::ScalarType dtype) {
  at::NoGradGuard no_grad;
  DayScore out;
  constexpr std::size_t kChunk = 64;
  for (std::size_t start = 0; start < samples.size(); start += kChunk) {
    const std::size_t end = std::min(samples.size(), start + kChunk);
    std::vector<taskdata::Sample> chunk(samples.begin() + static_cast<std::ptrdiff_t>(start),
                                        samples.begin() + static_cast<std::ptrdiff_t>(end));
    kpnet::BnContext ctx;
    ctx.mode = kpnet::BnMode::eval_frozen;
    const at::Tensor per =
        learner.report_loss_per_sample(weights, metacore::make_batch(chunk, dtype), ctx);
    // Fixed left-to-right accumulation keeps the sum independent of threading.
    const at::Tensor d = per.to(at::kDouble).contiguous();
    const double* p = d.data_ptr<double>();
    for (std::int64_t i = 0; i < d.numel(); ++i) out.loss_sum += p[i];
  }
  out.images = samples.size();
  return out;
}

}  // namespace

EvalReport evaluate(const Checkpoint& checkpoint, const taskdata::Split& test,
                    const EvalOptions& options) {
  const Arm& arm = options.arm;
  if (options.k <= 0) throw std::invalid_argument("k must be positive");
  if (options.runs <= 0) throw std::invalid_argument("runs must be positive");
  if (arm.kind == ArmKind::meta_adapt && checkpoint.kind != CheckpointKind::meta) {
    throw std::invalid_argument(
        "meta_adapt needs a meta checkpoint; this baseline checkpoint has no learned inner rates");
  }
  if (arm.kind == ArmKind::baseline_ft && checkpoint.kind != CheckpointKind::baseline) {
    throw std::invalid_argument(
        "baseline_ft needs a baseline checkpoint; finetuning this meta checkpoint would drop its "
        "learned rates and per-step statistics");
  }
  if (arm.kind == ArmKind::baseline_ft && !(arm.lr >= 0.0 && std::isfinite(arm.lr))) {
    throw std::invalid_argument("finetune lr must be finite and >= 0");
  }

  const metacore::KeypointLearner learner(checkpoint.model);
  const kpnet::ModelWeights& base = checkpoint.weights();
  const auto dtype = base.layers.front().arrays.front().value.scalar_type();
  const std::int64_t meta_steps = checkpoint.meta ? checkpoint.meta->config.inner_steps : 0;
  const std::int64_t ft_steps =
      arm.steps >= 0 ? arm.steps : checkpoint.baseline_config.finetune_steps;

  // Weights used when nothing is adapted; a meta model with inner steps is
  // normalised with the statistics of its first step.
  kpnet::ModelWeights plain = base.detached();
  if (checkpoint.meta && meta_steps > 0) {
    plain.running = checkpoint.meta->bn.set(checkpoint.meta->config.bn_set_for_step(0));
  }
  const bool identity = arm.kind == ArmKind::no_finetune ||
                        (arm.kind == ArmKind::meta_adapt && meta_steps == 0) ||
                        (arm.kind == ArmKind::baseline_ft && ft_steps == 0);

  EvalReport report;
  report.train_split = options.train_split;
  report.mode = checkpoint.mode;
  report.model = arm_label(arm, checkpoint.mode);
  report.arm = arm;
  if (arm.kind == ArmKind::baseline_ft) report.arm.steps = ft_steps;
  if (arm.kind == ArmKind::meta_adapt) report.arm.steps = meta_steps;
  report.k = options.k;
  report.runs = identity ? 1 : options.runs;
  report.weighting = options.weighting;
  report.checkpoint_index = checkpoint.index;
  report.fingerprint = checkpoint.fingerprint;
  if (!identity) {
    for (std::int64_t r = 0; r < options.runs; ++r) {
      report.run_seeds.push_back(mix_seed({options.seed, static_cast<std::uint64_t>(r)}));
    }
  }

  const auto k = static_cast<std::size_t>(options.k);
  for (auto season : taskdata::kAllSeasons) {
    std::vector<const taskdata::Task*> days;
    for (const auto& t : test.tasks()) {
      if (t.season != season) continue;
      if (t.samples.size() <= k) {
        if (options.warn) {
          options.warn("test day '" + t.day_id + "' has " + std::to_string(t.samples.size()) +
                       " images (<= k = " + std::to_string(k) + "); excluded");
        }
        continue;
      }
      days.push_back(&t);
    }
    if (days.empty()) continue;

    SeasonResult result;
    result.season = season;
    result.days = static_cast<std::int64_t>(days.size());
    for (std::int64_t r = 0; r < report.runs; ++r) {
      double weighted = 0.0;
      double day_mean = 0.0;
      std::size_t images = 0;
      for (const auto* day : days) {
        DayScore s;
        if (identity) {
          s = score(learner, plain, day->samples, dtype);
        } else {
          Rng rng = make_rng({report.run_seeds[static_cast<std::size_t>(r)], fnv1a64(day->day_id)});
          const auto picked = taskdata::draw_without_replacement(day->samples.size(), k, rng);
          std::vector<bool> taken(day->samples.size(), false);
          std::vector<taskdata::Sample> support;
          for (auto i : picked) {
            taken[i] = true;
            support.push_back(day->samples[i]);
          }
          std::vector<taskdata::Sample> scored;
          for (std::size_t i = 0; i < day->samples.size(); ++i) {
            if (!taken[i]) scored.push_back(day->samples[i]);
          }
          const auto batch = metacore::make_batch(support, dtype);
          if (arm.kind == ArmKind::meta_adapt) {
            const auto adapted =
                metacore::test_time_adapt(learner, *checkpoint.meta, batch, options.warn);
            s = score(learner, adapted, scored, dtype);
          } else {
            auto ft = baseline::finetune_baseline(learner, base, batch, arm.lr, ft_steps);
            if (ft.diverged) ++report.diverged;
            s = score(learner, ft.weights, scored, dtype);
          }
        }
        weighted += s.loss_sum;
        day_mean += s.loss_sum / static_cast<double>(s.images);
        images += s.images;
      }
      const double loss = options.weighting == SeasonWeighting::image
                              ? weighted / static_cast<double>(images)
                              : day_mean / static_cast<double>(days.size());
      result.per_run.push_back(loss);
      result.images = static_cast<std::int64_t>(images);
    }
    double mean = 0.0;
    for (double v : result.per_run) mean += v;
    result.mean = mean / static_cast<double>(result.per_run.size());
    result.std = population_std(result.per_run);
    report.seasons.push_back(std::move(result));
  }
  return report;
}

json report_to_json(const EvalReport& r) {
  json j;
  j["train_split"] = r.train_split;
  j["model"] = r.model;
  j["mode"] = r.mode;
  j["arm"] = {{"kind", to_string(r.arm.kind)}, {"lr", r.arm.lr}, {"steps", r.arm.steps}};
  j["k"] = r.k;
  j["runs"] = r.runs;
  j["run_seeds"] = r.run_seeds;
  j["weighting"] = to_string(r.weighting);
  j["checkpoint_index"] = r.checkpoint_index;
  j["fingerprint"] = r.fingerprint;
  j["diverged"] = r.diverged;
  json seasons = json::array();
  for (const auto& s : r.seasons) {
    seasons.push_back({{"season", taskdata::to_string(s.season)},
                       {"mean", s.mean},
                       {"std", s.std},
                       {"per_run", s.per_run},
                       {"days", s.days},
                       {"images", s.images}});
  }
  j["seasons"] = seasons;
  return j;
}

EvalReport report_from_json(const json& j) {
  EvalReport r;
  r.train_split = j.at("train_split");
  r.model = j.at("model");
  r.mode = j.at("mode");
  r.arm.kind = parse_arm(j.at("arm").at("kind").get<std::string>());
  r.arm.lr = j.at("arm").at("lr");
  r.arm.steps = j.at("arm").at("steps");
  r.k = j.at("k");
  r.runs = j.at("runs");
  r.run_seeds = j.at("run_seeds").get<std::vector<std::uint64_t>>();
  r.weighting = parse_season_weighting(j.at("weighting").get<std::string>());
  r.checkpoint_index = j.at("checkpoint_index");
  r.fingerprint = j.at("fingerprint");
  r.diverged = j.at("diverged");
  for (const auto& s : j.at("seasons")) {
    SeasonResult sr;
    sr.season = taskdata::parse_season(s.at("season").get<std::string>());
    sr.mean = s.at("mean");
    sr.std = s.at("std");
    sr.per_run = s.at("per_run").get<std::vector<double>>();
    sr.days = s.at("days");
    sr.images = s.at("images");
    r.seasons.push_back(std::move(sr));
  }
  return r;
}

ReportFormat parse_report_format(std::string_view text) {
  if (text == "csv") return ReportFormat::csv;
  if (text == "markdown" || text == "md") return ReportFormat::markdown;
  throw std::invalid_argument("unknown report format '" + std::string(text) +
                              "' (expected csv or markdown)");
}

namespace {

std::string full(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

std::string cell(const EvalReport& r, taskdata::Season s) {
  const SeasonResult* res = r.find(s);
  if (res == nullptr) return "-";
  char buf[64];
  if (r.arm.kind == ArmKind::no_finetune) {
    std::snprintf(buf, sizeof buf, "%.1f", res->mean);
  } else {
    std::snprintf(buf, sizeof buf, "%.1f±%.1f", res->mean, res->std);
  }
  return buf;
}

}  // namespace

std::string emit_report(const std::vector<EvalReport>& reports, ReportFormat format) {
  std::vector<std::string> groups;
  for (const auto& r : reports) {
    if (std::find(groups.begin(), groups.end(), r.train_split) == groups.end()) {
      groups.push_back(r.train_split);
    }
  }
  std::ostringstream out;
  if (format == ReportFormat::markdown) {
    out << "| Train Split | Model | Early Test Loss | Late Test Loss | Very-Late Test Loss |\n";
    out << "|---|---|---|---|---|\n";
    for (const auto& g : groups) {
      bool first = true;
      for (const auto& r : reports) {
        if (r.train_split != g) continue;
        out << "| " << (first ? g : "") << " | " << r.model;
        for (auto s : taskdata::kAllSeasons) out << " | " << cell(r, s);
        out << " |\n";
        first = false;
      }
    }
  } else {
    out << "train_split,model,mode,arm,lr,steps,k,runs,weighting";
    for (auto s : taskdata::kAllSeasons) {
      out << ',' << taskdata::to_string(s) << "_mean," << taskdata::to_string(s) << "_std";
    }
    out << '\n';
    for (const auto& g : groups) {
      for (const auto& r : reports) {
        if (r.train_split != g) continue;
        out << csv_field(r.train_split) << ',' << csv_field(r.model) << ',' << r.mode << ','
            << to_string(r.arm.kind) << ',' << (r.arm.kind == ArmKind::baseline_ft ? full(r.arm.lr) : "")
            << ',' << (r.arm.kind == ArmKind::no_finetune ? "" : std::to_string(r.arm.steps)) << ','
            << r.k << ',' << r.runs << ',' << to_string(r.weighting);
        for (auto s : taskdata::kAllSeasons) {
          const SeasonResult* res = r.find(s);
          if (res == nullptr) {
            out << ",,";
          } else {
            out << ',' << full(res->mean) << ',' << full(res->std);
          }
        }
        out << '\n';
      }
    }
  }
  return out.str();
}

}  // namespace metakey::harness
