#include "metakey/harness/experiment.hpp"

#include <cstdio>
#include <filesystem>
#include <set>

#include <json.hpp>

#include "metakey/common/seed.hpp"
#include "metakey/taskdata/manifest.hpp"

namespace metakey::harness {

std::string_view to_string(TrainMode m) {
  switch (m) {
    case TrainMode::maml:
      return "maml";
    case TrainMode::maml_pp:
      return "maml_pp";
    case TrainMode::anil_pp:
      return "anil_pp";
    case TrainMode::baseline:
      return "baseline";
  }
  return "maml_pp";
}

TrainMode parse_train_mode(std::string_view text) {
  if (text == "maml") return TrainMode::maml;
  if (text == "maml_pp" || text == "maml++") return TrainMode::maml_pp;
  if (text == "anil_pp" || text == "anil++") return TrainMode::anil_pp;
  if (text == "baseline") return TrainMode::baseline;
  throw ConfigError("unknown mode '" + std::string(text) +
                    "' (expected maml, maml_pp, anil_pp or baseline)");
}

bool is_meta(TrainMode m) { return m != TrainMode::baseline; }

metacore::Mode meta_mode(TrainMode m) {
  switch (m) {
    case TrainMode::maml:
      return metacore::Mode::maml;
    case TrainMode::anil_pp:
      return metacore::Mode::anil_pp;
    default:
      return metacore::Mode::maml_pp;
  }
}

std::string_view to_string(SeasonWeighting w) { return w == SeasonWeighting::image ? "image" : "day"; }

SeasonWeighting parse_season_weighting(std::string_view text) {
  if (text == "image") return SeasonWeighting::image;
  if (text == "day") return SeasonWeighting::day;
  throw ConfigError("unknown season weighting '" + std::string(text) + "' (expected image or day)");
}

void ExperimentConfig::set_mode(TrainMode m) {
  mode = m;
  if (is_meta(m)) meta.mode = meta_mode(m);
}

std::int64_t ExperimentConfig::effective_interval() const {
  return is_meta(mode) ? meta_validation_interval : baseline_validation_interval;
}

namespace {

taskdata::Portion parse_portion(const std::string& text) {
  if (text == "train") return taskdata::Portion::train;
  if (text == "val") return taskdata::Portion::val;
  if (text == "test") return taskdata::Portion::test;
  throw ConfigError("unknown portion '" + text + "' (expected all, train, val or test)");
}

std::string portion_name(const std::optional<taskdata::Portion>& p) {
  if (!p) return "all";
  switch (*p) {
    case taskdata::Portion::train:
      return "train";
    case taskdata::Portion::val:
      return "val";
    case taskdata::Portion::test:
      return "test";
  }
  return "all";
}

std::string day_name(const RegimeSpec& r, std::int64_t i) {
  char buf[24];
  std::snprintf(buf, sizeof buf, "%02lld", static_cast<long long>(i));
  return r.day_prefix + buf;
}

template <typename Fn>
auto wrap(const std::string& what, Fn&& fn) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace

void ExperimentConfig::validate() const {
  wrap("[model]", [&] {
    model.validate();
    return 0;
  });
  if (model.height != image_height || model.width != image_width) {
    throw ConfigError("model input " + std::to_string(model.height) + "x" +
                      std::to_string(model.width) + " does not match the data size " +
                      std::to_string(image_height) + "x" + std::to_string(image_width));
  }
  if (is_meta(mode)) {
    wrap("[meta]", [&] {
      meta.validate();
      return 0;
    });
    if (meta.mode != meta_mode(mode)) throw ConfigError("meta mode does not match the experiment mode");
  } else {
    wrap("[baseline]", [&] {
      baseline.validate();
      return 0;
    });
  }
  if (eval_runs < 1) throw ConfigError("eval_runs must be >= 1");
  if (eval_k < 0) throw ConfigError("eval_k must be >= 0");
  if (meta_validation_interval < 1 || baseline_validation_interval < 1) {
    throw ConfigError("validation_interval must be >= 1");
  }
  if (!synthetic && (manifest_file.empty())) throw ConfigError("[data] manifest is required");
  if (synthetic && regimes.empty()) throw ConfigError("synthetic data needs at least one [regime ...]");

  for (const char* name : {"train", "val", "test"}) {
    if (!splits.contains(name)) throw ConfigError(std::string("missing [split ") + name + "]");
  }
  for (const auto& [name, split] : splits) {
    if (name != "train" && name != "val" && name != "test") {
      throw ConfigError("unknown split '" + name + "' (expected train, val or test)");
    }
    if (split.spec.day_ids.empty()) throw ConfigError("[split " + name + "] lists no days");
  }

  std::set<std::string> known;
  for (const auto& r : regimes) {
    if (r.days <= 0 || r.images_per_day <= 0) {
      throw ConfigError("[regime " + r.name + "] needs days and images_per_day > 0");
    }
    for (std::int64_t i = 0; i < r.days; ++i) {
      if (!known.insert(day_name(r, i)).second) {
        throw ConfigError("day id '" + day_name(r, i) + "' is produced by two regimes");
      }
    }
  }
  if (synthetic) {
    for (const auto& [name, split] : splits) {
      for (const auto& d : split.spec.day_ids) {
        if (!known.contains(d)) throw ConfigError("[split " + name + "] names unknown day '" + d + "'");
      }
    }
  }

  // Splits may share a day only through distinct within-day portions.
  const char* names[] = {"train", "val", "test"};
  for (int a = 0; a < 3; ++a) {
    for (int b = a + 1; b < 3; ++b) {
      const auto& sa = splits.at(names[a]);
      const auto& sb = splits.at(names[b]);
      const std::set<std::string> da(sa.spec.day_ids.begin(), sa.spec.day_ids.end());
      for (const auto& d : sb.spec.day_ids) {
        if (!da.contains(d)) continue;
        if (!sa.portion || !sb.portion || *sa.portion == *sb.portion) {
          throw ConfigError(std::string("splits ") + names[a] + " and " + names[b] + " share day '" +
                            d + "' without distinct within-day portions");
        }
      }
    }
  }
}

std::string ExperimentConfig::fingerprint() const {
  nlohmann::ordered_json j;
  j["mode"] = to_string(mode);
  j["seed"] = seed;
  j["validation_interval"] = effective_interval();
  j["val_seed"] = val_seed;
  auto& d = j["data"];
  d["synthetic"] = synthetic;
  d["height"] = image_height;
  d["width"] = image_width;
  d["manifest_root"] = manifest_root;
  d["manifest_file"] = manifest_file;
  d["partition_seed"] = partition_seed;
  for (const auto& r : regimes) {
    const auto& p = r.params;
    d["regimes"].push_back({{"name", r.name},
                            {"days", r.days},
                            {"images_per_day", r.images_per_day},
                            {"day_prefix", r.day_prefix},
                            {"seed", r.seed},
                            {"preset", p.name},
                            {"season", taskdata::to_string(p.season)},
                            {"canopy_overhang", p.canopy_overhang},
                            {"canopy_overhang_jitter", p.canopy_overhang_jitter},
                            {"canopy_occlusion", p.canopy_occlusion},
                            {"lighting_gain", p.lighting_gain},
                            {"lighting_jitter", p.lighting_jitter},
                            {"clutter_density", p.clutter_density},
                            {"pixel_noise", p.pixel_noise},
                            {"row_spacing", p.row_spacing},
                            {"yaw_jitter_deg", p.yaw_jitter_deg},
                            {"lateral_jitter", p.lateral_jitter},
                            {"horizon", p.horizon}});
  }
  for (const auto& [name, s] : splits) {
    j["splits"][name] = {{"days", s.spec.day_ids}, {"portion", portion_name(s.portion)}};
  }
  auto& m = j["model"];
  m["encoder_widths"] = model.encoder_widths;
  m["decoder_stages"] = model.decoder_stages;
  m["decoder_width"] = model.decoder_width;
  m["head"] = kpnet::to_string(model.head);
  m["head_channels"] = model.head_channels;
  if (is_meta(mode)) {
    j["meta"] = {{"episodes", meta.episodes},
                 {"meta_batch", meta.meta_batch},
                 {"k", meta.k},
                 {"q", meta.q},
                 {"inner_steps", meta.inner_steps},
                 {"inner_rate", meta.inner_rate_init},
                 {"outer_rate", meta.outer_rate},
                 {"outer_rate_floor", meta.outer_rate_floor},
                 {"msl_fraction", meta.msl_fraction},
                 {"first_order_fraction", meta.first_order_fraction},
                 {"bn_momentum", meta.bn_momentum}};
  } else {
    j["baseline"] = {{"epochs", baseline.epochs},
                     {"lr", baseline.lr},
                     {"batch", baseline.batch},
                     {"bn_momentum", baseline.bn_momentum}};
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(j.dump())));
  return buf;
}

ExperimentConfig parse_experiment(const IniDocument& doc, const std::string& origin) {
  ExperimentConfig cfg;
  cfg.origin = origin;
  static const std::set<std::string> plain{"", "experiment", "data", "model", "meta", "baseline"};
  for (const auto& s : doc.sections) {
    if (plain.contains(s.name) || s.name.starts_with("regime ") || s.name.starts_with("split ")) continue;
    throw ConfigError(origin + ":" + std::to_string(s.line) + ": unknown section [" + s.name + "]");
  }
  if (const auto* top = doc.find(""); top != nullptr && !top->entries.empty()) {
    throw ConfigError(origin + ":" + std::to_string(top->entries.front().line) +
                      ": key outside of any section");
  }

  SectionReader ex(doc.find("experiment"), origin);
  const TrainMode mode = parse_train_mode(ex.text("mode", "maml_pp"));
  cfg.seed = static_cast<std::uint64_t>(ex.integer("seed", 0));
  cfg.output_dir = ex.text("output", cfg.output_dir);
  cfg.train_label = ex.text("train_label", "");
  cfg.eval_runs = ex.integer("eval_runs", 3);
  cfg.eval_k = ex.integer("eval_k", 0);
  cfg.season_weighting = parse_season_weighting(ex.text("season_weighting", "image"));
  cfg.val_seed = static_cast<std::uint64_t>(ex.integer("val_seed", 0));
  ex.finish();

  SectionReader data(doc.find("data"), origin);
  const std::string source = data.text("source", "synthetic");
  if (source != "synthetic" && source != "manifest") {
    throw ConfigError(origin + ": [data] source must be synthetic or manifest");
  }
  cfg.synthetic = source == "synthetic";
  cfg.image_height = static_cast<int>(data.integer("height", 128));
  cfg.image_width = static_cast<int>(data.integer("width", 128));
  cfg.manifest_root = data.text("root", "");
  cfg.manifest_file = data.text("manifest", "");
  cfg.partition_seed = static_cast<std::uint64_t>(data.integer("partition_seed", 0));
  data.finish();

  for (const auto* sec : doc.with_prefix("regime")) {
    SectionReader r(sec, origin);
    RegimeSpec spec;
    spec.name = sec->name.substr(7);
    spec.params = wrap(origin + ": [" + sec->name + "]",
                       [&] { return taskdata::synth_preset(r.text("preset", spec.name)); });
    auto& p = spec.params;
    p.height = cfg.image_height;
    p.width = cfg.image_width;
    if (r.has("season")) p.season = taskdata::parse_season(r.text("season"));
    p.canopy_overhang = r.number("canopy_overhang", p.canopy_overhang);
    p.canopy_overhang_jitter = r.number("canopy_overhang_jitter", p.canopy_overhang_jitter);
    p.canopy_occlusion = r.number("canopy_occlusion", p.canopy_occlusion);
    p.lighting_gain = r.number("lighting_gain", p.lighting_gain);
    p.lighting_jitter = r.number("lighting_jitter", p.lighting_jitter);
    p.clutter_density = r.number("clutter_density", p.clutter_density);
    p.pixel_noise = r.number("pixel_noise", p.pixel_noise);
    p.row_spacing = r.number("row_spacing", p.row_spacing);
    p.yaw_jitter_deg = r.number("yaw_jitter_deg", p.yaw_jitter_deg);
    p.lateral_jitter = r.number("lateral_jitter", p.lateral_jitter);
    p.horizon = r.number("horizon", p.horizon);
    spec.days = r.integer("days");
    spec.images_per_day = r.integer("images_per_day");
    spec.day_prefix = r.text("day_prefix", spec.name + "-d");
    spec.seed = static_cast<std::uint64_t>(r.integer("seed", 0));
    r.finish();
    cfg.regimes.push_back(std::move(spec));
  }

  for (const auto* sec : doc.with_prefix("split")) {
    SectionReader r(sec, origin);
    SplitConfig split;
    split.spec.name = sec->name.substr(6);
    split.spec.day_ids = taskdata::expand_day_list(r.list("days"));
    const std::string portion = r.text("portion", "all");
    if (portion != "all") split.portion = parse_portion(portion);
    if (r.has("composition")) {
      const std::string text = r.text("composition");
      split.spec.declared = wrap(origin + ": [" + sec->name + "] composition",
                                 [&] { return taskdata::parse_composition(text); });
    }
    r.finish();
    cfg.splits[split.spec.name] = std::move(split);
  }

  SectionReader m(doc.find("model"), origin);
  cfg.model.height = static_cast<int>(m.integer("height", cfg.image_height));
  cfg.model.width = static_cast<int>(m.integer("width", cfg.image_width));
  cfg.model.encoder_widths = m.int_list("encoder_widths", cfg.model.encoder_widths);
  cfg.model.decoder_stages = static_cast<int>(m.integer("decoder_stages", cfg.model.decoder_stages));
  cfg.model.decoder_width = static_cast<int>(m.integer("decoder_width", cfg.model.decoder_width));
  cfg.model.head = wrap(origin + ": [model] head", [&] {
    return kpnet::parse_head_kind(m.text("head", std::string(kpnet::to_string(cfg.model.head))));
  });
  cfg.model.head_channels = static_cast<int>(m.integer("head_channels", cfg.model.head_channels));
  m.finish();

  SectionReader mt(doc.find("meta"), origin);
  auto& mc = cfg.meta;
  mc.episodes = mt.integer("episodes", mc.episodes);
  mc.meta_batch = mt.integer("meta_batch", mc.meta_batch);
  mc.k = mt.integer("k", mc.k);
  mc.q = mt.integer("q", mc.q);
  mc.inner_steps = mt.integer("inner_steps", mc.inner_steps);
  mc.inner_rate_init = mt.number("inner_rate", mc.inner_rate_init);
  mc.outer_rate = mt.number("outer_rate", mc.outer_rate);
  mc.outer_rate_floor = mt.number("outer_rate_floor", mc.outer_rate_floor);
  mc.msl_fraction = mt.number("msl_fraction", mc.msl_fraction);
  mc.first_order_fraction = mt.number("first_order_fraction", mc.first_order_fraction);
  mc.bn_momentum = mt.number("bn_momentum", mc.bn_momentum);
  cfg.meta_validation_interval = mt.integer("validation_interval", cfg.meta_validation_interval);
  mt.finish();

  SectionReader b(doc.find("baseline"), origin);
  auto& bc = cfg.baseline;
  bc.epochs = b.integer("epochs", bc.epochs);
  bc.lr = b.number("lr", bc.lr);
  bc.batch = b.integer("batch", bc.batch);
  bc.finetune_steps = b.integer("finetune_steps", mc.inner_steps);
  bc.bn_momentum = b.number("bn_momentum", bc.bn_momentum);
  cfg.baseline_validation_interval = b.integer("validation_interval", cfg.baseline_validation_interval);
  b.finish();

  cfg.set_mode(mode);
  if (cfg.train_label.empty()) cfg.train_label = "train";
  return cfg;
}

ExperimentConfig load_experiment(const std::string& path) {
  return parse_experiment(IniDocument::load(path), path);
}

std::vector<taskdata::Task> generate_regime(const RegimeSpec& regime, int height, int width) {
  taskdata::SynthParams p = regime.params;
  p.height = height;
  p.width = width;
  std::vector<taskdata::Task> out;
  for (std::int64_t i = 0; i < regime.days; ++i) {
    const auto day = static_cast<std::uint64_t>(i);
    out.push_back(taskdata::synth_generate(p, static_cast<std::size_t>(regime.images_per_day),
                                           day_name(regime, i), mix_seed({regime.seed, day, 1}),
                                           mix_seed({regime.seed, day, 2})));
  }
  return out;
}

ExperimentData build_data(const ExperimentConfig& config,
                          const std::function<void(const std::string&)>& warn) {
  config.validate();
  ExperimentData data;
  if (config.synthetic) {
    std::vector<taskdata::Task> tasks;
    for (const auto& r : config.regimes) {
      for (auto& t : generate_regime(r, config.image_height, config.image_width)) {
        tasks.push_back(std::move(t));
      }
    }
    data.collection = taskdata::TaskCollection(std::move(tasks));
  } else {
    data.collection = taskdata::load_manifest(config.manifest_root, config.manifest_file, warn);
    for (const auto& t : data.collection.tasks()) {
      for (const auto& s : t.samples) {
        if (s.image->height != config.image_height || s.image->width != config.image_width) {
          throw ConfigError("image '" + s.image_path + "' is " + std::to_string(s.image->height) +
                            "x" + std::to_string(s.image->width) + ", config expects " +
                            std::to_string(config.image_height) + "x" +
                            std::to_string(config.image_width));
        }
      }
    }
  }
  auto build = [&](const std::string& name) {
    const auto& sc = config.splits.at(name);
    taskdata::Split split = taskdata::make_split(data.collection, sc.spec);
    if (sc.portion) split = taskdata::split_portion(split, *sc.portion, config.partition_seed);
    return split;
  };
  data.train = build("train");
  data.val = build("val");
  data.test = build("test");
  return data;
}

std::string write_synthetic_dataset(const RegimeSpec& regime, int height, int width,
                                    const std::string& out_dir) {
  const taskdata::TaskCollection collection(generate_regime(regime, height, width));
  const auto manifest = std::filesystem::path(out_dir) / "manifest.csv";
  taskdata::write_manifest(collection, out_dir, manifest);
  return manifest.string();
}

}  // namespace metakey::harness
