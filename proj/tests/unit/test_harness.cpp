#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest_torch.hpp"
#include "metakey/harness/checkpoint.hpp"
#include "metakey/harness/evaluate.hpp"
#include "metakey/harness/experiment.hpp"
#include "metakey/harness/ini.hpp"
#include "metakey/harness/training.hpp"
#include "metakey/kpnet/loss.hpp"

using namespace metakey;
using namespace metakey::harness;
namespace fs = std::filesystem;

namespace {

fs::path fresh_dir(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("metakey-harness-" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string tiny_config_text(const fs::path& out, std::int64_t episodes, std::int64_t interval) {
  std::ostringstream s;
  s << "[experiment]\nmode = maml_pp\nseed = 3\noutput = " << out.string() << "\neval_runs = 2\n"
    << "[data]\nsource = synthetic\nheight = 16\nwidth = 16\n"
    << "[regime early]\npreset = early\ndays = 4\nimages_per_day = 20\nseed = 5\n"
    << "[regime late]\npreset = late\ndays = 1\nimages_per_day = 12\nseed = 6\n"
    << "[split train]\ndays = early-d00, early-d01\ncomposition = early:2/40\n"
    << "[split val]\ndays = early-d02\n"
    << "[split test]\ndays = early-d03, late-d00\n"
    << "[model]\nencoder_widths = 4, 4\ndecoder_stages = 1\ndecoder_width = 4\nhead_channels = 2\n"
    << "[meta]\nepisodes = " << episodes << "\nvalidation_interval = " << interval << "\n"
    << "[baseline]\nepochs = 2\nbatch = 8\n";
  return s.str();
}

ExperimentConfig tiny_config(const fs::path& out, std::int64_t episodes = 200,
                             std::int64_t interval = 50) {
  return parse_experiment(IniDocument::parse(tiny_config_text(out, episodes, interval), "tiny.ini"),
                          "tiny.ini");
}

SeriesEntry entry(std::int64_t index, double loss) {
  return {"ckpt-" + std::to_string(index), index, loss, {"early"}};
}

EvalReport fake_report(const std::string& split, const std::string& model, ArmKind kind,
                       std::vector<std::pair<double, double>> seasons) {
  EvalReport r;
  r.train_split = split;
  r.model = model;
  r.mode = "maml_pp";
  r.arm.kind = kind;
  r.arm.lr = kind == ArmKind::baseline_ft ? 0.1 : 0.0;
  r.arm.steps = 3;
  r.k = 5;
  r.runs = 3;
  for (std::size_t i = 0; i < seasons.size(); ++i) {
    SeasonResult s;
    s.season = taskdata::kAllSeasons[i];
    s.mean = seasons[i].first;
    s.std = seasons[i].second;
    r.seasons.push_back(s);
  }
  return r;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

TEST_CASE("ini parsing") {
  const auto doc = IniDocument::parse(
      "top = 1\n# comment\n[split   train]\ndays = a, b  # trailing\n\n[model]\nx=2\n", "t.ini");
  REQUIRE(doc.sections.size() == 3);
  CHECK(doc.find("")->find("top")->value == "1");
  const auto* train = doc.find("split train");
  REQUIRE(train != nullptr);
  CHECK(train->find("days")->value == "a, b");
  CHECK(train->find("days")->line == 4);
  CHECK(doc.with_prefix("split").size() == 1);
  CHECK_THROWS_AS(IniDocument::parse("[a]\nx = 1\nx = 2\n"), ConfigError);
  CHECK_THROWS_AS(IniDocument::parse("[a]\n[a]\n"), ConfigError);
  CHECK_THROWS_AS(IniDocument::parse("[a\n"), ConfigError);
  CHECK_THROWS_AS(IniDocument::parse("[a]\njunk\n"), ConfigError);
}

TEST_CASE("section reader types and leftovers") {
  const auto doc = IniDocument::parse(
      "[s]\nn = 12\nf = 0.5\nb = true\nl = x, {1, 2}, y\nbad = 1.5\nextra = 1\n", "r.ini");
  SectionReader r(doc.find("s"), "r.ini");
  CHECK(r.integer("n") == 12);
  CHECK(r.number("f", 0.0) == 0.5);
  CHECK(r.boolean("b", false));
  CHECK(r.list("l") == std::vector<std::string>{"x", "{1, 2}", "y"});
  CHECK(r.integer("missing", 7) == 7);
  try {
    r.integer("bad");
    FAIL("expected an error");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("r.ini:6") != std::string::npos);
  }
  CHECK_THROWS_AS(r.finish(), ConfigError);
}

TEST_CASE("experiment config parsing and validation") {
  const auto cfg = tiny_config("out");
  CHECK(cfg.mode == TrainMode::maml_pp);
  CHECK(cfg.model.height == 16);
  CHECK(cfg.model.encoder_widths == std::vector<int>{4, 4});
  CHECK(cfg.meta.episodes == 200);
  CHECK(cfg.meta_validation_interval == 50);
  CHECK(cfg.baseline.finetune_steps == cfg.meta.inner_steps);
  CHECK(cfg.regimes.size() == 2);
  CHECK(cfg.splits.at("test").spec.day_ids == std::vector<std::string>{"early-d03", "late-d00"});
  CHECK_NOTHROW(cfg.validate());

  auto broken = [&](const std::string& from, const std::string& to) {
    std::string text = tiny_config_text("out", 200, 50);
    const auto at = text.find(from);
    REQUIRE(at != std::string::npos);
    text.replace(at, from.size(), to);
    return parse_experiment(IniDocument::parse(text, "b.ini"), "b.ini");
  };
  CHECK_THROWS_AS(broken("days = early-d02", "days = early-d01").validate(), ConfigError);
  CHECK_THROWS_AS(broken("days = early-d02", "days = early-d09").validate(), ConfigError);
  CHECK_THROWS_AS(broken("[split val]\ndays = early-d02\n", "").validate(), ConfigError);
  CHECK_THROWS_AS(broken("mode = maml_pp", "mode = reptile"), ConfigError);
  CHECK_THROWS_AS(broken("decoder_width = 4", "decoder_widht = 4"), ConfigError);
  CHECK_THROWS_AS(broken("[model]", "[modle]"), ConfigError);
  CHECK_THROWS_AS(broken("episodes = 200", "episodes = 0").validate(), ConfigError);
}

TEST_CASE("fingerprint tracks training settings only") {
  auto a = tiny_config("out");
  auto b = tiny_config("elsewhere");
  CHECK(a.fingerprint() == b.fingerprint());
  CHECK(a.fingerprint().size() == 16);
  b.meta.outer_rate = 0.002;
  CHECK(a.fingerprint() != b.fingerprint());
  b = tiny_config("out");
  b.eval_runs = 5;
  CHECK(a.fingerprint() == b.fingerprint());
  b.seed = 4;
  CHECK(a.fingerprint() != b.fingerprint());
}

TEST_CASE("checkpoint selection") {
  const std::set<taskdata::Season> early{taskdata::Season::early};
  CHECK(select_checkpoint({entry(0, 3.0), entry(1, 2.5), entry(2, 2.7)}, early) == 1);
  CHECK(select_checkpoint({entry(0, 2.5), entry(1, 2.5)}, early) == 0);
  CHECK_THROWS_AS(select_checkpoint({}, early), std::invalid_argument);
  auto off = entry(1, 0.1);
  off.val_seasons = {"early", "late"};
  CHECK_THROWS_AS(select_checkpoint({entry(0, 3.0), off}, early), std::invalid_argument);
}

TEST_CASE("report layout") {
  const auto maml = fake_report("Early", "MAML++", ArmKind::meta_adapt, {{2.8, 0.0}, {28.8, 1.1}, {43.2, 1.9}});
  const auto plain = fake_report("Early", "Non-MAML w/o finetune", ArmKind::no_finetune,
                                 {{4.8, 0.0}, {30.0, 0.0}, {50.04, 0.0}});
  const auto other = fake_report("All-Season", "ANIL++", ArmKind::meta_adapt, {{1.25, 0.04}});
  const std::string md = emit_report({maml, other, plain}, ReportFormat::markdown);
  CHECK(md ==
        "| Train Split | Model | Early Test Loss | Late Test Loss | Very-Late Test Loss |\n"
        "|---|---|---|---|---|\n"
        "| Early | MAML++ | 2.8±0.0 | 28.8±1.1 | 43.2±1.9 |\n"
        "|  | Non-MAML w/o finetune | 4.8 | 30.0 | 50.0 |\n"
        "| All-Season | ANIL++ | 1.2±0.0 | - | - |\n");
  CHECK(emit_report({maml, other, plain}, ReportFormat::markdown) == md);
}

TEST_CASE("csv report round trip") {
  const auto a = fake_report("Early", "Non-MAML finetune lr=0.1", ArmKind::baseline_ft,
                             {{1.0 / 3.0, 0.1}, {28.812345678901234, 1.1}, {43.2, 1.9}});
  const auto b = fake_report("Split, quoted", "MAML++", ArmKind::meta_adapt, {{2.0, 0.5}});
  std::istringstream in(emit_report({a, b}, ReportFormat::csv));
  std::string line;
  std::getline(in, line);
  const auto header = split_csv_line(line);
  CHECK(header.size() == 15);
  CHECK(header[9] == "early_mean");
  std::vector<std::vector<std::string>> rows;
  while (std::getline(in, line)) rows.push_back(split_csv_line(line));
  REQUIRE(rows.size() == 2);
  CHECK(rows[0][0] == "Early");
  CHECK(rows[0][1] == "Non-MAML finetune lr=0.1");
  CHECK(std::stod(rows[0][4]) == 0.1);
  for (std::size_t s = 0; s < 3; ++s) {
    CHECK(std::stod(rows[0][9 + 2 * s]) == a.seasons[s].mean);
    CHECK(std::stod(rows[0][10 + 2 * s]) == a.seasons[s].std);
  }
  CHECK(rows[1][0] == "Split, quoted");
  CHECK(rows[1][11].empty());

  const auto back = report_from_json(report_to_json(a));
  CHECK(emit_report({back}, ReportFormat::csv) == emit_report({a}, ReportFormat::csv));
}

TEST_CASE("population standard deviation") {
  CHECK(population_std({5.0}) == 0.0);
  CHECK(population_std({1.0, 3.0}) == 1.0);
  CHECK(population_std({2.0, 4.0, 4.0, 4.0, 5.0, 5.0, 7.0, 9.0}) == doctest::Approx(2.0).epsilon(1e-15));
}

TEST_CASE("training, checkpoints and evaluation on a tiny experiment") {
  const auto dir = fresh_dir("train");
  auto cfg = tiny_config(dir);
  const auto data = build_data(cfg);
  CHECK(data.train.image_count() == 40);

  const auto series = run_training(cfg, data);
  REQUIRE(series.size() == 4);
  CHECK(series[0].index == 50);
  CHECK(series[3].index == 200);
  for (const auto& e : series) CHECK(e.val_seasons == std::vector<std::string>{"early"});
  CHECK(list_series(series_dir(cfg)).size() == 4);
  CHECK_THROWS_AS(run_training(cfg, data), ConfigError);  // would overwrite

  const Checkpoint ckpt = load_checkpoint(series.back().path);
  CHECK(ckpt.kind == CheckpointKind::meta);
  CHECK(ckpt.index == 200);
  CHECK(ckpt.fingerprint == cfg.fingerprint());
  CHECK(ckpt.meta->rates.rates.sizes().vec() ==
        std::vector<std::int64_t>{static_cast<std::int64_t>(ckpt.meta->weights.layers.size()), 3});

  SUBCASE("container round trip and corruption") {
    const std::string bytes = encode_checkpoint(ckpt);
    CHECK(decode_checkpoint(bytes).identical(ckpt));
    CHECK(encode_checkpoint(decode_checkpoint(bytes)) == bytes);
    for (std::size_t cut : {std::size_t{0}, std::size_t{7}, bytes.size() / 2, bytes.size() - 1}) {
      CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, cut)), CheckpointError);
    }
    std::string flipped = bytes;
    flipped[bytes.size() / 2] ^= 0x01;
    CHECK_THROWS_AS(decode_checkpoint(flipped), CheckpointError);
    std::string version = bytes;
    version[8] = 2;  // u32 version follows the 8-byte magic
    try {
      decode_checkpoint(version);
      FAIL("expected a version error");
    } catch (const CheckpointError& e) {
      CHECK(std::string(e.what()).find("version") != std::string::npos);
    }
    CHECK_THROWS_AS(load_checkpoint(dir / "missing.mkc"), CheckpointError);
  }

  SUBCASE("mode guard") {
    EvalOptions opt;
    opt.arm.kind = ArmKind::baseline_ft;
    opt.arm.lr = 0.1;
    CHECK_THROWS_AS(evaluate(ckpt, data.test, opt), std::invalid_argument);
  }

  SUBCASE("fixed seeds give identical reports") {
    EvalOptions opt;
    opt.arm.kind = ArmKind::meta_adapt;
    opt.runs = 2;
    opt.seed = 9;
    const auto a = report_to_json(evaluate(ckpt, data.test, opt)).dump();
    const auto b = report_to_json(evaluate(ckpt, data.test, opt)).dump();
    CHECK(a == b);
    const auto r = evaluate(ckpt, data.test, opt);
    CHECK(r.seasons.size() == 2);
    CHECK(r.seasons[0].images == 15);  // 20 images, 5 drawn as support
    CHECK(r.seasons[0].per_run.size() == 2);
    opt.runs = 1;
    const auto single = evaluate(ckpt, data.test, opt);
    for (const auto& s : single.seasons) CHECK(s.std == 0.0);
  }

  SUBCASE("season loss is the image-weighted mean over days") {
    // Two early days of different sizes in one season.
    const auto dir2 = fresh_dir("weights");
    auto p = taskdata::synth_preset("early");
    p.height = p.width = 16;
    const taskdata::Split test("t", {taskdata::synth_generate(p, 7, "x", 1, 2),
                                     taskdata::synth_generate(p, 13, "y", 3, 4)});
    EvalOptions opt;
    const auto image = evaluate(ckpt, test, opt);
    opt.weighting = SeasonWeighting::day;
    const auto day = evaluate(ckpt, test, opt);

    const metacore::KeypointLearner learner(ckpt.model);
    kpnet::ModelWeights w = ckpt.meta->weights;
    w.running = ckpt.meta->bn.set(0);
    double flat = 0.0;
    double per_day[2] = {0.0, 0.0};
    for (std::size_t d = 0; d < 2; ++d) {
      const auto& t = test.tasks()[d];
      const auto b = metacore::make_batch(t.samples);
      const auto per = learner.report_loss_per_sample(w, b, {}).to(at::kDouble);
      for (std::int64_t i = 0; i < per.size(0); ++i) {
        flat += per[i].item<double>();
        per_day[d] += per[i].item<double>();
      }
      per_day[d] /= static_cast<double>(t.size());
    }
    CHECK(image.seasons[0].mean == doctest::Approx(flat / 20.0).epsilon(1e-6));
    CHECK(day.seasons[0].mean == doctest::Approx((per_day[0] + per_day[1]) / 2.0).epsilon(1e-6));
    CHECK(image.runs == 1);
    CHECK(image.seasons[0].images == 20);
  }

  SUBCASE("zero inner steps adapt to the unfinetuned model") {
    Checkpoint zero = ckpt;
    zero.meta->config.inner_steps = 0;
    zero.meta->rates.rates = zero.meta->rates.rates.narrow(1, 0, 0);
    zero.meta->bn.sets.clear();
    zero.meta->weights.running = ckpt.meta->bn.set(0).clone();
    EvalOptions a;
    a.arm.kind = ArmKind::meta_adapt;
    EvalOptions b;
    const auto ra = evaluate(zero, data.test, a);
    const auto rb = evaluate(zero, data.test, b);
    REQUIRE(ra.seasons.size() == rb.seasons.size());
    for (std::size_t s = 0; s < ra.seasons.size(); ++s) CHECK(ra.seasons[s].mean == rb.seasons[s].mean);
  }
}

TEST_CASE("kill and resume reproduce the uninterrupted run bitwise") {
  setenv("METAKEY_DETERMINISTIC", "1", 1);
  CHECK(apply_determinism_from_env());
  const auto dir_a = fresh_dir("straight");
  const auto dir_b = fresh_dir("resumed");
  const auto cfg_a = tiny_config(dir_a, 40, 10);
  const auto cfg_b = tiny_config(dir_b, 40, 10);
  const auto data = build_data(cfg_a);
  const auto straight = run_training(cfg_a, data);

  TrainOptions stop;
  stop.stop_after = 25;  // episodes 21..25 are lost with the process
  const auto partial = run_training(cfg_b, data, stop);
  CHECK(partial.back().index == 20);
  TrainOptions resume;
  resume.resume = true;
  const auto resumed = run_training(cfg_b, data, resume);
  REQUIRE(resumed.size() == straight.size());
  for (std::size_t i = 0; i < straight.size(); ++i) {
    const auto a = load_checkpoint(straight[i].path);
    const auto b = load_checkpoint(resumed[i].path);
    CHECK(a.meta->identical(*b.meta));
    CHECK(a.val_loss == b.val_loss);
  }

  auto other = tiny_config(dir_b, 40, 10);
  other.meta.outer_rate = 0.002;
  CHECK_THROWS_AS(run_training(other, data, resume), ConfigError);
}

TEST_CASE("baseline mode trains from the same config") {
  const auto dir = fresh_dir("baseline");
  auto cfg = tiny_config(dir);
  cfg.set_mode(TrainMode::baseline);
  const auto data = build_data(cfg);
  const auto series = run_training(cfg, data);
  REQUIRE(series.size() == 3);  // epochs 0, 1, 2
  CHECK(series.front().index == 0);
  const auto ckpt = load_checkpoint(series.back().path);
  CHECK(ckpt.kind == CheckpointKind::baseline);
  EvalOptions opt;
  opt.arm.kind = ArmKind::meta_adapt;
  CHECK_THROWS_AS(evaluate(ckpt, data.test, opt), std::invalid_argument);
  opt.arm.kind = ArmKind::baseline_ft;
  opt.arm.lr = 0.01;
  const auto r = evaluate(ckpt, data.test, opt);
  CHECK(r.arm.steps == 3);
  CHECK(r.model == "Non-MAML finetune lr=0.01");

  auto anil = tiny_config(fresh_dir("anil"), 20, 10);
  anil.set_mode(TrainMode::anil_pp);
  CHECK(run_training(anil, data).size() == 2);
}
