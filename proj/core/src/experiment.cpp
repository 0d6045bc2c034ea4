#include "hcb/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <fstream>
#include <mutex>
#include <thread>
#include <unordered_map>

#include "hcb/dataset_io.hpp"
#include "hcb/defenses/fine_prune.hpp"
#include "hcb/defenses/mad.hpp"
#include "hcb/defenses/mm_bd.hpp"
#include "hcb/defenses/neural_cleanse.hpp"
#include "hcb/defenses/strip.hpp"
#include "hcb/digest.hpp"

namespace hcb {

namespace fs = std::filesystem;
using nlohmann::json;
using Clock = std::chrono::steady_clock;

// ---------------------------------------------------------------------------
// Config <-> JSON
// ---------------------------------------------------------------------------

namespace {

json innocuous_to_json(const InnocuousSpec& s) {
  return json{{"kind", innocuous_kind_name(s.kind)},
              {"prevalence", s.prevalence},
              {"tint_shift", s.tint_shift},
              {"seed", s.seed},
              {"rain",
               {{"min_streaks", s.rain.min_streaks},
                {"max_streaks", s.rain.max_streaks},
                {"angle_min_deg", s.rain.angle_min_deg},
                {"angle_max_deg", s.rain.angle_max_deg},
                {"streak_opacity", s.rain.streak_opacity},
                {"attenuation", s.rain.attenuation}}}};
}

InnocuousSpec innocuous_from_json(const json& j) {
  InnocuousSpec s;
  s.kind = innocuous_kind_from_name(j.value("kind", "invert"));
  s.prevalence = j.value("prevalence", 0.3);
  s.tint_shift = j.value("tint_shift", 0.25);
  s.seed = j.value("seed", uint64_t{0});
  if (j.contains("rain")) {
    const json& r = j.at("rain");
    s.rain.min_streaks = r.value("min_streaks", 20);
    s.rain.max_streaks = r.value("max_streaks", 40);
    s.rain.angle_min_deg = r.value("angle_min_deg", 70.0);
    s.rain.angle_max_deg = r.value("angle_max_deg", 110.0);
    s.rain.streak_opacity = r.value("streak_opacity", 0.4);
    s.rain.attenuation = r.value("attenuation", 0.85);
  }
  return s;
}

json trigger_to_json(const TriggerSpec& t) {
  return json{{"side", t.side},
              {"anchor", {t.anchor_dx, t.anchor_dy}},
              {"opacity", t.opacity},
              {"value", t.value}};
}

TriggerSpec trigger_from_json(const json& j) {
  TriggerSpec t;
  t.side = j.value("side", 4);
  if (j.contains("anchor")) {
    t.anchor_dx = j.at("anchor").at(0).get<int>();
    t.anchor_dy = j.at("anchor").at(1).get<int>();
  }
  t.opacity = j.value("opacity", 1.0);
  t.value = j.value("value", 1.0);
  return t;
}

json plan_to_json(const PoisonPlan& p) {
  return json{{"mode", poison_mode_name(p.mode)},
              {"target_label", p.target_label},
              {"rate", p.rate},
              {"dirty_cover_ratio", {p.ratio_dirty, p.ratio_cover}},
              {"dirty_opacity", p.dirty_opacity},
              {"cover_opacity", p.cover_opacity},
              {"source_classes", p.source_classes},
              {"seed", p.seed}};
}

PoisonPlan plan_from_json(const json& j) {
  PoisonPlan p;
  p.mode = poison_mode_from_name(j.value("mode", "hcb"));
  p.target_label = j.value("target_label", 0);
  p.rate = j.value("rate", 0.15);
  if (j.contains("dirty_cover_ratio")) {
    p.ratio_dirty = j.at("dirty_cover_ratio").at(0).get<int>();
    p.ratio_cover = j.at("dirty_cover_ratio").at(1).get<int>();
  }
  p.dirty_opacity = j.value("dirty_opacity", 1.0);
  p.cover_opacity = j.value("cover_opacity", 1.0);
  p.source_classes = j.value("source_classes", std::vector<int>{});
  p.seed = j.value("seed", uint64_t{0});
  return p;
}

json train_to_json(const TrainConfig& t) {
  return json{{"mode", train_mode_name(t.mode)},
              {"epochs", t.epochs},
              {"phase2_epochs", t.phase2_epochs},
              {"batch_size", t.batch_size},
              {"lr", t.lr},
              {"momentum", t.momentum},
              {"lr_decay", t.lr_decay},
              {"decay_at", t.decay_at},
              {"alpha", t.alpha},
              {"beta", t.beta},
              {"deterministic", t.deterministic}};
}

TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  t.mode = train_mode_from_name(j.value("mode", "clean"));
  t.epochs = j.value("epochs", 10);
  t.phase2_epochs = j.value("phase2_epochs", -1);
  t.batch_size = j.value("batch_size", 64);
  t.lr = j.value("lr", 0.01);
  t.momentum = j.value("momentum", 0.9);
  t.lr_decay = j.value("lr_decay", 0.1);
  t.decay_at = j.value("decay_at", 2.0 / 3.0);
  t.alpha = j.value("alpha", 0.3);
  t.beta = j.value("beta", 0.2);
  t.deterministic = j.value("deterministic", true);
  return t;
}

std::string source_name(DataSource s) {
  switch (s) {
    case DataSource::idx: return "idx";
    case DataSource::synth: return "synth";
    case DataSource::dir: return "dir";
  }
  return "synth";
}

DataSource source_from_name(const std::string& n) {
  if (n == "idx") return DataSource::idx;
  if (n == "synth") return DataSource::synth;
  if (n == "dir") return DataSource::dir;
  throw ValidationError("unknown dataset source: " + n);
}

}  // namespace

json ExperimentConfig::to_json() const {
  json d;
  d["source"] = source_name(dataset.source);
  if (dataset.source == DataSource::idx) {
    d["images"] = dataset.images.string();
    d["labels"] = dataset.labels.string();
    d["test_images"] = dataset.test_images.string();
    d["test_labels"] = dataset.test_labels.string();
  } else if (dataset.source == DataSource::dir) {
    d["dir"] = dataset.dir.string();
    d["test_dir"] = dataset.test_dir.string();
  } else {
    d["synth"] = {{"n_train", dataset.synth.n_train},
                  {"n_test", dataset.synth.n_test},
                  {"classes", dataset.synth.classes},
                  {"seed", dataset.synth.seed},
                  {"innocuous_fraction", dataset.synth.innocuous_fraction}};
  }
  d["innocuous"] = innocuous_to_json(dataset.innocuous);
  d["apply_innocuous"] = dataset.apply_innocuous;
  d["train_subset"] = dataset.train_subset;

  json j;
  j["dataset"] = std::move(d);
  j["trigger"] = trigger_to_json(trigger);
  j["poison"] = poison ? plan_to_json(*poison) : json(nullptr);
  j["model"] = {{"arch", arch_name(arch)}};
  j["train"] = train_to_json(train);
  json defs = json::array();
  for (const DefenseConfig& dc : defenses)
    defs.push_back({{"name", dc.name}, {"options", dc.options}});
  j["defenses"] = std::move(defs);
  j["seeds"] = seeds;
  j["out"] = out_dir.string();
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  ExperimentConfig c;
  const json& d = j.at("dataset");
  c.dataset.source = source_from_name(d.value("source", "synth"));
  c.dataset.images = d.value("images", std::string{});
  c.dataset.labels = d.value("labels", std::string{});
  c.dataset.test_images = d.value("test_images", std::string{});
  c.dataset.test_labels = d.value("test_labels", std::string{});
  c.dataset.dir = d.value("dir", std::string{});
  c.dataset.test_dir = d.value("test_dir", std::string{});
  if (d.contains("synth")) {
    const json& s = d.at("synth");
    c.dataset.synth.n_train = s.value("n_train", 512);
    c.dataset.synth.n_test = s.value("n_test", 256);
    c.dataset.synth.classes = s.value("classes", 4);
    c.dataset.synth.seed = s.value("seed", uint64_t{7});
    c.dataset.synth.innocuous_fraction = s.value("innocuous_fraction", 0.3);
  }
  if (d.contains("innocuous")) {
    c.dataset.innocuous = innocuous_from_json(d.at("innocuous"));
  }
  c.dataset.apply_innocuous = d.value("apply_innocuous", true);
  c.dataset.train_subset = d.value("train_subset", size_t{0});

  if (j.contains("trigger")) c.trigger = trigger_from_json(j.at("trigger"));
  if (j.contains("poison") && !j.at("poison").is_null()) {
    c.poison = plan_from_json(j.at("poison"));
  }
  if (j.contains("model")) c.arch = arch_from_name(j.at("model").value("arch", "cnn3x2"));
  if (j.contains("train")) c.train = train_from_json(j.at("train"));
  if (j.contains("defenses")) {
    for (const json& dj : j.at("defenses")) {
      DefenseConfig dc;
      dc.name = dj.at("name").get<std::string>();
      dc.options = dj.value("options", json::object());
      c.defenses.push_back(std::move(dc));
    }
  }
  c.seeds = j.value("seeds", std::vector<uint64_t>{1});
  c.out_dir = j.value("out", std::string{"runs"});
  return c;
}

ExperimentConfig ExperimentConfig::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string ExperimentConfig::digest() const {
  json j = to_json();
  // Identity covers the computation: dataset, trigger, poison, model, train.
  // The output directory is location; the seed list enumerates run instances
  // (each stored as <digest>/seed<k>); defenses are post-hoc analyses filled
  // into existing run directories.
  j.erase("out");
  j.erase("seeds");
  j.erase("defenses");
  return sha256_hex(j.dump());
}

void ExperimentConfig::validate() const {
  std::vector<std::string> problems;
  auto need_file = [&](const fs::path& p, const char* what) {
    if (p.empty()) {
      problems.push_back(std::string(what) + " path is empty");
    } else if (!fs::exists(p)) {
      problems.push_back(std::string(what) + " path does not exist: " + p.string());
    }
  };

  if (dataset.source == DataSource::idx) {
    need_file(dataset.images, "train images");
    need_file(dataset.labels, "train labels");
    need_file(dataset.test_images, "test images");
    need_file(dataset.test_labels, "test labels");
  } else if (dataset.source == DataSource::dir) {
    need_file(dataset.dir, "train dataset dir");
    need_file(dataset.test_dir, "test dataset dir");
  } else {
    if (dataset.synth.classes < 2) problems.push_back("synth classes must be >= 2");
    if (dataset.synth.n_train < dataset.synth.classes)
      problems.push_back("synth n_train must be >= classes");
    if (dataset.synth.n_test < dataset.synth.classes)
      problems.push_back("synth n_test must be >= classes");
  }
  if (dataset.source != DataSource::synth && dataset.apply_innocuous) {
    if (!(dataset.innocuous.prevalence > 0.0 && dataset.innocuous.prevalence < 1.0))
      problems.push_back("innocuous prevalence must lie in (0,1)");
  }
  if (trigger.side <= 0) problems.push_back("trigger side must be positive");
  if (trigger.opacity < 0.0 || trigger.opacity > 1.0)
    problems.push_back("trigger opacity must lie in [0,1]");
  if (train.epochs < 1) problems.push_back("train epochs must be >= 1");
  if (train.batch_size < 1) problems.push_back("train batch size must be >= 1");
  if (train.alpha < 0.0 || train.beta < 0.0)
    problems.push_back("alpha and beta must be >= 0");
  if (poison) {
    if (!(poison->rate > 0.0 && poison->rate < 1.0))
      problems.push_back("poison rate must lie in (0,1)");
    if (poison->ratio_dirty < 0 || poison->ratio_cover < 0 ||
        poison->ratio_dirty + poison->ratio_cover <= 0)
      problems.push_back("dirty:cover ratio must be non-negative with d+c>0");
    if (poison->mode == PoisonMode::HCB_SOURCE_SPECIFIC && poison->source_classes.empty())
      problems.push_back("source-specific mode needs source classes");
    if (train.mode == TrainMode::clean)
      problems.push_back("clean training mode cannot take a poison plan");
  } else if (train.mode != TrainMode::clean) {
    problems.push_back("train mode " + train_mode_name(train.mode) +
                       " requires a poison plan");
  }
  for (const DefenseConfig& dc : defenses) {
    if (dc.name != "fine_prune" && dc.name != "strip" && dc.name != "neural_cleanse" &&
        dc.name != "mm_bd")
      problems.push_back("unknown defense: " + dc.name);
  }
  if (seeds.empty()) problems.push_back("seeds list is empty");

  if (!problems.empty()) {
    std::string msg = "config validation failed:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
}

// ---------------------------------------------------------------------------
// Data preparation
// ---------------------------------------------------------------------------

PreparedData prepare_data(const ExperimentConfig& config) {
  PreparedData out;
  if (config.dataset.source == DataSource::synth) {
    const SynthConfig& s = config.dataset.synth;
    out.train = synth_shapes_dataset(s.n_train, s.classes, s.seed,
                                     s.innocuous_fraction);
    out.test = synth_shapes_dataset(s.n_test, s.classes, derive_seed(s.seed, 2),
                                    s.innocuous_fraction);
  } else if (config.dataset.source == DataSource::idx) {
    out.train = load_idx_dataset(config.dataset.images, config.dataset.labels);
    out.test = load_idx_dataset(config.dataset.test_images, config.dataset.test_labels);
    if (config.dataset.train_subset > 0) {
      out.train = subsample_dataset(out.train, config.dataset.train_subset,
                                    config.dataset.innocuous.seed);
    }
    if (config.dataset.apply_innocuous) {
      out.train = partition_innocuous(std::move(out.train), config.dataset.innocuous);
      out.test = partition_innocuous(std::move(out.test), config.dataset.innocuous);
    }
  } else {
    out.train = load_dataset_dir(config.dataset.dir);
    out.test = load_dataset_dir(config.dataset.test_dir);
    if (config.dataset.train_subset > 0) {
      out.train = subsample_dataset(out.train, config.dataset.train_subset,
                                    config.dataset.innocuous.seed);
    }
    if (config.dataset.apply_innocuous) {
      out.train = partition_innocuous(std::move(out.train), config.dataset.innocuous);
      out.test = partition_innocuous(std::move(out.test), config.dataset.innocuous);
    }
  }
  out.train.split = Split::train;
  out.test.split = Split::test;

  out.model.arch = config.arch;
  out.model.height = out.train.height;
  out.model.width = out.train.width;
  out.model.channels = out.train.channels;
  out.model.num_classes = out.train.num_classes;

  // Cross-field checks that need the materialized shape.
  std::vector<std::string> problems;
  try {
    config.trigger.check_fits(out.train.height, out.train.width);
  } catch (const GeometryError& e) {
    problems.push_back(e.what());
  }
  if (config.poison) {
    try {
      config.poison->validate(out.train.num_classes);
    } catch (const ValidationError& e) {
      problems.push_back(e.what());
    }
  }
  if (!problems.empty()) {
    std::string msg = "config validation failed:";
    for (const std::string& p : problems) msg += "\n  - " + p;
    throw ValidationError(msg);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Defense execution
// ---------------------------------------------------------------------------

namespace {

Dataset examples_as_dataset(const Dataset& like, std::vector<Example> examples,
                            Split split) {
  Dataset d;
  d.num_classes = like.num_classes;
  d.height = like.height;
  d.width = like.width;
  d.channels = like.channels;
  d.split = split;
  d.examples = std::move(examples);
  return d;
}

// Held-out clean data for defenses: training examples that were not poisoned.
Dataset clean_heldout(const PreparedData& data, const PoisonedDataset* poisoned,
                      size_t size, uint64_t seed) {
  std::vector<Example> pool;
  if (poisoned) {
    std::unordered_map<int64_t, bool> touched;
    for (const PoisonRecord& r : poisoned->records) touched[r.id] = true;
    for (const Example& e : data.train.examples)
      if (!touched.count(e.id)) pool.push_back(e);
  } else {
    pool = data.train.examples;
  }
  Dataset d = examples_as_dataset(data.train, std::move(pool), Split::heldout);
  return subsample_dataset(d, size, seed);
}

}  // namespace

json run_defense(const DefenseConfig& dc, const Checkpoint& ck,
                 const PreparedData& data, const PoisonedDataset* poisoned,
                 const EvalPartitions& parts, uint64_t seed,
                 const fs::path& defense_dir) {
  fs::create_directories(defense_dir);
  nn::Network<float> net = to_network(ck);
  const json& o = dc.options;

  if (dc.name == "fine_prune") {
    std::vector<double> fractions = o.value(
        "fractions",
        std::vector<double>{0.0, 0.2, 0.4, 0.6, 0.7, 0.8, 0.9, 0.95});
    TrainConfig ft;
    ft.mode = TrainMode::clean;
    ft.epochs = o.value("finetune_epochs", 2);
    ft.lr = o.value("finetune_lr", 1e-3);
    ft.batch_size = o.value("finetune_batch", 64);
    ft.momentum = 0.9;
    ft.seed = seed;
    Dataset heldout = clean_heldout(data, poisoned, o.value("heldout_size", size_t{2000}),
                                    derive_seed(seed, 1));
    PruneCurve curve = fine_prune(ck, heldout, parts, fractions, ft,
                                  o.value("include_effective", true));
    write_prune_report(curve, defense_dir / "fine_prune_report.json");
    return curve.to_json();
  }

  if (dc.name == "strip") {
    StripOptions so;
    so.perturbations = o.value("perturbations", 100);
    so.blend = o.value("blend", 0.5);
    so.frr_levels = o.value("frr_levels", std::vector<double>{0.01, 0.05});
    so.seed = seed;
    const size_t benign_size = o.value("benign_size", size_t{500});
    const size_t suspect_size = o.value("suspect_size", size_t{500});

    // Disjoint split by id: low ids feed the benign pool, high ids the
    // suspects, so no underlying image appears on both sides.
    std::vector<Example> benign_sorted = parts.benign;
    std::sort(benign_sorted.begin(), benign_sorted.end(),
              [](const Example& a, const Example& b) { return a.id < b.id; });
    const size_t cut = benign_sorted.size() / 2;
    std::vector<Example> pool_examples(benign_sorted.begin(),
                                       benign_sorted.begin() + cut);
    Dataset pool = examples_as_dataset(data.test, std::move(pool_examples),
                                       Split::heldout);
    pool = subsample_dataset(pool, benign_size, derive_seed(seed, 2));

    std::vector<Example> suspects;
    auto take_suspects = [&](const std::vector<Example>& src) {
      for (const Example& e : src) {
        if (suspects.size() >= suspect_size) break;
        if (e.id >= benign_sorted[cut].id) suspects.push_back(e);
      }
    };
    take_suspects(parts.es_trig);
    if (poisoned && poisoned->plan.mode == PoisonMode::SCAB) {
      take_suspects(parts.nes_trig);  // SCAB suspects span every class
    }
    StripReport rep = strip_detect(net, pool, suspects, so);
    write_strip_report(rep, defense_dir / "strip_report.json");
    return rep.to_json();
  }

  if (dc.name == "neural_cleanse") {
    CleanseOptions co;
    co.epochs = o.value("epochs", 50);
    co.batch_size = o.value("batch_size", 32);
    co.lr = o.value("lr", 0.1);
    co.lambda_init = o.value("lambda_init", 1e-3);
    co.seed = seed;
    Dataset probe = subsample_dataset(
        examples_as_dataset(data.test, parts.benign, Split::heldout),
        o.value("probe_size", size_t{500}), derive_seed(seed, 3));
    CleanseReport rep = neural_cleanse(net, probe, co);
    write_cleanse_report(rep, defense_dir);
    return rep.to_json();
  }

  if (dc.name == "mm_bd") {
    MmbdOptions mo;
    mo.restarts = o.value("restarts", 5);
    mo.steps = o.value("steps", 300);
    mo.step_size = o.value("step_size", 0.05);
    mo.warm_start = o.value("warm_start", false);
    mo.seed = seed;
    MmbdReport rep = mm_bd_detect(net, mo, mo.warm_start ? &data.train : nullptr);
    write_mmbd_report(rep, defense_dir / "mm_bd_report.json");
    return rep.to_json();
  }

  throw ValidationError("unknown defense: " + dc.name);
}

// ---------------------------------------------------------------------------
// Per-seed pipeline
// ---------------------------------------------------------------------------

namespace {

SeedOutcome run_seed(const ExperimentConfig& config, const PreparedData& data,
                     uint64_t seed, const fs::path& run_dir,
                     const std::string& digest) {
  const auto t0 = Clock::now();
  SeedOutcome outcome;
  outcome.seed = seed;
  outcome.run_dir = run_dir;
  fs::create_directories(run_dir);

  {
    json cj = config.to_json();
    cj["run_seed"] = seed;
    cj["config_digest"] = digest;
    std::ofstream out(run_dir / "config.json", std::ios::trunc);
    out << cj.dump(2) << "\n";
  }

  // Poison crafting (or reuse of a cached record set).
  std::optional<PoisonedDataset> poisoned;
  if (config.poison) {
    PoisonPlan plan = *config.poison;
    plan.seed = derive_seed(seed, 10);
    poisoned = craft_poison(data.train, plan, config.trigger);
    save_poison_records(*poisoned, run_dir / "poison_records.json", digest);
  }

  // Training, unless an identical run already produced a checkpoint.
  const fs::path ck_dir = run_dir / "checkpoint";
  Checkpoint ck;
  const auto train_t0 = Clock::now();
  if (fs::exists(ck_dir / "weights.bin") && fs::exists(ck_dir / "metadata.json")) {
    ck = load_checkpoint(ck_dir);
  } else {
    TrainConfig tc = config.train;
    tc.seed = seed;
    TrainResult tr;
    switch (tc.mode) {
      case TrainMode::clean:
        tr = train_standard(data.train, data.model, tc);
        break;
      case TrainMode::standard_poisoned:
        tr = train_standard(*poisoned, data.model, tc);
        break;
      case TrainMode::two_step:
        tr = train_two_step(*poisoned, data.model, tc);
        break;
      case TrainMode::one_step:
        tr = train_one_step(*poisoned, data.model, tc);
        break;
    }
    tr.checkpoint.meta.config_digest = digest;
    save_checkpoint(tr.checkpoint, ck_dir);
    if (tr.phase1) {
      tr.phase1->meta.config_digest = digest;
      save_checkpoint(*tr.phase1, run_dir / "phase1");
    }
    write_trace_csv(tr.trace, run_dir / "traces.csv");
    ck = std::move(tr.checkpoint);
  }
  outcome.train_seconds = std::chrono::duration<double>(Clock::now() - train_t0).count();

  // Evaluation.
  const int y_t = config.poison ? config.poison->target_label : 0;
  const PoisonMode mode = config.poison ? config.poison->mode : PoisonMode::HCB;
  const std::vector<int> source =
      config.poison ? config.poison->source_classes : std::vector<int>{};
  EvalPartitions parts = build_eval_partitions(data.test, config.trigger, y_t,
                                               mode, source);
  nn::Network<float> net = to_network(ck);
  if (fs::exists(run_dir / "report.json")) {
    outcome.report = read_report_json(run_dir / "report.json");
  } else {
    outcome.report = evaluate_attack(net, parts);
    outcome.report.config_digest = digest;
    write_report_json(outcome.report, run_dir / "report.json");
  }

  // Defenses; cached reports are reused.
  for (size_t i = 0; i < config.defenses.size(); ++i) {
    const DefenseConfig& dc = config.defenses[i];
    const fs::path ddir = run_dir / "defenses";
    const fs::path report_path =
        ddir / (dc.name == "neural_cleanse" ? "neural_cleanse_report.json"
                                            : dc.name + "_report.json");
    if (fs::exists(report_path)) {
      std::ifstream in(report_path);
      json j;
      in >> j;
      outcome.defense_reports[dc.name] = std::move(j);
    } else {
      outcome.defense_reports[dc.name] =
          run_defense(dc, ck, data, poisoned ? &*poisoned : nullptr, parts,
                      derive_seed(seed, 400 + i), ddir);
    }
  }

  outcome.total_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  return outcome;
}

}  // namespace

// ---------------------------------------------------------------------------
// Public entry points
// ---------------------------------------------------------------------------

RunRecord run_experiment(const ExperimentConfig& config) {
  config.validate();
  PreparedData data = prepare_data(config);  // throws before anything is written

  const std::string digest = config.digest();
  const fs::path base = config.out_dir / digest.substr(0, 16);
  RunRecord record;
  record.config_digest = digest;

  for (uint64_t seed : config.seeds) {
    const fs::path run_dir = base / ("seed" + std::to_string(seed));
    try {
      record.outcomes.push_back(run_seed(config, data, seed, run_dir, digest));
    } catch (const std::exception& e) {
      SeedOutcome failed;
      failed.seed = seed;
      failed.run_dir = run_dir;
      failed.failed = true;
      failed.error = e.what();
      record.outcomes.push_back(std::move(failed));
      record.partial = true;
    }
  }

  {
    std::ofstream out(base / "runrecord.json", std::ios::trunc);
    out << record.to_json().dump(2) << "\n";
  }
  return record;
}

json RunRecord::to_json() const {
  json runs = json::array();
  for (const SeedOutcome& o : outcomes) {
    json r;
    r["seed"] = o.seed;
    r["dir"] = o.run_dir.string();
    r["failed"] = o.failed;
    if (o.failed) {
      r["error"] = o.error;
    } else {
      r["report"] = o.report.to_json();
      json defs = json::object();
      for (const auto& [name, rep] : o.defense_reports) defs[name] = rep;
      r["defenses"] = std::move(defs);
      r["timings"] = {{"train_s", o.train_seconds}, {"total_s", o.total_seconds}};
    }
    runs.push_back(std::move(r));
  }
  json j;
  j["config_digest"] = config_digest;
  j["tool_version"] = tool_version;
  j["partial"] = partial;
  if (!axis.is_null()) j["axis"] = axis;
  j["runs"] = std::move(runs);
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  RunRecord rec;
  rec.config_digest = j.value("config_digest", "");
  rec.tool_version = j.value("tool_version", "");
  rec.partial = j.value("partial", false);
  if (j.contains("axis")) rec.axis = j.at("axis");
  for (const json& r : j.value("runs", json::array())) {
    SeedOutcome o;
    o.seed = r.value("seed", uint64_t{0});
    o.run_dir = r.value("dir", std::string{});
    o.failed = r.value("failed", false);
    if (o.failed) {
      o.error = r.value("error", "");
    } else {
      o.report = EvalReport::from_json(r.at("report"));
      for (const auto& [name, rep] : r.value("defenses", json::object()).items())
        o.defense_reports[name] = rep;
      if (r.contains("timings")) {
        o.train_seconds = r["timings"].value("train_s", 0.0);
        o.total_seconds = r["timings"].value("total_s", 0.0);
      }
    }
    rec.outcomes.push_back(std::move(o));
  }
  return rec;
}

RunRecord RunRecord::from_file(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open " + path.string());
  json j;
  in >> j;
  return from_json(j);
}

// ---------------------------------------------------------------------------
// Sweeps
// ---------------------------------------------------------------------------

namespace {

void set_json_path(json& root, const std::string& dotted, const json& value) {
  json* cur = &root;
  size_t start = 0;
  std::vector<std::string> parts;
  while (true) {
    size_t dot = dotted.find('.', start);
    if (dot == std::string::npos) {
      parts.push_back(dotted.substr(start));
      break;
    }
    parts.push_back(dotted.substr(start, dot - start));
    start = dot + 1;
  }
  for (size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!cur->contains(parts[i])) {
      throw ValidationError("sweep axis path not found: " + dotted);
    }
    cur = &(*cur)[parts[i]];
  }
  const std::string& leaf = parts.back();
  if (!cur->is_object() || !cur->contains(leaf)) {
    throw ValidationError("sweep axis path not found: " + dotted);
  }
  // "d:c" strings address ratio-pair fields
  if (value.is_string()) {
    const std::string s = value.get<std::string>();
    const size_t colon = s.find(':');
    if (colon != std::string::npos) {
      (*cur)[leaf] = json::array(
          {std::stoi(s.substr(0, colon)), std::stoi(s.substr(colon + 1))});
      return;
    }
  }
  (*cur)[leaf] = value;
}

}  // namespace

std::vector<RunRecord> run_sweep(const ExperimentConfig& base,
                                 const std::string& axis_path,
                                 const std::vector<json>& values, int workers) {
  if (values.empty()) throw ValidationError("sweep values list is empty");
  std::vector<ExperimentConfig> configs;
  for (const json& v : values) {
    json j = base.to_json();
    set_json_path(j, axis_path, v);
    configs.push_back(ExperimentConfig::from_json(j));
  }

  std::vector<RunRecord> records(configs.size());
  if (workers <= 1) {
    for (size_t i = 0; i < configs.size(); ++i) {
      records[i] = run_experiment(configs[i]);
      records[i].axis = {{"path", axis_path}, {"value", values[i]}};
    }
  } else {
    std::mutex next_mutex;
    size_t next = 0;
    auto worker = [&]() {
      while (true) {
        size_t i;
        {
          std::lock_guard<std::mutex> lock(next_mutex);
          if (next >= configs.size()) return;
          i = next++;
        }
        records[i] = run_experiment(configs[i]);
        records[i].axis = {{"path", axis_path}, {"value", values[i]}};
      }
    };
    std::vector<std::thread> threads;
    for (int w = 0; w < workers; ++w) threads.emplace_back(worker);
    for (std::thread& t : threads) t.join();
  }

  // Aggregated medians per axis value.
  fs::create_directories(base.out_dir);
  std::string stem = axis_path;
  std::replace(stem.begin(), stem.end(), '.', '_');
  std::ofstream csv(base.out_dir / ("sweep_" + stem + ".csv"), std::ios::trunc);
  csv << "value,median_cda,median_asr,median_fpr_es,median_fpr_nes\n";
  for (size_t i = 0; i < records.size(); ++i) {
    csv << values[i].dump() << "," << record_median(records[i], "cda") << ","
        << record_median(records[i], "asr") << ","
        << record_median(records[i], "fpr_es") << ","
        << record_median(records[i], "fpr_nes") << "\n";
  }
  return records;
}

double record_median(const RunRecord& record, const std::string& metric) {
  std::vector<double> vals;
  for (const SeedOutcome& o : record.outcomes) {
    if (o.failed) continue;
    if (metric == "cda") vals.push_back(o.report.cda.rate());
    else if (metric == "asr") vals.push_back(o.report.asr.rate());
    else if (metric == "fpr_es") vals.push_back(o.report.fpr_es.rate());
    else if (metric == "fpr_nes") vals.push_back(o.report.fpr_nes.rate());
    else if (metric == "fpr_ns_es" && o.report.fpr_ns_es)
      vals.push_back(o.report.fpr_ns_es->rate());
    else if (metric != "fpr_ns_es")
      throw ValidationError("unknown metric: " + metric);
  }
  if (vals.empty()) throw ValidationError("no successful runs for metric " + metric);
  return median_of(std::move(vals));
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

void emit_report(const std::vector<RunRecord>& records, const fs::path& out_dir) {
  if (records.empty()) throw ValidationError("emit_report needs at least one record");
  fs::create_directories(out_dir);
  const fs::path plots = out_dir / "plots";
  fs::create_directories(plots);

  std::ofstream csv(out_dir / "summary.csv", std::ios::trunc);
  csv << "digest,seed,y_t,cda,asr,fpr_es,fpr_nes,fpr_ns_es,train_s\n";
  json summary = json::array();

  for (const RunRecord& rec : records) {
    json jr;
    jr["config_digest"] = rec.config_digest;
    if (!rec.axis.is_null()) jr["axis"] = rec.axis;
    jr["partial"] = rec.partial;
    json medians;
    for (const char* m : {"cda", "asr", "fpr_es", "fpr_nes"}) {
      try {
        medians[m] = record_median(rec, m);
      } catch (const ValidationError&) {
      }
    }
    jr["medians"] = std::move(medians);
    jr["runs"] = rec.to_json()["runs"];
    summary.push_back(std::move(jr));

    const std::string d8 = rec.config_digest.substr(0, 8);
    for (const SeedOutcome& o : rec.outcomes) {
      if (o.failed) continue;
      csv << rec.config_digest.substr(0, 16) << "," << o.seed << ","
          << o.report.y_t << "," << o.report.cda.rate() << ","
          << o.report.asr.rate() << "," << o.report.fpr_es.rate() << ","
          << o.report.fpr_nes.rate() << ",";
      if (o.report.fpr_ns_es) csv << o.report.fpr_ns_es->rate();
      csv << "," << o.train_seconds << "\n";

      // Figure-style series per defense report.
      const std::string tag = d8 + "_seed" + std::to_string(o.seed);
      auto it = o.defense_reports.find("strip");
      if (it != o.defense_reports.end()) {
        const json& rep = it->second;
        const int k = rep.value("num_classes", 10);
        json hist;
        hist["benign"] = entropy_histogram(
            rep.value("benign_entropy", std::vector<double>{}), k);
        hist["suspect"] = entropy_histogram(
            rep.value("suspect_entropy", std::vector<double>{}), k);
        std::ofstream hf(plots / ("strip_entropy_" + tag + ".json"), std::ios::trunc);
        hf << hist.dump(2) << "\n";
      }
      it = o.defense_reports.find("fine_prune");
      if (it != o.defense_reports.end()) {
        json series;
        for (const json& p : it->second.value("points", json::array())) {
          series["fraction"].push_back(p.value("fraction", 0.0));
          series["cda_before"].push_back(p.value("cda_before", 0.0));
          series["asr_before"].push_back(p.value("asr_before", 0.0));
          series["cda_after"].push_back(p.value("cda_after", 0.0));
          series["asr_after"].push_back(p.value("asr_after", 0.0));
        }
        std::ofstream pf(plots / ("prune_curve_" + tag + ".json"), std::ios::trunc);
        pf << series.dump(2) << "\n";
      }
    }
  }

  // Sweep trends grouped by axis path.
  std::map<std::string, json> trends;
  for (const RunRecord& rec : records) {
    if (rec.axis.is_null()) continue;
    const std::string path = rec.axis.value("path", "");
    json& t = trends[path];
    t["x"].push_back(rec.axis["value"]);
    for (const char* m : {"cda", "asr", "fpr_es", "fpr_nes"}) {
      try {
        t[m].push_back(record_median(rec, m));
      } catch (const ValidationError&) {
      }
    }
  }
  for (auto& [path, t] : trends) {
    std::string stem = path;
    std::replace(stem.begin(), stem.end(), '.', '_');
    std::ofstream tf(plots / ("sweep_" + stem + ".json"), std::ios::trunc);
    tf << t.dump(2) << "\n";
  }

  std::ofstream jf(out_dir / "summary.json", std::ios::trunc);
  jf << summary.dump(2) << "\n";
}

}  // namespace hcb
