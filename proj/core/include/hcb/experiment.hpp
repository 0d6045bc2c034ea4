#ifndef HCB_EXPERIMENT_HPP
#define HCB_EXPERIMENT_HPP

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "hcb/dataset.hpp"
#include "hcb/metrics.hpp"
#include "hcb/poison.hpp"
#include "hcb/train.hpp"

#include "json.hpp"

namespace hcb {

inline constexpr const char* kToolVersion = "0.1.0";

enum class DataSource { idx, synth, dir };

struct SynthConfig {
  int n_train = 512;
  int n_test = 256;
  int classes = 4;
  uint64_t seed = 7;
  double innocuous_fraction = 0.3;
};

struct DatasetConfig {
  DataSource source = DataSource::synth;
  std::filesystem::path images, labels;            // idx
  std::filesystem::path test_images, test_labels;  // idx
  std::filesystem::path dir, test_dir;             // dataset directories
  SynthConfig synth;
  InnocuousSpec innocuous;      // applied to idx/dir sources
  bool apply_innocuous = true;  // dir sources may already carry flags
  size_t train_subset = 0;      // 0 = use everything
};

struct DefenseConfig {
  std::string name;  // fine_prune | strip | neural_cleanse | mm_bd
  nlohmann::json options = nlohmann::json::object();
};

struct ExperimentConfig {
  DatasetConfig dataset;
  TriggerSpec trigger;
  std::optional<PoisonPlan> poison;  // absent => clean training
  ArchId arch = ArchId::cnn3x2;
  TrainConfig train;
  std::vector<DefenseConfig> defenses;
  std::vector<uint64_t> seeds = {1};
  std::filesystem::path out_dir = "runs";

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig from_file(const std::filesystem::path& path);

  /// Content digest identifying the computation (dataset, trigger, poison,
  /// model, train). Key order in the source file does not matter; any value
  /// change does. The output directory, the seed list (runs are stored per
  /// seed under the digest) and the defense list (analyses are filled into
  /// existing run directories) are excluded.
  std::string digest() const;

  /// Structural validation; throws ValidationError listing every violation.
  void validate() const;
};

struct SeedOutcome {
  uint64_t seed = 0;
  std::filesystem::path run_dir;
  EvalReport report;
  std::map<std::string, nlohmann::json> defense_reports;
  double train_seconds = 0.0;
  double total_seconds = 0.0;
  bool failed = false;
  std::string error;
};

struct RunRecord {
  std::string config_digest;
  std::string tool_version = kToolVersion;
  std::vector<SeedOutcome> outcomes;
  bool partial = false;  // at least one seed failed mid-run
  nlohmann::json axis;   // set by run_sweep: {"path":..., "value":...}

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);
  static RunRecord from_file(const std::filesystem::path& path);
};

/// Materialized experiment inputs, shared across seeds of one config.
struct PreparedData {
  Dataset train;  // innocuous-flagged
  Dataset test;   // innocuous-flagged, same spec
  ModelSpec model;
};

PreparedData prepare_data(const ExperimentConfig& config);

/// Runs one configured defense against a checkpoint; the report JSON is
/// returned and also written under defense_dir.
nlohmann::json run_defense(const DefenseConfig& dc, const Checkpoint& ck,
                           const PreparedData& data,
                           const PoisonedDataset* poisoned,
                           const EvalPartitions& parts, uint64_t seed,
                           const std::filesystem::path& defense_dir);

/// Full pipeline per seed: poison -> train -> evaluate -> defenses, with all
/// artifacts persisted under out/<digest>/seed<k>/. Existing artifacts from
/// an identical config are reused (deterministic runs reproduce them
/// byte-for-byte anyway); missing defense reports are filled in.
RunRecord run_experiment(const ExperimentConfig& config);

/// One run per value x seed along a dotted config path (e.g. "poison.rate").
/// Values may be numbers, or "d:c" strings for the dirty:cover ratio.
std::vector<RunRecord> run_sweep(const ExperimentConfig& base,
                                 const std::string& axis_path,
                                 const std::vector<nlohmann::json>& values,
                                 int workers = 1);

/// summary.csv (one row per run), summary.json, and plot-data series
/// (prune curves, entropy histograms, sweep trends).
void emit_report(const std::vector<RunRecord>& records,
                 const std::filesystem::path& out_dir);

/// Median over per-seed metric values of a record, e.g. "asr".
double record_median(const RunRecord& record, const std::string& metric);

}  // namespace hcb

#endif  // HCB_EXPERIMENT_HPP
