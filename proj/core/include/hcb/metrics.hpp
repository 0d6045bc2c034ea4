#ifndef HCB_METRICS_HPP
#define HCB_METRICS_HPP

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "hcb/model.hpp"
#include "hcb/poison.hpp"

#include "json.hpp"

namespace hcb {

/// Evaluation populations. Triggered partitions hold copies stamped at full
/// opacity; the originals stay untouched. No partition except `benign`
/// contains examples whose ground truth equals the target label.
struct EvalPartitions {
  std::vector<Example> benign;      // raw test set
  std::vector<Example> es_trig;     // effective, triggered
  std::vector<Example> es_plain;    // effective, untriggered
  std::vector<Example> nes_trig;    // non-effective, triggered
  std::vector<Example> ns_es_trig;  // effective from non-source classes, triggered
  int y_t = 0;
  PoisonMode mode = PoisonMode::HCB;
  std::vector<int> source_classes;
  int num_classes = 0;
  int height = 0, width = 0, channels = 0;
};

struct MetricCount {
  int64_t num = 0;
  int64_t den = 0;
  double rate() const { return den > 0 ? double(num) / double(den) : 0.0; }
};

struct EvalReport {
  MetricCount cda, asr, fpr_es, fpr_nes;
  std::optional<MetricCount> fpr_ns_es;
  int y_t = 0;
  std::string config_digest;

  nlohmann::json to_json() const;
  static EvalReport from_json(const nlohmann::json& j);
};

/// Builds the metric populations from an innocuous-flagged test set.
/// Triggered copies are stamped via apply_trigger at opacity 1.0.
/// In source-specific mode, es_trig is restricted to source classes while
/// ns_es_trig holds effective samples from non-source classes.
EvalPartitions build_eval_partitions(const Dataset& test, const TriggerSpec& trig,
                                     int y_t, PoisonMode mode,
                                     const std::vector<int>& source_classes = {});

/// Batched inference over the partitions; rates are exact counting ratios.
EvalReport evaluate_attack(nn::Network<float>& net, const EvalPartitions& parts);
EvalReport evaluate_attack(const Checkpoint& ck, const EvalPartitions& parts);

/// Brute-force counter over a flat prediction list (benign, es_trig,
/// es_plain, nes_trig, ns_es_trig order). Kept free of any shared counting
/// code so it can cross-check evaluate_attack.
EvalReport metrics_oracle(const std::vector<int>& predictions,
                          const EvalPartitions& parts);

void write_report_json(const EvalReport& report, const std::filesystem::path& path);
EvalReport read_report_json(const std::filesystem::path& path);

/// Appends one CSV row (writing the header when the file is new).
void append_report_csv(const EvalReport& report, const std::string& run_label,
                       const std::filesystem::path& path);

}  // namespace hcb

#endif  // HCB_METRICS_HPP
