#ifndef HCB_DEFENSES_FINE_PRUNE_HPP
#define HCB_DEFENSES_FINE_PRUNE_HPP

#include <filesystem>
#include <vector>

#include "hcb/metrics.hpp"
#include "hcb/train.hpp"

#include "json.hpp"

namespace hcb {

struct PrunePoint {
  double fraction = 0.0;
  double cda_before = 0.0;
  double asr_before = 0.0;
  double cda_after = 0.0;  // after fine-tuning
  double asr_after = 0.0;
};

struct PruneCurve {
  std::vector<PrunePoint> points;
  int pruned_layer_channels = 0;
  bool include_effective = true;
  uint64_t seed = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Ranks the last convolution's channels by mean activation over the held-out
/// set (ascending) and, for each fraction, masks the lowest-ranked channels,
/// records CDA/ASR, fine-tunes with the masked channels frozen, and records
/// CDA/ASR again. include_effective=false filters innocuous examples from the
/// held-out set first.
PruneCurve fine_prune(const Checkpoint& model, const Dataset& heldout,
                      const EvalPartitions& parts,
                      const std::vector<double>& fractions,
                      const TrainConfig& finetune_cfg, bool include_effective);

void write_prune_report(const PruneCurve& curve, const std::filesystem::path& path);

}  // namespace hcb

#endif  // HCB_DEFENSES_FINE_PRUNE_HPP
