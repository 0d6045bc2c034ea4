#ifndef HCB_DEFENSES_STRIP_HPP
#define HCB_DEFENSES_STRIP_HPP

#include <filesystem>
#include <vector>

#include "hcb/metrics.hpp"
#include "hcb/train.hpp"

#include "json.hpp"

namespace hcb {

struct StripOptions {
  int perturbations = 100;                  // N overlays per input
  double blend = 0.5;                       // overlay weight
  std::vector<double> frr_levels = {0.01, 0.05};
  uint64_t seed = 0;
};

struct StripReport {
  std::vector<double> benign_entropy;
  std::vector<double> suspect_entropy;
  std::vector<double> frr_levels;
  std::vector<double> thresholds;  // entropy percentile per FRR level
  std::vector<double> far;         // suspects escaping detection per level
  int num_classes = 0;
  uint64_t seed = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Perturbation-entropy detector. Each input is superimposed with
/// `perturbations` random benign images (weight `blend`, clipped); the mean
/// prediction entropy is compared against a threshold placed at the FRR
/// percentile of the benign entropy distribution (entropy below threshold =>
/// flagged as trigger-carrying). FAR is the fraction of suspects above the
/// threshold, i.e. escaping detection.
StripReport strip_detect(nn::Network<float>& net, const Dataset& benign_pool,
                         const std::vector<Example>& suspects,
                         const StripOptions& options);

void write_strip_report(const StripReport& report, const std::filesystem::path& path);

/// Histogram of entropies over [0, ln K]; emitted as plot data.
nlohmann::json entropy_histogram(const std::vector<double>& entropies,
                                 int num_classes, int bins = 40);

}  // namespace hcb

#endif  // HCB_DEFENSES_STRIP_HPP
