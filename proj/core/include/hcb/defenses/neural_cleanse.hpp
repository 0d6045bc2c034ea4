#ifndef HCB_DEFENSES_NEURAL_CLEANSE_HPP
#define HCB_DEFENSES_NEURAL_CLEANSE_HPP

#include <filesystem>
#include <vector>

#include "hcb/metrics.hpp"
#include "hcb/train.hpp"

#include "json.hpp"

namespace hcb {

struct CleanseOptions {
  int epochs = 50;
  int batch_size = 32;
  double lr = 0.1;                 // Adam step size on mask/pattern
  double lambda_init = 1e-3;       // L1 weight on the mask
  double lambda_factor = 1.5;      // multiplied/divided by the success control
  double success_target = 0.99;
  double anomaly_threshold = 2.0;
  uint64_t seed = 0;
};

struct CleanseReport {
  std::vector<double> mask_norms;        // final L1 norm per candidate class
  std::vector<bool> diverged;            // classes skipped with a warning
  std::vector<double> anomaly_indices;   // aligned with mask_norms
  bool flagged = false;
  int flagged_class = -1;
  Image mask;     // recovered H x W mask of the minimal-norm class
  Image pattern;  // recovered H x W x C pattern
  uint64_t seed = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Trigger reverse-engineering. For every candidate class the mask/pattern
/// pair minimising CE(f((1-m) . x + m . delta), t) + lambda*|m|_1 over the
/// probe set is optimised with projected Adam (values clamped to [0,1] after
/// every step). The model is flagged as backdoored when the minimal-norm
/// class has a MAD anomaly index above the threshold.
CleanseReport neural_cleanse(nn::Network<float>& net, const Dataset& probe,
                             const CleanseOptions& options);

/// Writes <stem>_report.json plus the recovered mask/pattern as raw float
/// arrays and PGM/PPM previews.
void write_cleanse_report(const CleanseReport& report,
                          const std::filesystem::path& dir,
                          const std::string& stem = "neural_cleanse");

}  // namespace hcb

#endif  // HCB_DEFENSES_NEURAL_CLEANSE_HPP
