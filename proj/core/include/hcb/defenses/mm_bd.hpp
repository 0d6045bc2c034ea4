#ifndef HCB_DEFENSES_MM_BD_HPP
#define HCB_DEFENSES_MM_BD_HPP

#include <filesystem>
#include <vector>

#include "hcb/metrics.hpp"
#include "hcb/train.hpp"

#include "json.hpp"

namespace hcb {

struct MmbdOptions {
  int restarts = 5;
  int steps = 300;
  double step_size = 0.05;
  bool warm_start = false;   // add a start at the best training example
  double anomaly_threshold = 2.0;
  uint64_t seed = 0;
};

struct MmbdReport {
  std::vector<double> margins;          // estimated M_c per class
  std::vector<double> anomaly_indices;  // MAD indices (empty when degenerate)
  bool flagged = false;
  int suspected_class = -1;
  uint64_t seed = 0;
  double seconds = 0.0;

  nlohmann::json to_json() const;
};

/// Maximum-margin statistic estimation by projected gradient ascent over the
/// [0,1] input box: M_c = max_x [z_c(x) - max_{k!=c} z_k(x)]. The decision
/// applies the shared MAD anomaly index to {M_c}; only upward outliers count,
/// and a degenerate spread (all margins equal) means no flag.
MmbdReport mm_bd_detect(nn::Network<float>& net, const MmbdOptions& options,
                        const Dataset* warm_pool = nullptr);

void write_mmbd_report(const MmbdReport& report, const std::filesystem::path& path);

}  // namespace hcb

#endif  // HCB_DEFENSES_MM_BD_HPP
