#ifndef HCB_DEFENSES_MAD_HPP
#define HCB_DEFENSES_MAD_HPP

#include <vector>

namespace hcb {

/// Median-absolute-deviation anomaly index per value:
///   index_i = |v_i - median(v)| / (1.4826 * MAD(v))
/// Requires at least 3 values; throws DegenerateError when MAD is zero.
std::vector<double> mad_anomaly_indices(const std::vector<double>& values);

/// Sort-based median (average of the middle pair for even sizes).
double median_of(std::vector<double> values);

}  // namespace hcb

#endif  // HCB_DEFENSES_MAD_HPP
