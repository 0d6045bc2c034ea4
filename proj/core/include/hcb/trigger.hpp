#ifndef HCB_TRIGGER_HPP
#define HCB_TRIGGER_HPP

#include <cstdint>

#include "hcb/common.hpp"
#include "hcb/image.hpp"

namespace hcb {

/// Square patch trigger anchored near the bottom-left image corner.
/// The patch is alpha-blended: x' = (1-a)*x + a*value inside the patch,
/// identity elsewhere.
struct TriggerSpec {
  int side = 4;        // square edge length in pixels
  int anchor_dx = 1;   // offset from the left edge
  int anchor_dy = 1;   // offset from the bottom edge
  double opacity = 1.0;
  double value = 1.0;  // constant patch intensity (1.0 = white)

  /// Default geometry for a given image shape: side = ceil(0.14*min(H,W)),
  /// anchored at offset (1,1).
  static TriggerSpec scaled_for(int height, int width);

  /// Throws GeometryError when the patch does not fit inside H x W.
  void check_fits(int height, int width) const;
};

Image apply_trigger(const Image& image, const TriggerSpec& trig);
void apply_trigger_inplace(Image& image, const TriggerSpec& trig);

}  // namespace hcb

#endif  // HCB_TRIGGER_HPP
