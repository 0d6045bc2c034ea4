#include "hcb/trigger.hpp"

#include <cmath>
#include <string>

namespace hcb {

TriggerSpec TriggerSpec::scaled_for(int height, int width) {
  TriggerSpec t;
  t.side = static_cast<int>(std::ceil(0.14 * std::min(height, width)));
  return t;
}

void TriggerSpec::check_fits(int height, int width) const {
  if (side <= 0) throw GeometryError("trigger side must be positive");
  if (opacity < 0.0 || opacity > 1.0) {
    throw GeometryError("trigger opacity must lie in [0,1]");
  }
  if (anchor_dx < 0 || anchor_dy < 0 || anchor_dx + side > width ||
      anchor_dy + side > height) {
    throw GeometryError("trigger patch (side " + std::to_string(side) +
                        ", anchor +" + std::to_string(anchor_dx) + "+" +
                        std::to_string(anchor_dy) +
                        ") falls outside a " + std::to_string(height) + "x" +
                        std::to_string(width) + " image");
  }
}

void apply_trigger_inplace(Image& image, const TriggerSpec& trig) {
  trig.check_fits(image.height, image.width);
  // anchor offsets are measured from the bottom-left corner
  const int y0 = image.height - trig.anchor_dy - trig.side;
  const int x0 = trig.anchor_dx;
  const float a = static_cast<float>(trig.opacity);
  const float v = static_cast<float>(trig.value);
  for (int y = y0; y < y0 + trig.side; ++y)
    for (int x = x0; x < x0 + trig.side; ++x)
      for (int c = 0; c < image.channels; ++c) {
        float& p = image.at(y, x, c);
        p = static_cast<float>(clamp01((1.0f - a) * p + a * v));
      }
}

Image apply_trigger(const Image& image, const TriggerSpec& trig) {
  Image out = image;
  apply_trigger_inplace(out, trig);
  return out;
}

}  // namespace hcb
