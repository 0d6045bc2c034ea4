#ifndef HCB_IMAGE_HPP
#define HCB_IMAGE_HPP

#include <cstddef>
#include <vector>

namespace hcb {

/// Dense H x W x C image, row-major with interleaved channels, values in [0,1].
struct Image {
  int height = 0;
  int width = 0;
  int channels = 0;
  std::vector<float> pixels;

  Image() = default;
  Image(int h, int w, int c, float fill = 0.0f)
      : height(h), width(w), channels(c),
        pixels(static_cast<size_t>(h) * w * c, fill) {}

  size_t size() const { return pixels.size(); }

  float& at(int y, int x, int c) {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }
  float at(int y, int x, int c) const {
    return pixels[(static_cast<size_t>(y) * width + x) * channels + c];
  }

  bool same_shape(const Image& o) const {
    return height == o.height && width == o.width && channels == o.channels;
  }

  friend bool operator==(const Image&, const Image&) = default;
};

}  // namespace hcb

#endif  // HCB_IMAGE_HPP
