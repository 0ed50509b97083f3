#ifndef OVD_IMAGE_HPP
#define OVD_IMAGE_HPP

#include <cstdint>
#include <vector>

#include "ovd/errors.hpp"

namespace ovd {

// RGB image, values in [0,1], row-major interleaved channels.
struct Image {
  int h = 0, w = 0;
  std::vector<double> data; // h*w*3

  Image() = default;
  Image(int height, int width)
      : h(height), w(width), data(static_cast<size_t>(height) * width * 3, 0.0) {}

  double at(int r, int c, int ch) const {
    return data[(static_cast<size_t>(r) * w + c) * 3 + ch];
  }
  double &at(int r, int c, int ch) {
    return data[(static_cast<size_t>(r) * w + c) * 3 + ch];
  }

  // max-channel distance between two pixels
  double chebyshev(int r1, int c1, int r2, int c2) const;

  std::vector<uint8_t> to_u8() const;
  static Image from_u8(int h, int w, const std::vector<uint8_t> &rgb);
};

} // namespace ovd

#endif
