#include "ovd/image.hpp"

#include <algorithm>
#include <cmath>

namespace ovd {

double Image::chebyshev(int r1, int c1, int r2, int c2) const {
  double d = 0.0;
  for (int ch = 0; ch < 3; ++ch)
    d = std::max(d, std::abs(at(r1, c1, ch) - at(r2, c2, ch)));
  return d;
}

std::vector<uint8_t> Image::to_u8() const {
  std::vector<uint8_t> out(data.size());
  for (size_t i = 0; i < data.size(); ++i) {
    double v = std::clamp(data[i], 0.0, 1.0);
    out[i] = static_cast<uint8_t>(std::lround(v * 255.0));
  }
  return out;
}

Image Image::from_u8(int h, int w, const std::vector<uint8_t> &rgb) {
  Image img(h, w);
  for (size_t i = 0; i < img.data.size(); ++i) img.data[i] = rgb[i] / 255.0;
  return img;
}

} // namespace ovd
