#include "ovd/io.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <zlib.h>

namespace ovd::io {

namespace {

void put_u32be(std::vector<uint8_t> &out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

uint32_t get_u32be(const uint8_t *p) {
  return (static_cast<uint32_t>(p[0]) << 24) | (static_cast<uint32_t>(p[1]) << 16) |
         (static_cast<uint32_t>(p[2]) << 8) | static_cast<uint32_t>(p[3]);
}

void write_chunk(std::vector<uint8_t> &out, const char type[4],
                 const std::vector<uint8_t> &payload) {
  put_u32be(out, static_cast<uint32_t>(payload.size()));
  size_t start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), payload.begin(), payload.end());
  uint32_t crc = static_cast<uint32_t>(
      crc32(0, out.data() + start, static_cast<uInt>(out.size() - start)));
  put_u32be(out, crc);
}

int paeth(int a, int b, int c) {
  int p = a + b - c;
  int pa = std::abs(p - a), pb = std::abs(p - b), pc = std::abs(p - c);
  if (pa <= pb && pa <= pc) return a;
  if (pb <= pc) return b;
  return c;
}

} // namespace

void save_png(const std::string &path, const Image &img) {
  const int h = img.h, w = img.w;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (static_cast<size_t>(w) * 3 + 1));
  std::vector<uint8_t> rgb = img.to_u8();
  for (int r = 0; r < h; ++r) {
    size_t row = static_cast<size_t>(r) * (static_cast<size_t>(w) * 3 + 1);
    raw[row] = 0; // filter: none
    std::memcpy(&raw[row + 1], &rgb[static_cast<size_t>(r) * w * 3],
                static_cast<size_t>(w) * 3);
  }
  uLongf bound = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> compressed(bound);
  if (compress2(compressed.data(), &bound, raw.data(),
                static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw Error("png: deflate failed");
  compressed.resize(bound);

  std::vector<uint8_t> out;
  const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  out.insert(out.end(), sig, sig + 8);
  std::vector<uint8_t> ihdr;
  put_u32be(ihdr, static_cast<uint32_t>(w));
  put_u32be(ihdr, static_cast<uint32_t>(h));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(2);  // color type RGB
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  write_chunk(out, "IHDR", ihdr);
  write_chunk(out, "IDAT", compressed);
  write_chunk(out, "IEND", {});

  write_file_atomic(path, std::string(out.begin(), out.end()));
}

Image load_png(const std::string &path) {
  std::string bytes = read_file(path);
  const uint8_t *p = reinterpret_cast<const uint8_t *>(bytes.data());
  size_t n = bytes.size();
  const uint8_t sig[8] = {0x89, 'P', 'N', 'G', 0x0d, 0x0a, 0x1a, 0x0a};
  if (n < 8 || std::memcmp(p, sig, 8) != 0) throw Error("png: bad signature: " + path);

  int w = 0, h = 0, channels = 0;
  std::vector<uint8_t> idat;
  size_t pos = 8;
  while (pos + 12 <= n) {
    uint32_t len = get_u32be(p + pos);
    const char *type = reinterpret_cast<const char *>(p + pos + 4);
    const uint8_t *payload = p + pos + 8;
    if (pos + 12 + len > n) throw Error("png: truncated chunk");
    if (std::memcmp(type, "IHDR", 4) == 0) {
      w = static_cast<int>(get_u32be(payload));
      h = static_cast<int>(get_u32be(payload + 4));
      int depth = payload[8], color = payload[9], interlace = payload[12];
      if (depth != 8 || (color != 2 && color != 6) || interlace != 0)
        throw Error("png: unsupported format (need 8-bit RGB/RGBA, no interlace)");
      channels = (color == 2) ? 3 : 4;
    } else if (std::memcmp(type, "IDAT", 4) == 0) {
      idat.insert(idat.end(), payload, payload + len);
    } else if (std::memcmp(type, "IEND", 4) == 0) {
      break;
    }
    pos += 12 + len;
  }
  if (w <= 0 || h <= 0 || idat.empty()) throw Error("png: missing image data");

  size_t stride = static_cast<size_t>(w) * channels;
  std::vector<uint8_t> raw(static_cast<size_t>(h) * (stride + 1));
  uLongf raw_len = static_cast<uLongf>(raw.size());
  if (uncompress(raw.data(), &raw_len, idat.data(),
                 static_cast<uLong>(idat.size())) != Z_OK ||
      raw_len != raw.size())
    throw Error("png: inflate failed");

  // unfilter in place into a separate pixel buffer
  std::vector<uint8_t> pix(static_cast<size_t>(h) * stride);
  const int bpp = channels;
  for (int r = 0; r < h; ++r) {
    uint8_t filter = raw[static_cast<size_t>(r) * (stride + 1)];
    const uint8_t *src = &raw[static_cast<size_t>(r) * (stride + 1) + 1];
    uint8_t *dst = &pix[static_cast<size_t>(r) * stride];
    const uint8_t *up = r > 0 ? &pix[static_cast<size_t>(r - 1) * stride] : nullptr;
    for (size_t i = 0; i < stride; ++i) {
      int a = i >= static_cast<size_t>(bpp) ? dst[i - bpp] : 0;
      int b = up ? up[i] : 0;
      int c = (up && i >= static_cast<size_t>(bpp)) ? up[i - bpp] : 0;
      int x = src[i];
      switch (filter) {
        case 0: dst[i] = static_cast<uint8_t>(x); break;
        case 1: dst[i] = static_cast<uint8_t>(x + a); break;
        case 2: dst[i] = static_cast<uint8_t>(x + b); break;
        case 3: dst[i] = static_cast<uint8_t>(x + (a + b) / 2); break;
        case 4: dst[i] = static_cast<uint8_t>(x + paeth(a, b, c)); break;
        default: throw Error("png: unknown filter type");
      }
    }
  }

  Image img(h, w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c)
      for (int ch = 0; ch < 3; ++ch)
        img.at(r, c, ch) =
            pix[static_cast<size_t>(r) * stride + static_cast<size_t>(c) * channels + ch] / 255.0;
  return img;
}

std::vector<int64_t> rle_encode(const geom::BinaryMask &m) {
  std::vector<int64_t> counts;
  int64_t run = 0;
  uint8_t cur = 0; // runs alternate starting from zeros
  for (size_t i = 0; i < m.data.size(); ++i) {
    uint8_t v = m.data[i] ? 1 : 0;
    if (v == cur) {
      ++run;
    } else {
      counts.push_back(run);
      cur = v;
      run = 1;
    }
  }
  counts.push_back(run);
  return counts;
}

geom::BinaryMask rle_decode(int height, int width, const std::vector<int64_t> &counts) {
  geom::BinaryMask m(height, width);
  size_t pos = 0;
  uint8_t cur = 0;
  for (int64_t c : counts) {
    if (c < 0 || pos + static_cast<size_t>(c) > m.data.size())
      throw Error("rle: counts exceed mask size");
    for (int64_t i = 0; i < c; ++i) m.data[pos++] = cur;
    cur = 1 - cur;
  }
  if (pos != m.data.size()) throw Error("rle: counts do not cover mask");
  return m;
}

void write_file_atomic(const std::string &path, const std::string &contents) {
  std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw Error("cannot open for write: " + tmp);
    f.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!f) throw Error("write failed: " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0)
    throw Error("rename failed: " + tmp + " -> " + path);
}

std::string read_file(const std::string &path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error("cannot open: " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return s;
}

} // namespace ovd::io
