#ifndef OVD_IO_HPP
#define OVD_IO_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "ovd/geometry.hpp"
#include "ovd/image.hpp"

namespace ovd::io {

// Minimal PNG codec (8-bit RGB/RGBA, non-interlaced) on top of zlib.
void save_png(const std::string &path, const Image &img);
Image load_png(const std::string &path);

// Uncompressed run-length encoding, row-major, starting with a run of
// zeros (possibly length 0).
std::vector<int64_t> rle_encode(const geom::BinaryMask &m);
geom::BinaryMask rle_decode(int height, int width, const std::vector<int64_t> &counts);

// Atomic file write: temp + rename.
void write_file_atomic(const std::string &path, const std::string &contents);
std::string read_file(const std::string &path);

} // namespace ovd::io

#endif
