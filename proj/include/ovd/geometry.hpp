#ifndef OVD_GEOMETRY_HPP
#define OVD_GEOMETRY_HPP

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "ovd/errors.hpp"

namespace ovd::geom {

// Axis-aligned box in continuous pixel coordinates, origin top-left,
// half-open convention for mask conversion (x2,y2 exclusive).
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double w() const { return x2 - x1; }
  double h() const { return y2 - y1; }
  double area() const { return w() * h(); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  bool valid() const;
};

Box make_box(double x1, double y1, double x2, double y2); // throws on invalid

struct BinaryMask {
  int height = 0, width = 0;
  std::vector<uint8_t> data; // row-major, height*width

  BinaryMask() = default;
  BinaryMask(int h, int w) : height(h), width(w), data(static_cast<size_t>(h) * w, 0) {}

  bool at(int r, int c) const { return data[static_cast<size_t>(r) * width + c] != 0; }
  void set(int r, int c, bool v) { data[static_cast<size_t>(r) * width + c] = v ? 1 : 0; }
  int64_t area() const;
  bool empty() const { return area() == 0; }
};

enum class Source { RPN, SEGMENTER };

const char *source_name(Source s);
Source source_from_name(const std::string &name);

struct Proposal {
  Box box;
  double score = 0.0;
  Source source = Source::RPN;
};

double iou(const Box &a, const Box &b);
double mask_iou(const BinaryMask &a, const BinaryMask &b);

// Greedy descending-score suppression. Kept set has no pair with IoU
// strictly above the threshold; ties in score break by input index.
std::vector<Proposal> nms(const std::vector<Proposal> &proposals, double threshold);

// Reference-based fusion: every rpn proposal is kept unchanged; a seg
// proposal survives iff IoU <= threshold against every rpn box, then the
// survivors are de-duplicated among themselves with nms at the same
// threshold. Scores are never compared across the two sources.
std::vector<Proposal> merge_open_set(const std::vector<Proposal> &rpn,
                                     const std::vector<Proposal> &seg,
                                     double threshold);

Box mask_to_box(const BinaryMask &m); // EmptyMaskError on all-false mask
BinaryMask box_to_mask(const Box &b, int height, int width);

// n x n points at x=(i+0.5)*width/n, y=(j+0.5)*height/n, row-major.
std::vector<std::array<double, 2>> point_grid(int n, int height, int width);

// JSON-lines {x1,y1,x2,y2,score,source}
std::string proposal_to_jsonl(const Proposal &p);
Proposal proposal_from_jsonl(const std::string &line);
void save_proposals_jsonl(const std::string &path, const std::vector<Proposal> &ps);
std::vector<Proposal> load_proposals_jsonl(const std::string &path);

} // namespace ovd::geom

#endif
