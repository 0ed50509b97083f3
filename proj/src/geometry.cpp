#include "ovd/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "json.hpp"

namespace ovd::geom {

bool Box::valid() const {
  return std::isfinite(x1) && std::isfinite(y1) && std::isfinite(x2) &&
         std::isfinite(y2) && x1 < x2 && y1 < y2;
}

Box make_box(double x1, double y1, double x2, double y2) {
  Box b{x1, y1, x2, y2};
  if (!b.valid()) throw Error("invalid box: requires finite coords and x1<x2, y1<y2");
  return b;
}

int64_t BinaryMask::area() const {
  int64_t n = 0;
  for (uint8_t v : data) n += (v != 0);
  return n;
}

const char *source_name(Source s) {
  return s == Source::RPN ? "RPN" : "SEGMENTER";
}

Source source_from_name(const std::string &name) {
  if (name == "RPN") return Source::RPN;
  if (name == "SEGMENTER") return Source::SEGMENTER;
  throw Error("unknown proposal source: " + name);
}

double iou(const Box &a, const Box &b) {
  double ix = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  double iy = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (ix <= 0.0 || iy <= 0.0) return 0.0;
  double inter = ix * iy;
  return inter / (a.area() + b.area() - inter);
}

double mask_iou(const BinaryMask &a, const BinaryMask &b) {
  if (a.height != b.height || a.width != b.width)
    throw ShapeError("mask_iou: dimension mismatch");
  int64_t inter = 0, uni = 0;
  for (size_t i = 0; i < a.data.size(); ++i) {
    bool av = a.data[i] != 0, bv = b.data[i] != 0;
    inter += (av && bv);
    uni += (av || bv);
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

namespace {
std::vector<size_t> score_order(const std::vector<Proposal> &ps) {
  std::vector<size_t> idx(ps.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](size_t a, size_t b) {
    return ps[a].score > ps[b].score; // stable: ties keep input order
  });
  return idx;
}
} // namespace

std::vector<Proposal> nms(const std::vector<Proposal> &proposals, double threshold) {
  if (!(threshold > 0.0 && threshold <= 1.0))
    throw Error("nms: threshold must be in (0,1]");
  std::vector<Proposal> kept;
  for (size_t i : score_order(proposals)) {
    bool suppressed = false;
    for (const Proposal &k : kept) {
      if (iou(proposals[i].box, k.box) > threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(proposals[i]);
  }
  return kept;
}

std::vector<Proposal> merge_open_set(const std::vector<Proposal> &rpn,
                                     const std::vector<Proposal> &seg,
                                     double threshold) {
  std::vector<Proposal> survivors;
  for (const Proposal &s : seg) {
    bool overlaps = false;
    for (const Proposal &r : rpn) {
      if (iou(s.box, r.box) > threshold) {
        overlaps = true;
        break;
      }
    }
    if (!overlaps) survivors.push_back(s);
  }
  std::vector<Proposal> out = rpn;
  for (const Proposal &s : nms(survivors, threshold)) out.push_back(s);
  return out;
}

Box mask_to_box(const BinaryMask &m) {
  int rmin = m.height, rmax = -1, cmin = m.width, cmax = -1;
  for (int r = 0; r < m.height; ++r)
    for (int c = 0; c < m.width; ++c)
      if (m.at(r, c)) {
        rmin = std::min(rmin, r);
        rmax = std::max(rmax, r);
        cmin = std::min(cmin, c);
        cmax = std::max(cmax, c);
      }
  if (rmax < 0) throw EmptyMaskError();
  return Box{static_cast<double>(cmin), static_cast<double>(rmin),
             static_cast<double>(cmax + 1), static_cast<double>(rmax + 1)};
}

BinaryMask box_to_mask(const Box &b, int height, int width) {
  BinaryMask m(height, width);
  int r0 = std::max(0, static_cast<int>(std::floor(b.y1)));
  int r1 = std::min(height, static_cast<int>(std::ceil(b.y2)));
  int c0 = std::max(0, static_cast<int>(std::floor(b.x1)));
  int c1 = std::min(width, static_cast<int>(std::ceil(b.x2)));
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c) m.set(r, c, true);
  return m;
}

std::vector<std::array<double, 2>> point_grid(int n, int height, int width) {
  if (n < 1) throw Error("point_grid: n must be >= 1");
  std::vector<std::array<double, 2>> pts;
  pts.reserve(static_cast<size_t>(n) * n);
  for (int j = 0; j < n; ++j)
    for (int i = 0; i < n; ++i)
      pts.push_back({(i + 0.5) * width / n, (j + 0.5) * height / n});
  return pts;
}

std::string proposal_to_jsonl(const Proposal &p) {
  nlohmann::json j{{"x1", p.box.x1}, {"y1", p.box.y1}, {"x2", p.box.x2},
                   {"y2", p.box.y2}, {"score", p.score},
                   {"source", source_name(p.source)}};
  return j.dump();
}

Proposal proposal_from_jsonl(const std::string &line) {
  auto j = nlohmann::json::parse(line);
  Proposal p;
  p.box = make_box(j.at("x1").get<double>(), j.at("y1").get<double>(),
                   j.at("x2").get<double>(), j.at("y2").get<double>());
  p.score = j.at("score").get<double>();
  p.source = source_from_name(j.at("source").get<std::string>());
  return p;
}

void save_proposals_jsonl(const std::string &path, const std::vector<Proposal> &ps) {
  std::ofstream f(path);
  if (!f) throw Error("cannot open for write: " + path);
  for (const auto &p : ps) f << proposal_to_jsonl(p) << "\n";
}

std::vector<Proposal> load_proposals_jsonl(const std::string &path) {
  std::ifstream f(path);
  if (!f) throw Error("cannot open: " + path);
  std::vector<Proposal> out;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    out.push_back(proposal_from_jsonl(line));
  }
  return out;
}

} // namespace ovd::geom
