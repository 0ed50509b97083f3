#ifndef OVD_RPN_HPP
#define OVD_RPN_HPP

#include <functional>
#include <string>
#include <vector>

#include "ovd/geometry.hpp"
#include "ovd/nn.hpp"
#include "ovd/stubs.hpp"

namespace ovd::rpn {

struct AnchorConfig {
  std::vector<double> level0_sizes{8.0, 16.0, 32.0};
  std::vector<double> level1_sizes{40.0, 64.0, 96.0};

  int per_cell() const { return static_cast<int>(level0_sizes.size()); }
};

struct AnchorSet {
  std::vector<geom::Box> anchors; // level 0 cells row-major, then level 1
  int level0_count = 0;
  int per_cell = 0;
};

// Square anchors centered on pyramid cells (stride 16 and stride 32).
AnchorSet build_anchors(int img_h, int img_w, const AnchorConfig &cfg);

// Standard (dx,dy,dw,dh) box parameterization.
std::array<double, 4> encode_delta(const geom::Box &anchor, const geom::Box &gt);
geom::Box decode_delta(const geom::Box &anchor, const double *delta, int img_h,
                       int img_w);

struct RpnOutput {
  ag::Var logits; // [A, 1]
  ag::Var deltas; // [A, 4]
};

// Two-level head over the fused token map: identity at stride 16 plus a
// strided conv down to stride 32, shared 3x3 conv tower, 1x1 objectness
// and delta projections.
class RpnHead {
public:
  RpnHead() = default;
  RpnHead(nn::ParamRegistry &reg, int dim, int anchors_per_cell);

  RpnOutput forward(const ag::Var &features, int gh, int gw) const;

private:
  int dim_ = 0, per_cell_ = 0;
  ag::Var down_w_, down_b_;
  ag::Var conv_w_, conv_b_;
  ag::Var obj_w_, obj_b_;
  ag::Var delta_w_, delta_b_;

  void head_level(const ag::Var &chw, std::vector<ag::Var> &logits,
                  std::vector<ag::Var> &deltas) const;
};

struct ProposeConfig {
  int pre_nms_k = 200;
  int post_nms_k = 100;
  double nms_thr = 0.7;
};

std::vector<geom::Proposal> rpn_propose(const Tensor &logits, const Tensor &deltas,
                                        const AnchorSet &anchors, int img_h,
                                        int img_w, const ProposeConfig &cfg);

struct AnchorAssignment {
  std::vector<int> labels;      // 1 positive, 0 negative, -1 ignore
  std::vector<int> matched_gt;  // index into gts, -1 when unmatched
};

AnchorAssignment assign_anchors(const AnchorSet &anchors,
                                const std::vector<geom::Box> &gts,
                                double pos_iou = 0.7, double neg_iou = 0.3);

struct RpnLoss {
  ag::Var total;
  double objectness = 0.0;
  double regression = 0.0;
};

RpnLoss rpn_loss(const RpnOutput &out, const AnchorSet &anchors,
                 const std::vector<geom::Box> &gts, double pos_iou = 0.7,
                 double neg_iou = 0.3, double smoothl1_beta = 1.0);

struct SegProposalConfig {
  int grid_n = 32;
  int min_area = 16;
  double max_area_frac = 0.9;
};

// Automatic mask generation: point-grid prompts, area filtering, exact-box
// de-duplication. Output sorted by score descending.
std::vector<geom::Proposal> segmenter_proposals(const stubs::OracleSegmenter &seg,
                                                const Image &img,
                                                const SegProposalConfig &cfg);

enum class ProposalMode { RpnOnly, SegOnly, OpenSet };

ProposalMode proposal_mode_from_name(const std::string &name);
const char *proposal_mode_name(ProposalMode m);

struct OpenSetConfig {
  ProposalMode mode = ProposalMode::OpenSet;
  SegProposalConfig seg;           // open-set path
  int seg_only_grid = 64;          // seg-only ablation path
  double seg_only_nms = 0.95;
  double merge_threshold = 0.7;
};

// seg_fn(grid_n) must run the segmenter pipeline at the given grid density.
std::vector<geom::Proposal> open_set_propose(
    const std::vector<geom::Proposal> &rpn_props,
    const std::function<std::vector<geom::Proposal>(int)> &seg_fn,
    const OpenSetConfig &cfg);

} // namespace ovd::rpn

#endif
