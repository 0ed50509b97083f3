#include "ovd/rpn.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

namespace ovd::rpn {

AnchorSet build_anchors(int img_h, int img_w, const AnchorConfig &cfg) {
  if (cfg.level0_sizes.size() != cfg.level1_sizes.size())
    throw Error("anchor config: per-cell counts differ between levels");
  AnchorSet set;
  set.per_cell = cfg.per_cell();
  auto add_level = [&](int stride, const std::vector<double> &sizes) {
    int gh = img_h / stride, gw = img_w / stride;
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x) {
        double cx = (x + 0.5) * stride, cy = (y + 0.5) * stride;
        for (double s : sizes)
          set.anchors.push_back(
              geom::Box{cx - s / 2, cy - s / 2, cx + s / 2, cy + s / 2});
      }
  };
  add_level(16, cfg.level0_sizes);
  set.level0_count = static_cast<int>(set.anchors.size());
  add_level(32, cfg.level1_sizes);
  return set;
}

std::array<double, 4> encode_delta(const geom::Box &anchor, const geom::Box &gt) {
  double aw = anchor.w(), ah = anchor.h();
  return {(gt.cx() - anchor.cx()) / aw, (gt.cy() - anchor.cy()) / ah,
          std::log(gt.w() / aw), std::log(gt.h() / ah)};
}

geom::Box decode_delta(const geom::Box &anchor, const double *delta, int img_h,
                       int img_w) {
  double tw = std::clamp(delta[2], -4.0, 4.0);
  double th = std::clamp(delta[3], -4.0, 4.0);
  double cx = anchor.cx() + delta[0] * anchor.w();
  double cy = anchor.cy() + delta[1] * anchor.h();
  double w = anchor.w() * std::exp(tw);
  double h = anchor.h() * std::exp(th);
  geom::Box b{cx - w / 2, cy - h / 2, cx + w / 2, cy + h / 2};
  b.x1 = std::clamp(b.x1, 0.0, static_cast<double>(img_w));
  b.y1 = std::clamp(b.y1, 0.0, static_cast<double>(img_h));
  b.x2 = std::clamp(b.x2, 0.0, static_cast<double>(img_w));
  b.y2 = std::clamp(b.y2, 0.0, static_cast<double>(img_h));
  return b;
}

RpnHead::RpnHead(nn::ParamRegistry &reg, int dim, int anchors_per_cell)
    : dim_(dim), per_cell_(anchors_per_cell) {
  auto he3 = nn::init_normal(std::sqrt(2.0 / (dim * 9.0)));
  auto he1 = nn::init_normal(std::sqrt(2.0 / dim));
  down_w_ = reg.add("rpn.down.w", {dim, dim, 3, 3}, he3);
  down_b_ = reg.add("rpn.down.b", {dim}, nn::init_zeros());
  conv_w_ = reg.add("rpn.conv.w", {dim, dim, 3, 3}, he3);
  conv_b_ = reg.add("rpn.conv.b", {dim}, nn::init_zeros());
  obj_w_ = reg.add("rpn.obj.w", {anchors_per_cell, dim, 1, 1}, he1);
  obj_b_ = reg.add("rpn.obj.b", {anchors_per_cell}, nn::init_zeros());
  delta_w_ = reg.add("rpn.delta.w", {4 * anchors_per_cell, dim, 1, 1}, he1);
  delta_b_ = reg.add("rpn.delta.b", {4 * anchors_per_cell}, nn::init_zeros());
}

void RpnHead::head_level(const ag::Var &chw, std::vector<ag::Var> &logits,
                         std::vector<ag::Var> &deltas) const {
  ag::Var h = ag::relu(ag::conv2d(chw, conv_w_, conv_b_, 1, 1));
  ag::Var obj = ag::conv2d(h, obj_w_, obj_b_, 1, 0);     // [A, gh, gw]
  ag::Var del = ag::conv2d(h, delta_w_, delta_b_, 1, 0); // [4A, gh, gw]
  const int cells = obj->value.dim(1) * obj->value.dim(2);
  logits.push_back(ag::reshape(ag::chw_to_tokens(obj), {cells * per_cell_, 1}));
  deltas.push_back(ag::reshape(ag::chw_to_tokens(del), {cells * per_cell_, 4}));
}

RpnOutput RpnHead::forward(const ag::Var &features, int gh, int gw) const {
  if (features->value.cols() != dim_ || features->value.rows() != gh * gw)
    throw ShapeError("rpn: feature grid mismatch");
  ag::Var p0 = ag::tokens_to_chw(features, gh, gw);
  ag::Var p1 = ag::relu(ag::conv2d(p0, down_w_, down_b_, 2, 1));
  std::vector<ag::Var> logits, deltas;
  head_level(p0, logits, deltas);
  head_level(p1, logits, deltas);
  return {ag::concat_rows(logits), ag::concat_rows(deltas)};
}

std::vector<geom::Proposal> rpn_propose(const Tensor &logits, const Tensor &deltas,
                                        const AnchorSet &anchors, int img_h,
                                        int img_w, const ProposeConfig &cfg) {
  if (cfg.pre_nms_k <= 0 || cfg.post_nms_k <= 0)
    throw Error("rpn_propose: k values must be positive");
  const int A = static_cast<int>(anchors.anchors.size());
  if (logits.numel() != A || deltas.rows() != A)
    throw ShapeError("rpn_propose: output/anchor count mismatch");
  std::vector<int> order(static_cast<size_t>(A));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return logits[a] > logits[b]; });
  if (static_cast<int>(order.size()) > cfg.pre_nms_k) order.resize(cfg.pre_nms_k);

  std::vector<geom::Proposal> cands;
  for (int i : order) {
    geom::Box b = decode_delta(anchors.anchors[static_cast<size_t>(i)],
                               deltas.data() + static_cast<int64_t>(i) * 4, img_h,
                               img_w);
    if (!b.valid()) continue;
    double score = 1.0 / (1.0 + std::exp(-logits[i]));
    cands.push_back({b, score, geom::Source::RPN});
  }
  std::vector<geom::Proposal> kept = geom::nms(cands, cfg.nms_thr);
  if (static_cast<int>(kept.size()) > cfg.post_nms_k) kept.resize(cfg.post_nms_k);
  return kept;
}

AnchorAssignment assign_anchors(const AnchorSet &anchors,
                                const std::vector<geom::Box> &gts, double pos_iou,
                                double neg_iou) {
  const size_t A = anchors.anchors.size();
  AnchorAssignment out;
  out.labels.assign(A, 0);
  out.matched_gt.assign(A, -1);
  if (gts.empty()) return out;

  std::vector<double> best_gt_iou(gts.size(), 0.0);
  std::vector<int> best_gt_anchor(gts.size(), -1);
  for (size_t a = 0; a < A; ++a) {
    double best = 0.0;
    int best_g = -1;
    for (size_t g = 0; g < gts.size(); ++g) {
      double v = geom::iou(anchors.anchors[a], gts[g]);
      if (v > best) {
        best = v;
        best_g = static_cast<int>(g);
      }
      if (v > best_gt_iou[g]) {
        best_gt_iou[g] = v;
        best_gt_anchor[g] = static_cast<int>(a);
      }
    }
    if (best >= pos_iou) {
      out.labels[a] = 1;
      out.matched_gt[a] = best_g;
    } else if (best >= neg_iou) {
      out.labels[a] = -1; // ignore band
      out.matched_gt[a] = best_g;
    }
  }
  // every GT claims its best-overlapping anchor even below the threshold
  for (size_t g = 0; g < gts.size(); ++g) {
    if (best_gt_anchor[g] >= 0 && best_gt_iou[g] > 0.0) {
      out.labels[static_cast<size_t>(best_gt_anchor[g])] = 1;
      out.matched_gt[static_cast<size_t>(best_gt_anchor[g])] = static_cast<int>(g);
    }
  }
  return out;
}

RpnLoss rpn_loss(const RpnOutput &out, const AnchorSet &anchors,
                 const std::vector<geom::Box> &gts, double pos_iou, double neg_iou,
                 double smoothl1_beta) {
  const int A = static_cast<int>(anchors.anchors.size());
  AnchorAssignment assign = assign_anchors(anchors, gts, pos_iou, neg_iou);
  Tensor targets({A, 1});
  Tensor mask({A, 1});
  std::vector<int> pos;
  for (int a = 0; a < A; ++a) {
    if (assign.labels[static_cast<size_t>(a)] >= 0) {
      mask.at(a, 0) = 1.0;
      targets.at(a, 0) = assign.labels[static_cast<size_t>(a)] == 1 ? 1.0 : 0.0;
    }
    if (assign.labels[static_cast<size_t>(a)] == 1) pos.push_back(a);
  }
  RpnLoss loss;
  ag::Var obj = ag::bce_logits_mean(out.logits, targets, mask);
  loss.objectness = obj->value[0];
  if (!pos.empty()) {
    Tensor reg_targets({static_cast<int>(pos.size()), 4});
    for (size_t i = 0; i < pos.size(); ++i) {
      auto d = encode_delta(
          anchors.anchors[static_cast<size_t>(pos[i])],
          gts[static_cast<size_t>(assign.matched_gt[static_cast<size_t>(pos[i])])]);
      for (int k = 0; k < 4; ++k) reg_targets.at(static_cast<int>(i), k) = d[k];
    }
    ag::Var reg = ag::smooth_l1_mean(ag::gather_rows(out.deltas, pos), reg_targets,
                                     smoothl1_beta);
    loss.regression = reg->value[0];
    loss.total = ag::add(obj, reg);
  } else {
    loss.total = obj;
  }
  return loss;
}

std::vector<geom::Proposal> segmenter_proposals(const stubs::OracleSegmenter &seg,
                                                const Image &img,
                                                const SegProposalConfig &cfg) {
  if (cfg.grid_n < 1) throw Error("segmenter_proposals: grid_n must be >= 1");
  auto pts = geom::point_grid(cfg.grid_n, img.h, img.w);
  std::vector<int> comp_id(static_cast<size_t>(img.h) * img.w, -1);
  struct Comp {
    int seed_r, seed_c;
  };
  std::vector<Comp> comps;
  const double max_area = cfg.max_area_frac * img.h * img.w;

  std::map<std::array<double, 4>, geom::Proposal> dedup;
  for (const auto &p : pts) {
    int c = std::clamp(static_cast<int>(std::floor(p[0])), 0, img.w - 1);
    int r = std::clamp(static_cast<int>(std::floor(p[1])), 0, img.h - 1);
    size_t pix = static_cast<size_t>(r) * img.w + c;
    if (comp_id[pix] >= 0) {
      // same component and near-identical seed color: nothing new to add
      const Comp &cc = comps[static_cast<size_t>(comp_id[pix])];
      if (img.chebyshev(r, c, cc.seed_r, cc.seed_c) <= 0.5 * seg.tolerance()) continue;
    }
    auto res = seg.segment_point(img, p[0], p[1]);
    int id = static_cast<int>(comps.size());
    comps.push_back({r, c});
    for (int rr = 0; rr < img.h; ++rr)
      for (int ccol = 0; ccol < img.w; ++ccol)
        if (res.mask.at(rr, ccol))
          comp_id[static_cast<size_t>(rr) * img.w + ccol] = id;
    int64_t area = res.mask.area();
    if (area < cfg.min_area || static_cast<double>(area) > max_area) continue;
    geom::Box b = geom::mask_to_box(res.mask);
    std::array<double, 4> key{b.x1, b.y1, b.x2, b.y2};
    auto it = dedup.find(key);
    if (it == dedup.end() || res.score > it->second.score)
      dedup[key] = {b, res.score, geom::Source::SEGMENTER};
  }
  std::vector<geom::Proposal> out;
  out.reserve(dedup.size());
  for (auto &kv : dedup) out.push_back(kv.second);
  std::stable_sort(out.begin(), out.end(),
                   [](const geom::Proposal &a, const geom::Proposal &b) {
                     return a.score > b.score;
                   });
  return out;
}

ProposalMode proposal_mode_from_name(const std::string &name) {
  if (name == "rpn") return ProposalMode::RpnOnly;
  if (name == "seg") return ProposalMode::SegOnly;
  if (name == "open") return ProposalMode::OpenSet;
  throw Error("unknown proposal mode: " + name);
}

const char *proposal_mode_name(ProposalMode m) {
  switch (m) {
    case ProposalMode::RpnOnly: return "rpn";
    case ProposalMode::SegOnly: return "seg";
    default: return "open";
  }
}

std::vector<geom::Proposal> open_set_propose(
    const std::vector<geom::Proposal> &rpn_props,
    const std::function<std::vector<geom::Proposal>(int)> &seg_fn,
    const OpenSetConfig &cfg) {
  switch (cfg.mode) {
    case ProposalMode::RpnOnly:
      return rpn_props;
    case ProposalMode::SegOnly:
      return geom::nms(seg_fn(cfg.seg_only_grid), cfg.seg_only_nms);
    default:
      return geom::merge_open_set(rpn_props, seg_fn(cfg.seg.grid_n),
                                  cfg.merge_threshold);
  }
}

} // namespace ovd::rpn
