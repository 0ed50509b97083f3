#ifndef OVD_ROI_HEAD_HPP
#define OVD_ROI_HEAD_HPP

#include <optional>
#include <string>
#include <vector>

#include "ovd/geometry.hpp"
#include "ovd/nn.hpp"
#include "ovd/rpn.hpp"
#include "ovd/stubs.hpp"

namespace ovd::roi {

// Bilinear pooling of a box to out_size x out_size cells, one sample per
// cell center, over the stride-16 token grid. Returns [out*out, D].
// Degenerate boxes (clipped area below one pixel) set the flag and are
// skipped by callers.
ag::Var roi_align(const ag::Var &features, int gh, int gw, const geom::Box &box,
                  int out_size, int img_h, int img_w, bool *degenerate = nullptr);

// Region-concept similarity: S = (F_B . F_T^T) / temperature. Logits, not
// probabilities.
Tensor similarity(const Tensor &f_b, const Tensor &f_t, double temperature);

// Word-region alignment loss: elementwise sigmoid focal loss over the K x M
// similarity matrix, mean over K*M.
ag::Var alignment_loss(const ag::Var &s, const Tensor &targets, double alpha = 0.25,
                       double gamma_f = 2.0);

struct RegressionResult {
  ag::Var loss; // null when zero_positives
  bool zero_positives = false;
};

RegressionResult regression_loss(const ag::Var &pred_deltas,
                                 const Tensor &target_deltas, double beta = 1.0);

struct Detection {
  geom::Box box;
  Tensor scores; // [M], post-sigmoid
  int label = -1;
  double score = 0.0; // scores[label]
  std::optional<geom::BinaryMask> mask;
  bool mask_empty = false;
};

std::string detection_to_jsonl(const Detection &d,
                               const std::vector<std::string> &concept_names);

struct CascadeConfig {
  int stages = 3;
  std::vector<double> stage_iou{0.5, 0.6, 0.7};
  int out_size = 7;
  int hidden = 128;
  double nms_thr = 0.5;
  int max_det = 100;
  double smoothl1_beta = 1.0;
  double focal_alpha = 0.25;
  double focal_gamma = 2.0;
};

struct StageTrace {
  std::vector<geom::Box> in_boxes;
  ag::Var deltas;  // [K,4]
  ag::Var hidden;  // [K,H]
  std::vector<geom::Box> out_boxes;
};

struct GtBox {
  geom::Box box;
  int concept_id = -1; // index into the batch concept set
};

struct RoiLosses {
  ag::Var total;
  double alignment = 0.0;
  double regression = 0.0;
  int positives = 0;
};

// Cascade refinement with class-agnostic regression and a final linear
// projection to the embedding space for word-region alignment.
class CascadeHead {
public:
  CascadeHead() = default;
  CascadeHead(nn::ParamRegistry &reg, int dim, const CascadeConfig &cfg);

  const CascadeConfig &config() const { return cfg_; }
  ag::Var logit_scale() const { return logit_scale_; }
  double clamped_scale() const;

  std::vector<StageTrace> run_stages(const ag::Var &features, int gh, int gw,
                                     const std::vector<geom::Box> &proposals,
                                     int img_h, int img_w) const;

  // Region embeddings from the final stage hidden states, L2-normalized.
  ag::Var embed(const ag::Var &hidden_last) const;

  RoiLosses losses(const ag::Var &features, int gh, int gw,
                   const std::vector<geom::Box> &rois,
                   const std::vector<GtBox> &gts, int num_concepts, int img_h,
                   int img_w) const;

  // Full second-stage inference: refine, score against the concept matrix
  // (rows unit-norm), class-agnostic NMS, top max_det.
  std::vector<Detection> infer(const ag::Var &features, int gh, int gw,
                               const std::vector<geom::Proposal> &proposals,
                               const Tensor &f_t, int img_h, int img_w) const;

private:
  CascadeConfig cfg_;
  int dim_ = 0;
  struct Stage {
    nn::Linear fc1, fc2, delta;
  };
  std::vector<Stage> stages_;
  nn::Linear embed_;
  ag::Var logit_scale_;

  ag::Var pool_boxes(const ag::Var &features, int gh, int gw,
                     const std::vector<geom::Box> &boxes, int img_h, int img_w) const;
};

// Prompt each detection box to the segmenter; empty masks set the flag and
// leave the detection unchanged.
void boxes_to_masks(const stubs::OracleSegmenter &seg, const Image &img,
                    std::vector<Detection> &dets);

// ROI sampling for training: per-image cap with a positive fraction, IoU
// match at the first-stage threshold.
struct RoiSample {
  std::vector<geom::Box> rois;
};

RoiSample sample_rois(const std::vector<geom::Proposal> &proposals,
                      const std::vector<GtBox> &gts, int per_image,
                      double pos_fraction, double pos_iou, rng::Rng &rng);

} // namespace ovd::roi

#endif
