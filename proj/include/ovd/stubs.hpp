#ifndef OVD_STUBS_HPP
#define OVD_STUBS_HPP

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "ovd/geometry.hpp"
#include "ovd/image.hpp"
#include "ovd/nn.hpp"

namespace ovd::stubs {

// D-dimensional token grid over the stride-16 patch lattice.
struct FeatureMap {
  Tensor tokens; // [grid_h*grid_w, D]
  int grid_h = 0, grid_w = 0;

  int dim() const { return tokens.cols(); }
};

// One FeatureMap per backbone block (the global-attention outputs).
using BlockFeatures = std::array<FeatureMap, 4>;

constexpr int kPatch = 16;

void check_image_dims(const Image &img); // ShapeError unless divisible by 16

// Flattens 16x16x3 patches row-major into [T, 768].
Tensor extract_patches(const Image &img);

// Frozen randomly initialized ViT-style encoder: patch embedding plus 8
// pre-norm transformer layers grouped into 4 blocks of 2; the last layer
// of each block is exposed.
class SamEncoderStub {
public:
  SamEncoderStub() = default;
  SamEncoderStub(nn::ParamRegistry &reg, int dim, int heads, int tokens_per_side);

  Tensor patch_tokens(const Image &img) const; // projection + positional term
  BlockFeatures forward(const Image &img) const;

  int dim() const { return dim_; }

private:
  int dim_ = 0, heads_ = 0, side_ = 0;
  ag::Var patch_w_, patch_b_, pos_;
  struct Layer {
    nn::LayerNorm norm1, norm2;
    nn::MultiheadAttention attn;
    nn::Ffn ffn;
  };
  std::vector<Layer> layers_;
};

// Frozen 4-layer stride-16 convolutional feature extractor with a linear
// projection to D and a parameter-free output normalization. Sees only
// pixels.
class ClipVisualStub {
public:
  ClipVisualStub() = default;
  ClipVisualStub(nn::ParamRegistry &reg, int dim);

  FeatureMap forward(const Image &img) const;

private:
  int dim_ = 0;
  std::array<ag::Var, 4> conv_w_, conv_b_;
  ag::Var proj_w_, proj_b_;
};

// Deterministic seeded-hash text tower. A concept embeds as the normalized
// sum of its per-word vectors, so multi-word concepts are linearly related
// to their factors.
class TextEmbedder {
public:
  TextEmbedder() = default;
  TextEmbedder(uint64_t seed, int dim, int templates)
      : seed_(seed), dim_(dim), templates_(templates) {}

  Tensor embed(const std::string &concept_name, int template_id) const; // unit [D]
  Tensor ensemble(const std::string &concept_name) const;

  int templates() const { return templates_; }
  int dim() const { return dim_; }
  uint64_t seed() const { return seed_; }
  int64_t calls() const { return calls_; }
  void reset_calls() const { calls_ = 0; }

private:
  uint64_t seed_ = 0;
  int dim_ = 0, templates_ = 0;
  mutable int64_t calls_ = 0;
};

// Mean-then-renormalize; DegenerateEnsembleError when the mean collapses.
Tensor ensemble_mean(const std::vector<Tensor> &embeddings);

struct SegmentResult {
  geom::BinaryMask mask;
  double score = 0.0; // stability stub
};

// Promptable segmenter stand-in: connected component of near-uniform color
// around the prompt (flood fill with Chebyshev RGB tolerance).
class OracleSegmenter {
public:
  explicit OracleSegmenter(double tolerance = 0.08) : tol_(tolerance) {}

  SegmentResult segment_point(const Image &img, double x, double y) const;
  geom::BinaryMask segment_box(const Image &img, const geom::Box &box) const;

  double tolerance() const { return tol_; }

private:
  geom::BinaryMask flood(const Image &img, int sr, int sc) const;
  double tol_;
};

} // namespace ovd::stubs

#endif
