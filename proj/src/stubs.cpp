#include "ovd/stubs.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <sstream>

namespace ovd::stubs {

using ag::Var;

void check_image_dims(const Image &img) {
  if (img.h <= 0 || img.w <= 0 || img.h % kPatch != 0 || img.w % kPatch != 0) {
    std::ostringstream os;
    os << "image dims " << img.h << "x" << img.w << " not divisible by " << kPatch;
    throw ShapeError(os.str());
  }
}

Tensor extract_patches(const Image &img) {
  check_image_dims(img);
  const int gh = img.h / kPatch, gw = img.w / kPatch;
  Tensor out({gh * gw, kPatch * kPatch * 3});
  for (int py = 0; py < gh; ++py)
    for (int px = 0; px < gw; ++px) {
      int t = py * gw + px;
      int i = 0;
      for (int r = 0; r < kPatch; ++r)
        for (int c = 0; c < kPatch; ++c)
          for (int ch = 0; ch < 3; ++ch)
            out.at(t, i++) = img.at(py * kPatch + r, px * kPatch + c, ch);
    }
  return out;
}

SamEncoderStub::SamEncoderStub(nn::ParamRegistry &reg, int dim, int heads,
                               int tokens_per_side)
    : dim_(dim), heads_(heads), side_(tokens_per_side) {
  const int pdim = kPatch * kPatch * 3;
  patch_w_ = reg.add("sam.patch.w", {pdim, dim},
                     nn::init_normal(1.0 / std::sqrt(static_cast<double>(pdim))), true);
  patch_b_ = reg.add("sam.patch.b", {dim}, nn::init_zeros(), true);
  pos_ = reg.add("sam.pos", {side_ * side_, dim}, nn::init_normal(0.02), true);
  layers_.reserve(8);
  for (int l = 0; l < 8; ++l) {
    std::string base = "sam.layer" + std::to_string(l);
    Layer lay;
    lay.norm1 = nn::LayerNorm(reg, base + ".norm1", dim, true);
    lay.attn = nn::MultiheadAttention(reg, base + ".attn", dim, heads,
                                      nn::AttnKind::Dense, false, true);
    lay.norm2 = nn::LayerNorm(reg, base + ".norm2", dim, true);
    lay.ffn = nn::Ffn(reg, base + ".ffn", dim, 4 * dim, false, true);
    layers_.push_back(std::move(lay));
  }
}

Tensor SamEncoderStub::patch_tokens(const Image &img) const {
  check_image_dims(img);
  if (img.h / kPatch != side_ || img.w / kPatch != side_)
    throw ShapeError("sam stub: image grid does not match configured size");
  Tensor proj = matmul(extract_patches(img), patch_w_->value);
  for (int t = 0; t < proj.rows(); ++t)
    for (int d = 0; d < proj.cols(); ++d)
      proj.at(t, d) += patch_b_->value[d] + pos_->value.at(t, d);
  return proj;
}

BlockFeatures SamEncoderStub::forward(const Image &img) const {
  const int gh = img.h / kPatch, gw = img.w / kPatch;
  Var x = ag::constant(patch_tokens(img));
  BlockFeatures blocks;
  int out_i = 0;
  for (size_t l = 0; l < layers_.size(); ++l) {
    const Layer &lay = layers_[l];
    Var normed = lay.norm1.forward(x);
    x = ag::add(x, lay.attn.forward(normed, normed, gh, gw));
    x = ag::add(x, lay.ffn.forward(lay.norm2.forward(x)));
    if (l % 2 == 1) blocks[static_cast<size_t>(out_i++)] = {x->value, gh, gw};
  }
  return blocks;
}

ClipVisualStub::ClipVisualStub(nn::ParamRegistry &reg, int dim) : dim_(dim) {
  const int chans[5] = {3, 16, 32, 64, 64};
  for (int l = 0; l < 4; ++l) {
    double he = std::sqrt(2.0 / (chans[l] * 9.0));
    conv_w_[static_cast<size_t>(l)] =
        reg.add("clip.conv" + std::to_string(l) + ".w",
                {chans[l + 1], chans[l], 3, 3}, nn::init_normal(he), true);
    conv_b_[static_cast<size_t>(l)] = reg.add("clip.conv" + std::to_string(l) + ".b",
                                              {chans[l + 1]}, nn::init_zeros(), true);
  }
  proj_w_ = reg.add("clip.proj.w", {64, dim}, nn::init_xavier(), true);
  proj_b_ = reg.add("clip.proj.b", {dim}, nn::init_zeros(), true);
}

FeatureMap ClipVisualStub::forward(const Image &img) const {
  check_image_dims(img);
  const int gh = img.h / kPatch, gw = img.w / kPatch;
  Tensor chw({3, img.h, img.w});
  for (int c = 0; c < 3; ++c)
    for (int r = 0; r < img.h; ++r)
      for (int cc = 0; cc < img.w; ++cc)
        chw[(static_cast<int64_t>(c) * img.h + r) * img.w + cc] = img.at(r, cc, c);
  Var x = ag::constant(std::move(chw));
  for (int l = 0; l < 4; ++l)
    x = ag::relu(ag::conv2d(x, conv_w_[static_cast<size_t>(l)],
                            conv_b_[static_cast<size_t>(l)], 2, 1));
  Var tokens = ag::chw_to_tokens(x); // [gh*gw, 64]
  Var proj = ag::add_rowvec(ag::matmul(tokens, proj_w_), proj_b_);
  // parameter-free per-token standardization keeps the frozen features at
  // a sane scale for the injector
  Tensor out = proj->value;
  for (int t = 0; t < out.rows(); ++t) {
    double mean = 0.0;
    for (int d = 0; d < out.cols(); ++d) mean += out.at(t, d);
    mean /= out.cols();
    double var = 0.0;
    for (int d = 0; d < out.cols(); ++d) {
      double dd = out.at(t, d) - mean;
      var += dd * dd;
    }
    var /= out.cols();
    double sd = std::sqrt(var + 1e-5);
    for (int d = 0; d < out.cols(); ++d) out.at(t, d) = (out.at(t, d) - mean) / sd;
  }
  return {std::move(out), gh, gw};
}

namespace {
std::vector<std::string> split_words(const std::string &concept_name) {
  std::vector<std::string> words;
  std::istringstream is(concept_name);
  std::string word;
  while (is >> word) words.push_back(word);
  return words;
}
} // namespace

Tensor TextEmbedder::embed(const std::string &concept_name, int template_id) const {
  if (template_id < 0 || template_id >= templates_)
    throw Error("text embed: template_id out of range");
  auto words = split_words(concept_name);
  if (words.empty()) throw InvalidConceptError("empty concept string");
  ++calls_;
  Tensor sum({dim_});
  for (const auto &w : words) {
    rng::Rng r(rng::sub_seed(seed_, w, static_cast<uint64_t>(template_id)));
    for (int d = 0; d < dim_; ++d) sum[d] += r.normal();
  }
  double nn = 0.0;
  for (int d = 0; d < dim_; ++d) nn += sum[d] * sum[d];
  nn = std::sqrt(nn);
  if (nn < 1e-12) throw DegenerateEnsembleError();
  for (int d = 0; d < dim_; ++d) sum[d] /= nn;
  return sum;
}

Tensor TextEmbedder::ensemble(const std::string &concept_name) const {
  std::vector<Tensor> es;
  es.reserve(static_cast<size_t>(templates_));
  for (int t = 0; t < templates_; ++t) es.push_back(embed(concept_name, t));
  return ensemble_mean(es);
}

Tensor ensemble_mean(const std::vector<Tensor> &embeddings) {
  if (embeddings.empty()) throw DegenerateEnsembleError();
  Tensor mean = Tensor::zeros(embeddings.front().shape());
  for (const auto &e : embeddings)
    for (int64_t i = 0; i < mean.numel(); ++i) mean[i] += e[i];
  double nn = 0.0;
  for (int64_t i = 0; i < mean.numel(); ++i) {
    mean[i] /= static_cast<double>(embeddings.size());
    nn += mean[i] * mean[i];
  }
  nn = std::sqrt(nn);
  if (nn < 1e-9) throw DegenerateEnsembleError();
  for (int64_t i = 0; i < mean.numel(); ++i) mean[i] /= nn;
  return mean;
}

geom::BinaryMask OracleSegmenter::flood(const Image &img, int sr, int sc) const {
  geom::BinaryMask mask(img.h, img.w);
  std::deque<std::pair<int, int>> queue;
  queue.emplace_back(sr, sc);
  mask.set(sr, sc, true);
  const int dr[4] = {-1, 1, 0, 0};
  const int dc[4] = {0, 0, -1, 1};
  while (!queue.empty()) {
    auto [r, c] = queue.front();
    queue.pop_front();
    for (int k = 0; k < 4; ++k) {
      int nr = r + dr[k], nc = c + dc[k];
      if (nr < 0 || nr >= img.h || nc < 0 || nc >= img.w || mask.at(nr, nc)) continue;
      if (img.chebyshev(nr, nc, sr, sc) <= tol_) {
        mask.set(nr, nc, true);
        queue.emplace_back(nr, nc);
      }
    }
  }
  return mask;
}

SegmentResult OracleSegmenter::segment_point(const Image &img, double x, double y) const {
  int sc = std::clamp(static_cast<int>(std::floor(x)), 0, img.w - 1);
  int sr = std::clamp(static_cast<int>(std::floor(y)), 0, img.h - 1);
  geom::BinaryMask mask = flood(img, sr, sc);
  int64_t total = 0, stable = 0;
  for (int r = 0; r < img.h; ++r)
    for (int c = 0; c < img.w; ++c)
      if (mask.at(r, c)) {
        ++total;
        if (img.chebyshev(r, c, sr, sc) <= 0.5 * tol_) ++stable;
      }
  double score = total > 0 ? static_cast<double>(stable) / static_cast<double>(total) : 0.0;
  return {std::move(mask), score};
}

geom::BinaryMask OracleSegmenter::segment_box(const Image &img, const geom::Box &box) const {
  double cx = box.cx(), cy = box.cy();
  double qx = 0.25 * box.w(), qy = 0.25 * box.h();
  const std::array<std::array<double, 2>, 5> seeds = {{{cx, cy},
                                                       {cx - qx, cy - qy},
                                                       {cx + qx, cy - qy},
                                                       {cx - qx, cy + qy},
                                                       {cx + qx, cy + qy}}};
  geom::BinaryMask best;
  double best_iou = -1.0;
  for (const auto &s : seeds) {
    int sc = std::clamp(static_cast<int>(std::floor(s[0])), 0, img.w - 1);
    int sr = std::clamp(static_cast<int>(std::floor(s[1])), 0, img.h - 1);
    geom::BinaryMask m = flood(img, sr, sc);
    geom::Box mb = geom::mask_to_box(m); // flood always contains the seed
    double v = geom::iou(mb, box);
    if (v > best_iou) {
      best_iou = v;
      best = std::move(m);
    }
  }
  // clip to the prompt rectangle
  int r0 = std::max(0, static_cast<int>(std::floor(box.y1)));
  int r1 = std::min(img.h, static_cast<int>(std::ceil(box.y2)));
  int c0 = std::max(0, static_cast<int>(std::floor(box.x1)));
  int c1 = std::min(img.w, static_cast<int>(std::ceil(box.x2)));
  geom::BinaryMask out(img.h, img.w);
  for (int r = r0; r < r1; ++r)
    for (int c = c0; c < c1; ++c)
      if (best.at(r, c)) out.set(r, c, true);
  return out;
}

} // namespace ovd::stubs
