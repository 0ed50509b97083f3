#include "ovd/sideformer.hpp"

#include <cmath>

namespace ovd::side {

Mode mode_from_name(const std::string &name) {
  if (name == "bypass") return Mode::Bypass;
  if (name == "extractor_only") return Mode::ExtractorOnly;
  if (name == "full") return Mode::Full;
  throw Error("unknown sideformer mode: " + name);
}

const char *mode_name(Mode m) {
  switch (m) {
    case Mode::Bypass: return "bypass";
    case Mode::ExtractorOnly: return "extractor_only";
    default: return "full";
  }
}

ExtractorLayer::ExtractorLayer(nn::ParamRegistry &reg, const std::string &name,
                               int dim, int heads, int ffn_hidden, nn::AttnKind kind) {
  norm1 = nn::LayerNorm(reg, name + ".norm1", dim);
  attn = nn::MultiheadAttention(reg, name + ".attn", dim, heads, kind, false);
  norm2 = nn::LayerNorm(reg, name + ".norm2", dim);
  ffn = nn::Ffn(reg, name + ".ffn", dim, ffn_hidden, false);
  gamma = reg.add(name + ".gamma", {dim}, nn::init_zeros());
}

ag::Var ExtractorLayer::forward(const ag::Var &f_side, const ag::Var &f_sam,
                                int gh, int gw) const {
  ag::Var normed = norm1.forward(f_side);
  ag::Var fhat = ag::add(f_side, attn.forward(normed, normed, gh, gw));
  ag::Var inner = ag::add(fhat, ffn.forward(norm2.forward(fhat)));
  return ag::add(f_sam, ag::mul_rowvec(inner, gamma));
}

InjectorLayer::InjectorLayer(nn::ParamRegistry &reg, const std::string &name,
                             int dim, int heads, int ffn_hidden, nn::AttnKind kind) {
  norm1 = nn::LayerNorm(reg, name + ".norm1", dim);
  self_attn = nn::MultiheadAttention(reg, name + ".selfattn", dim, heads, kind,
                                     /*zero_out=*/true);
  normq = nn::LayerNorm(reg, name + ".normq", dim);
  normkv = nn::LayerNorm(reg, name + ".normkv", dim);
  cross_attn = nn::MultiheadAttention(reg, name + ".cross", dim, heads, kind, false);
  norm2 = nn::LayerNorm(reg, name + ".norm2", dim);
  ffn = nn::Ffn(reg, name + ".ffn", dim, ffn_hidden, /*zero_out=*/true);
  gamma = reg.add(name + ".gamma", {dim}, nn::init_zeros());
}

ag::Var InjectorLayer::forward(const ag::Var &f_side, const ag::Var &f_clip,
                               int gh, int gw) const {
  ag::Var normed = norm1.forward(f_side);
  ag::Var f1 = ag::add(f_side, self_attn.forward(normed, normed, gh, gw));
  ag::Var cross = cross_attn.forward(normq.forward(f1), normkv.forward(f_clip), gh, gw);
  ag::Var f2 = ag::add(f1, ag::mul_rowvec(cross, gamma));
  return ag::add(f2, ffn.forward(norm2.forward(f2)));
}

SideFormer::SideFormer(nn::ParamRegistry &reg, int dim, int heads, int ffn_mult,
                       nn::AttnKind kind, Mode mode)
    : dim_(dim), mode_(mode) {
  const int pdim = stubs::kPatch * stubs::kPatch * 3;
  patch_ = nn::Linear(reg, "sideformer.patch", pdim, dim,
                      nn::init_normal(1.0 / std::sqrt(static_cast<double>(pdim))));
  for (int i = 0; i < 4; ++i) {
    std::string base = "sideformer.block" + std::to_string(i);
    ext_[static_cast<size_t>(i)] =
        ExtractorLayer(reg, base + ".extractor", dim, heads, ffn_mult * dim, kind);
    inj_[static_cast<size_t>(i)] =
        InjectorLayer(reg, base + ".injector", dim, heads, ffn_mult * dim, kind);
  }
}

ag::Var SideFormer::patch_embed(const Image &img, const Tensor &sam_patch_tokens) const {
  ag::Var side = patch_.forward(ag::constant(stubs::extract_patches(img)));
  if (!side->value.same_shape(sam_patch_tokens))
    throw ShapeError("side patch tokens do not match backbone patch tokens");
  return ag::add(side, ag::constant(sam_patch_tokens));
}

ag::Var SideFormer::forward(const Image &img, const stubs::BlockFeatures &blocks,
                            const stubs::FeatureMap &clip,
                            const Tensor &sam_patch_tokens) const {
  const int gh = blocks[0].grid_h, gw = blocks[0].grid_w;
  for (const auto &b : blocks)
    if (b.grid_h != gh || b.grid_w != gw || b.tokens.cols() != dim_)
      throw ShapeError("backbone block features disagree on grid or dim");
  if (mode_ == Mode::Bypass) return ag::constant(blocks[3].tokens);

  ag::Var state = patch_embed(img, sam_patch_tokens);
  ag::Var clip_tokens = ag::constant(clip.tokens);
  for (int i = 0; i < 4; ++i) {
    state = ext_[static_cast<size_t>(i)].forward(
        state, ag::constant(blocks[static_cast<size_t>(i)].tokens), gh, gw);
    if (mode_ == Mode::Full)
      state = inj_[static_cast<size_t>(i)].forward(state, clip_tokens, gh, gw);
  }
  return state;
}

} // namespace ovd::side
