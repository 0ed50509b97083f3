#ifndef OVD_SIDEFORMER_HPP
#define OVD_SIDEFORMER_HPP

#include <array>
#include <string>

#include "ovd/nn.hpp"
#include "ovd/stubs.hpp"

namespace ovd::side {

enum class Mode { Bypass, ExtractorOnly, Full };

Mode mode_from_name(const std::string &name);
const char *mode_name(Mode m);

// Extractor: F_hat = F_side + Attn(norm(F_side));
//            out   = F_sam + gamma .* (F_hat + FFN(norm(F_hat)))
// gamma is a per-channel vector, zero-initialized, so the layer starts as
// an exact pass-through of the backbone block feature.
struct ExtractorLayer {
  nn::LayerNorm norm1, norm2;
  nn::MultiheadAttention attn;
  nn::Ffn ffn;
  ag::Var gamma;

  ExtractorLayer() = default;
  ExtractorLayer(nn::ParamRegistry &reg, const std::string &name, int dim, int heads,
                 int ffn_hidden, nn::AttnKind kind);

  ag::Var forward(const ag::Var &f_side, const ag::Var &f_sam, int gh, int gw) const;
};

// Injector: self-attention on the query, then a gamma-gated cross-attention
// residual against the CLIP tokens, then an FFN residual. Only the
// cross-attention term is gated; the self-attention output projection and
// the FFN second linear start at zero so the whole layer is the identity
// at initialization.
struct InjectorLayer {
  nn::LayerNorm norm1, normq, normkv, norm2;
  nn::MultiheadAttention self_attn, cross_attn;
  nn::Ffn ffn;
  ag::Var gamma;

  InjectorLayer() = default;
  InjectorLayer(nn::ParamRegistry &reg, const std::string &name, int dim, int heads,
                int ffn_hidden, nn::AttnKind kind);

  ag::Var forward(const ag::Var &f_side, const ag::Var &f_clip, int gh, int gw) const;
};

// The ladder adapter: a trainable patch embedding summed with the frozen
// backbone's patch tokens, then four extractor/injector pairs keyed to the
// backbone's block outputs.
class SideFormer {
public:
  SideFormer() = default;
  SideFormer(nn::ParamRegistry &reg, int dim, int heads, int ffn_mult,
             nn::AttnKind kind, Mode mode);

  // sam_patch_tokens: frozen patch tokens from the backbone stub.
  ag::Var patch_embed(const Image &img, const Tensor &sam_patch_tokens) const;

  ag::Var forward(const Image &img, const stubs::BlockFeatures &blocks,
                  const stubs::FeatureMap &clip, const Tensor &sam_patch_tokens) const;

  Mode mode() const { return mode_; }

private:
  int dim_ = 0;
  Mode mode_ = Mode::Full;
  nn::Linear patch_;
  std::array<ExtractorLayer, 4> ext_;
  std::array<InjectorLayer, 4> inj_;
};

} // namespace ovd::side

#endif
