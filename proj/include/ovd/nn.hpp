#ifndef OVD_NN_HPP
#define OVD_NN_HPP

#include <functional>
#include <string>
#include <vector>

#include "ovd/autograd.hpp"
#include "ovd/rng.hpp"
#include "ovd/tensor.hpp"

namespace ovd::nn {

struct ParamEntry {
  std::string name;
  ag::Var var;
  bool frozen = false;
};

using InitFn = std::function<Tensor(const std::vector<int> &, rng::Rng &)>;

InitFn init_zeros();
InitFn init_ones();
InitFn init_normal(double stddev);
InitFn init_xavier(); // std = sqrt(2/(fan_in+fan_out)), 2-D weights

// Owns every named tensor of a model. Initialization is derived from
// (seed, name) so it does not depend on registration order.
class ParamRegistry {
public:
  explicit ParamRegistry(uint64_t init_seed) : seed_(init_seed) {}

  ag::Var add(const std::string &name, std::vector<int> shape, const InitFn &init,
              bool frozen = false);

  const std::vector<ParamEntry> &entries() const { return entries_; }
  ag::Var find(const std::string &name) const; // null if absent

  std::vector<ag::Var> trainable() const;
  double frozen_checksum() const;
  int64_t trainable_count() const;
  void zero_grads() const;

private:
  uint64_t seed_;
  std::vector<ParamEntry> entries_;
};

struct Linear {
  ag::Var w, b; // y = x @ w + b, w: [in, out]

  Linear() = default;
  Linear(ParamRegistry &reg, const std::string &name, int in, int out,
         const InitFn &weight_init, bool frozen = false);

  ag::Var forward(const ag::Var &x) const;
};

struct LayerNorm {
  ag::Var g, b;

  LayerNorm() = default;
  LayerNorm(ParamRegistry &reg, const std::string &name, int dim, bool frozen = false);

  ag::Var forward(const ag::Var &x) const { return ag::layernorm_rows(x, g, b); }
};

struct Ffn {
  Linear fc1, fc2;

  Ffn() = default;
  // zero_out: second projection starts at zero so the residual branch is
  // inactive until trained
  Ffn(ParamRegistry &reg, const std::string &name, int dim, int hidden,
      bool zero_out, bool frozen = false);

  ag::Var forward(const ag::Var &x) const;
};

enum class AttnKind { Dense, Deformable };

AttnKind attn_kind_from_name(const std::string &name);

// Multi-head attention over token grids. Dense is exact scaled dot-product;
// deformable samples 4 offset points per query per head with bilinear
// interpolation over the key/value grid.
struct MultiheadAttention {
  AttnKind kind = AttnKind::Dense;
  int dim = 0, heads = 0, points = 4;
  Linear q, k, v, o;
  Linear off, aw; // deformable only

  MultiheadAttention() = default;
  MultiheadAttention(ParamRegistry &reg, const std::string &name, int dim, int heads,
                     AttnKind kind, bool zero_out, bool frozen = false);

  // query: [Tq,D]; context: [Tk,D] on a ctx_gh x ctx_gw grid (the grid is
  // only used by the deformable variant). Self-attention passes the same
  // Var for query and context.
  ag::Var forward(const ag::Var &query, const ag::Var &context, int ctx_gh,
                  int ctx_gw) const;
};

} // namespace ovd::nn

#endif
