#include "ovd/nn.hpp"

#include <cmath>
#include <cstring>

#include "ovd/errors.hpp"

namespace ovd::nn {

InitFn init_zeros() {
  return [](const std::vector<int> &shape, rng::Rng &) { return Tensor::zeros(shape); };
}

InitFn init_ones() {
  return [](const std::vector<int> &shape, rng::Rng &) {
    return Tensor::full(shape, 1.0);
  };
}

InitFn init_normal(double stddev) {
  return [stddev](const std::vector<int> &shape, rng::Rng &r) {
    return Tensor::randn(shape, r, stddev);
  };
}

InitFn init_xavier() {
  return [](const std::vector<int> &shape, rng::Rng &r) {
    if (shape.size() != 2) throw ShapeError("xavier init expects 2-D weight");
    double std = std::sqrt(2.0 / (shape[0] + shape[1]));
    return Tensor::randn(shape, r, std);
  };
}

ag::Var ParamRegistry::add(const std::string &name, std::vector<int> shape,
                           const InitFn &init, bool frozen) {
  for (const auto &e : entries_)
    if (e.name == name) throw Error("duplicate parameter name: " + name);
  rng::Rng r(rng::sub_seed(seed_, name));
  Tensor t = init(shape, r);
  ag::Var v;
  if (frozen) {
    v = ag::constant(std::move(t));
  } else {
    v = ag::leaf(std::move(t));
  }
  entries_.push_back({name, v, frozen});
  return v;
}

ag::Var ParamRegistry::find(const std::string &name) const {
  for (const auto &e : entries_)
    if (e.name == name) return e.var;
  return nullptr;
}

std::vector<ag::Var> ParamRegistry::trainable() const {
  std::vector<ag::Var> out;
  for (const auto &e : entries_)
    if (!e.frozen) out.push_back(e.var);
  return out;
}

double ParamRegistry::frozen_checksum() const {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto &e : entries_) {
    if (!e.frozen) continue;
    double cs = checksum(e.var->value);
    uint64_t bits;
    static_assert(sizeof(bits) == sizeof(cs));
    std::memcpy(&bits, &cs, sizeof(bits));
    h ^= bits;
    h *= 0x100000001b3ULL;
  }
  return static_cast<double>(h);
}

int64_t ParamRegistry::trainable_count() const {
  int64_t n = 0;
  for (const auto &e : entries_)
    if (!e.frozen) n += e.var->value.numel();
  return n;
}

void ParamRegistry::zero_grads() const {
  for (const auto &e : entries_)
    if (!e.frozen) ag::zero_grad(e.var);
}

Linear::Linear(ParamRegistry &reg, const std::string &name, int in, int out,
               const InitFn &weight_init, bool frozen) {
  w = reg.add(name + ".w", {in, out}, weight_init, frozen);
  b = reg.add(name + ".b", {out}, init_zeros(), frozen);
}

ag::Var Linear::forward(const ag::Var &x) const {
  return ag::add_rowvec(ag::matmul(x, w), b);
}

LayerNorm::LayerNorm(ParamRegistry &reg, const std::string &name, int dim, bool frozen) {
  g = reg.add(name + ".g", {dim}, init_ones(), frozen);
  b = reg.add(name + ".b", {dim}, init_zeros(), frozen);
}

Ffn::Ffn(ParamRegistry &reg, const std::string &name, int dim, int hidden,
         bool zero_out, bool frozen) {
  fc1 = Linear(reg, name + ".fc1", dim, hidden, init_xavier(), frozen);
  fc2 = Linear(reg, name + ".fc2", hidden, dim,
               zero_out ? init_zeros() : init_xavier(), frozen);
}

ag::Var Ffn::forward(const ag::Var &x) const {
  return fc2.forward(ag::gelu(fc1.forward(x)));
}

AttnKind attn_kind_from_name(const std::string &name) {
  if (name == "dense") return AttnKind::Dense;
  if (name == "deformable") return AttnKind::Deformable;
  throw Error("unknown attention kind: " + name);
}

MultiheadAttention::MultiheadAttention(ParamRegistry &reg, const std::string &name,
                                       int dim_, int heads_, AttnKind kind_,
                                       bool zero_out, bool frozen)
    : kind(kind_), dim(dim_), heads(heads_) {
  if (dim % heads != 0) throw ShapeError("attention dim not divisible by heads");
  v = Linear(reg, name + ".v", dim, dim, init_xavier(), frozen);
  o = Linear(reg, name + ".o", dim, dim, zero_out ? init_zeros() : init_xavier(),
             frozen);
  if (kind == AttnKind::Dense) {
    q = Linear(reg, name + ".q", dim, dim, init_xavier(), frozen);
    k = Linear(reg, name + ".k", dim, dim, init_xavier(), frozen);
  } else {
    // offsets start at the query position, weights start uniform
    off = Linear(reg, name + ".off", dim, heads * points * 2, init_zeros(), frozen);
    aw = Linear(reg, name + ".aw", dim, heads * points, init_zeros(), frozen);
  }
}

ag::Var MultiheadAttention::forward(const ag::Var &query, const ag::Var &context,
                                    int ctx_gh, int ctx_gw) const {
  const int dh = dim / heads;
  ag::Var vv = v.forward(context);
  std::vector<ag::Var> head_outs;
  head_outs.reserve(static_cast<size_t>(heads));

  if (kind == AttnKind::Dense) {
    ag::Var qq = q.forward(query);
    ag::Var kk = k.forward(context);
    const double inv = 1.0 / std::sqrt(static_cast<double>(dh));
    for (int h = 0; h < heads; ++h) {
      ag::Var qh = ag::slice_cols(qq, h * dh, dh);
      ag::Var kh = ag::slice_cols(kk, h * dh, dh);
      ag::Var vh = ag::slice_cols(vv, h * dh, dh);
      ag::Var scores = ag::scale(ag::matmul_nt(qh, kh), inv);
      ag::Var attn = ag::softmax_rows(scores);
      head_outs.push_back(ag::matmul(attn, vh));
    }
  } else {
    const int Tq = query->value.rows();
    if (context->value.rows() != ctx_gh * ctx_gw)
      throw ShapeError("deformable attention: context grid mismatch");
    // base sampling position = query token's own grid cell, repeated per point
    Tensor base({Tq * points, 2});
    for (int t = 0; t < Tq; ++t) {
      double bx = static_cast<double>(t % ctx_gw);
      double by = static_cast<double>(t / ctx_gw);
      for (int p = 0; p < points; ++p) {
        base.at(t * points + p, 0) = bx;
        base.at(t * points + p, 1) = by;
      }
    }
    ag::Var offsets = off.forward(query); // [Tq, heads*points*2]
    ag::Var weights = aw.forward(query);  // [Tq, heads*points]
    for (int h = 0; h < heads; ++h) {
      ag::Var vh = ag::slice_cols(vv, h * dh, dh);
      ag::Var oh = ag::reshape(ag::slice_cols(offsets, h * points * 2, points * 2),
                               {Tq * points, 2});
      ag::Var pos = ag::add(oh, ag::constant(base));
      ag::Var sampled = ag::bilinear_dynamic(vh, ctx_gh, ctx_gw, pos); // [Tq*P, dh]
      ag::Var wh = ag::softmax_rows(ag::slice_cols(weights, h * points, points));
      ag::Var wflat = ag::reshape(wh, {Tq * points, 1});
      head_outs.push_back(
          ag::segment_sum_rows(ag::mul_colvec(sampled, wflat), points));
    }
  }
  return o.forward(ag::concat_cols(head_outs));
}

} // namespace ovd::nn
