#ifndef OVD_AUTOGRAD_HPP
#define OVD_AUTOGRAD_HPP

#include <array>
#include <functional>
#include <memory>
#include <vector>

#include "ovd/tensor.hpp"

namespace ovd::ag {

// Reverse-mode tape over Tensor. Nodes own their parents, so a loss Var
// keeps the whole graph alive and everything frees when it goes out of
// scope; leaves (parameters) are owned by the modules and persist.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  bool grad_set = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node &)> backprop;

  void add_grad(const Tensor &g);
  void add_grad_scaled(const Tensor &g, double s);
  Tensor &ensure_grad();
};

using Var = std::shared_ptr<Node>;

Var constant(Tensor v);
Var leaf(Tensor v); // trainable: requires_grad = true

// Runs backprop from a scalar root. Grad accumulates into leaves.
void backward(const Var &root);
void zero_grad(const Var &p);

// Detach: value flows, gradient does not.
Var stop_gradient(const Var &a);

// ---- elementwise / arithmetic ----
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var neg(Var a);
Var mul(Var a, Var b);
Var scale(Var a, double c);
Var add_scalar(Var a, double c);
Var add_rowvec(Var x, Var v); // x:[T,D] v:[D] or [1,D]
Var mul_rowvec(Var x, Var v);
Var mul_colvec(Var x, Var c); // x:[N,D] c:[N] or [N,1]
Var mul_scalar_var(Var x, Var s);

// ---- linear algebra ----
Var matmul(Var a, Var b);
Var matmul_nt(Var a, Var b); // a * b^T

// ---- nonlinearities ----
Var relu(Var a);
Var gelu(Var a);
Var sigmoid(Var a);
Var softmax_rows(Var a);
Var layernorm_rows(Var x, Var g, Var b, double eps = 1e-5);
Var normalize_rows(Var x, double eps = 1e-12);

// ---- reductions ----
Var sum_all(Var a);
Var mean_all(Var a);
Var dot_const(Var a, Tensor w); // scalar: sum(a .* w)

// ---- shape / indexing ----
Var reshape(Var a, std::vector<int> shape);
Var slice_cols(Var a, int start, int n);
Var concat_cols(const std::vector<Var> &xs);
Var slice_rows(Var a, int start, int n);
Var concat_rows(const std::vector<Var> &xs);
Var gather_rows(Var a, std::vector<int> idx);
Var segment_sum_rows(Var a, int k); // [G*k, D] -> [G, D]
Var tokens_to_chw(Var a, int gh, int gw); // [T,D] -> [D,gh,gw]
Var chw_to_tokens(Var a);                 // [C,H,W] -> [H*W, C]

// ---- spatial ----
Var conv2d(Var x, Var w, Var b, int stride, int pad);

// Bilinear sampling over a row-major token grid ([T,D], token = y*gw+x).
// Points are continuous grid coordinates; border-clamped.
Var bilinear_rows(Var f, int gh, int gw,
                  const std::vector<std::array<double, 2>> &pts);
// Differentiable sample positions (pos: [P,2] = (x,y) pairs).
Var bilinear_dynamic(Var f, int gh, int gw, Var pos);

// ---- fused losses ----
Var smooth_l1_mean(Var pred, Tensor target, double beta);
// mean over cells with mask==1 of BCE-with-logits
Var bce_logits_mean(Var logits, Tensor targets, Tensor mask);
// sigmoid focal loss, mean over all K*M cells
Var focal_alignment_mean(Var s, Tensor targets, double alpha, double gamma);

} // namespace ovd::ag

#endif
