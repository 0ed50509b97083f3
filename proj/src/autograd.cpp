#include "ovd/autograd.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

namespace ovd::ag {

namespace {

Var make(Tensor value, std::vector<Var> parents,
         std::function<void(Node &)> bp) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool rg = false;
  for (const auto &p : parents) rg = rg || p->requires_grad;
  if (rg) {
    n->requires_grad = true;
    n->parents = std::move(parents);
    n->backprop = std::move(bp);
  }
  return n;
}

void check_same_shape(const Var &a, const Var &b, const char *op) {
  if (!a->value.same_shape(b->value))
    throw ShapeError(std::string(op) + ": operand shapes differ");
}

double softplus(double x) {
  if (x > 30.0) return x;
  if (x < -30.0) return std::exp(x);
  return std::log1p(std::exp(-std::abs(x))) + std::max(x, 0.0);
}

double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  double e = std::exp(x);
  return e / (1.0 + e);
}

} // namespace

void Node::add_grad(const Tensor &g) {
  if (!requires_grad) return;
  Tensor &acc = ensure_grad();
  for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += g[i];
}

void Node::add_grad_scaled(const Tensor &g, double s) {
  if (!requires_grad) return;
  Tensor &acc = ensure_grad();
  for (int64_t i = 0; i < acc.numel(); ++i) acc[i] += s * g[i];
}

Tensor &Node::ensure_grad() {
  if (!grad_set) {
    grad = Tensor::zeros(value.shape());
    grad_set = true;
  }
  return grad;
}

Var constant(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  return n;
}

Var leaf(Tensor v) {
  auto n = std::make_shared<Node>();
  n->value = std::move(v);
  n->requires_grad = true;
  return n;
}

void zero_grad(const Var &p) {
  p->grad_set = false;
  p->grad = Tensor();
}

Var stop_gradient(const Var &a) { return constant(a->value); }

void backward(const Var &root) {
  if (root->value.numel() != 1)
    throw ShapeError("backward: root must be scalar");
  // iterative DFS postorder; reverse gives a valid backprop order
  std::vector<Node *> order;
  std::unordered_set<Node *> seen;
  std::vector<std::pair<Node *, size_t>> stack;
  stack.emplace_back(root.get(), 0);
  seen.insert(root.get());
  while (!stack.empty()) {
    auto &[n, i] = stack.back();
    if (i < n->parents.size()) {
      Node *p = n->parents[i].get();
      ++i;
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.emplace_back(p, 0);
      }
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }
  root->ensure_grad().fill(1.0);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node *n = *it;
    if (n->backprop && n->grad_set) n->backprop(*n);
  }
}

// ---- elementwise ----

Var add(Var a, Var b) {
  check_same_shape(a, b, "add");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += b->value[i];
  return make(std::move(out), {a, b}, [](Node &n) {
    n.parents[0]->add_grad(n.grad);
    n.parents[1]->add_grad(n.grad);
  });
}

Var sub(Var a, Var b) {
  check_same_shape(a, b, "sub");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] -= b->value[i];
  return make(std::move(out), {a, b}, [](Node &n) {
    n.parents[0]->add_grad(n.grad);
    n.parents[1]->add_grad_scaled(n.grad, -1.0);
  });
}

Var neg(Var a) { return scale(std::move(a), -1.0); }

Var mul(Var a, Var b) {
  check_same_shape(a, b, "mul");
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= b->value[i];
  return make(std::move(out), {a, b}, [](Node &n) {
    const Tensor &av = n.parents[0]->value, &bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor g = n.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= bv[i];
      n.parents[0]->add_grad(g);
    }
    if (n.parents[1]->requires_grad) {
      Tensor g = n.grad;
      for (int64_t i = 0; i < g.numel(); ++i) g[i] *= av[i];
      n.parents[1]->add_grad(g);
    }
  });
}

Var scale(Var a, double c) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= c;
  return make(std::move(out), {a},
              [c](Node &n) { n.parents[0]->add_grad_scaled(n.grad, c); });
}

Var add_scalar(Var a, double c) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] += c;
  return make(std::move(out), {a},
              [](Node &n) { n.parents[0]->add_grad(n.grad); });
}

Var add_rowvec(Var x, Var v) {
  const int T = x->value.rows(), D = x->value.cols();
  if (v->value.numel() != D) throw ShapeError("add_rowvec: vector length != cols");
  Tensor out = x->value;
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) out.at(t, d) += v->value[d];
  return make(std::move(out), {x, v}, [T, D](Node &n) {
    n.parents[0]->add_grad(n.grad);
    if (n.parents[1]->requires_grad) {
      Tensor gv = Tensor::zeros(n.parents[1]->value.shape());
      for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d) gv[d] += n.grad.at(t, d);
      n.parents[1]->add_grad(gv);
    }
  });
}

Var mul_rowvec(Var x, Var v) {
  const int T = x->value.rows(), D = x->value.cols();
  if (v->value.numel() != D) throw ShapeError("mul_rowvec: vector length != cols");
  Tensor out = x->value;
  for (int t = 0; t < T; ++t)
    for (int d = 0; d < D; ++d) out.at(t, d) *= v->value[d];
  return make(std::move(out), {x, v}, [T, D](Node &n) {
    const Tensor &xv = n.parents[0]->value, &vv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor g({T, D});
      for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d) g.at(t, d) = n.grad.at(t, d) * vv[d];
      n.parents[0]->add_grad(g);
    }
    if (n.parents[1]->requires_grad) {
      Tensor gv = Tensor::zeros(vv.shape());
      for (int t = 0; t < T; ++t)
        for (int d = 0; d < D; ++d) gv[d] += n.grad.at(t, d) * xv.at(t, d);
      n.parents[1]->add_grad(gv);
    }
  });
}

Var mul_colvec(Var x, Var c) {
  const int N = x->value.rows(), D = x->value.cols();
  if (c->value.numel() != N) throw ShapeError("mul_colvec: vector length != rows");
  Tensor out = x->value;
  for (int r = 0; r < N; ++r)
    for (int d = 0; d < D; ++d) out.at(r, d) *= c->value[r];
  return make(std::move(out), {x, c}, [N, D](Node &n) {
    const Tensor &xv = n.parents[0]->value, &cv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor g({N, D});
      for (int r = 0; r < N; ++r)
        for (int d = 0; d < D; ++d) g.at(r, d) = n.grad.at(r, d) * cv[r];
      n.parents[0]->add_grad(g);
    }
    if (n.parents[1]->requires_grad) {
      Tensor gc = Tensor::zeros(cv.shape());
      for (int r = 0; r < N; ++r)
        for (int d = 0; d < D; ++d) gc[r] += n.grad.at(r, d) * xv.at(r, d);
      n.parents[1]->add_grad(gc);
    }
  });
}

Var mul_scalar_var(Var x, Var s) {
  if (s->value.numel() != 1) throw ShapeError("mul_scalar_var: s must be scalar");
  const double sv = s->value[0];
  Tensor out = x->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] *= sv;
  return make(std::move(out), {x, s}, [sv](Node &n) {
    n.parents[0]->add_grad_scaled(n.grad, sv);
    if (n.parents[1]->requires_grad) {
      double acc = 0.0;
      const Tensor &xv = n.parents[0]->value;
      for (int64_t i = 0; i < xv.numel(); ++i) acc += n.grad[i] * xv[i];
      Tensor gs({1});
      gs[0] = acc;
      n.parents[1]->add_grad(gs);
    }
  });
}

// ---- linear algebra ----

Var matmul(Var a, Var b) {
  Tensor out = ovd::matmul(a->value, b->value);
  return make(std::move(out), {a, b}, [](Node &n) {
    const Tensor &av = n.parents[0]->value, &bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      n.parents[0]->add_grad(ovd::matmul_nt(n.grad, bv));
    if (n.parents[1]->requires_grad)
      n.parents[1]->add_grad(ovd::matmul_tn(av, n.grad));
  });
}

Var matmul_nt(Var a, Var b) {
  Tensor out = ovd::matmul_nt(a->value, b->value);
  return make(std::move(out), {a, b}, [](Node &n) {
    const Tensor &av = n.parents[0]->value, &bv = n.parents[1]->value;
    if (n.parents[0]->requires_grad)
      n.parents[0]->add_grad(ovd::matmul(n.grad, bv));
    if (n.parents[1]->requires_grad)
      n.parents[1]->add_grad(ovd::matmul_tn(n.grad, av));
  });
}

// ---- nonlinearities ----

Var relu(Var a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = std::max(0.0, out[i]);
  return make(std::move(out), {a}, [](Node &n) {
    Tensor g = n.grad;
    const Tensor &xv = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xv[i] <= 0.0) g[i] = 0.0;
    n.parents[0]->add_grad(g);
  });
}

Var gelu(Var a) {
  static const double inv_sqrt2 = 0.7071067811865475244;
  static const double inv_sqrt2pi = 0.3989422804014326779;
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) {
    double x = out[i];
    out[i] = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  return make(std::move(out), {a}, [](Node &n) {
    Tensor g = n.grad;
    const Tensor &xv = n.parents[0]->value;
    for (int64_t i = 0; i < g.numel(); ++i) {
      double x = xv[i];
      double cdf = 0.5 * (1.0 + std::erf(x * inv_sqrt2));
      double pdf = inv_sqrt2pi * std::exp(-0.5 * x * x);
      g[i] *= cdf + x * pdf;
    }
    n.parents[0]->add_grad(g);
  });
}

Var sigmoid(Var a) {
  Tensor out = a->value;
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = stable_sigmoid(out[i]);
  return make(std::move(out), {a}, [](Node &n) {
    Tensor g = n.grad;
    for (int64_t i = 0; i < g.numel(); ++i) {
      double y = n.value[i];
      g[i] *= y * (1.0 - y);
    }
    n.parents[0]->add_grad(g);
  });
}

Var softmax_rows(Var a) {
  const int R = a->value.rows(), C = a->value.cols();
  Tensor out = a->value;
  for (int r = 0; r < R; ++r) {
    double mx = -1e300;
    for (int c = 0; c < C; ++c) mx = std::max(mx, out.at(r, c));
    double sum = 0.0;
    for (int c = 0; c < C; ++c) {
      out.at(r, c) = std::exp(out.at(r, c) - mx);
      sum += out.at(r, c);
    }
    for (int c = 0; c < C; ++c) out.at(r, c) /= sum;
  }
  return make(std::move(out), {a}, [R, C](Node &n) {
    Tensor g({R, C});
    for (int r = 0; r < R; ++r) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += n.grad.at(r, c) * n.value.at(r, c);
      for (int c = 0; c < C; ++c)
        g.at(r, c) = n.value.at(r, c) * (n.grad.at(r, c) - dot);
    }
    n.parents[0]->add_grad(g);
  });
}

Var layernorm_rows(Var x, Var g, Var b, double eps) {
  const int R = x->value.rows(), C = x->value.cols();
  if (g->value.numel() != C || b->value.numel() != C)
    throw ShapeError("layernorm: affine params length != cols");
  Tensor xhat({R, C});
  Tensor sigma({R});
  Tensor out({R, C});
  for (int r = 0; r < R; ++r) {
    double mean = 0.0;
    for (int c = 0; c < C; ++c) mean += x->value.at(r, c);
    mean /= C;
    double var = 0.0;
    for (int c = 0; c < C; ++c) {
      double d = x->value.at(r, c) - mean;
      var += d * d;
    }
    var /= C;
    double sd = std::sqrt(var + eps);
    sigma[r] = sd;
    for (int c = 0; c < C; ++c) {
      xhat.at(r, c) = (x->value.at(r, c) - mean) / sd;
      out.at(r, c) = xhat.at(r, c) * g->value[c] + b->value[c];
    }
  }
  return make(std::move(out), {x, g, b}, [R, C, xhat, sigma](Node &n) {
    const Tensor &gv = n.parents[1]->value;
    if (n.parents[0]->requires_grad) {
      Tensor gx({R, C});
      for (int r = 0; r < R; ++r) {
        double m1 = 0.0, m2 = 0.0;
        for (int c = 0; c < C; ++c) {
          double dxhat = n.grad.at(r, c) * gv[c];
          m1 += dxhat;
          m2 += dxhat * xhat.at(r, c);
        }
        m1 /= C;
        m2 /= C;
        for (int c = 0; c < C; ++c) {
          double dxhat = n.grad.at(r, c) * gv[c];
          gx.at(r, c) = (dxhat - m1 - xhat.at(r, c) * m2) / sigma[r];
        }
      }
      n.parents[0]->add_grad(gx);
    }
    if (n.parents[1]->requires_grad) {
      Tensor gg = Tensor::zeros(n.parents[1]->value.shape());
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) gg[c] += n.grad.at(r, c) * xhat.at(r, c);
      n.parents[1]->add_grad(gg);
    }
    if (n.parents[2]->requires_grad) {
      Tensor gb = Tensor::zeros(n.parents[2]->value.shape());
      for (int r = 0; r < R; ++r)
        for (int c = 0; c < C; ++c) gb[c] += n.grad.at(r, c);
      n.parents[2]->add_grad(gb);
    }
  });
}

Var normalize_rows(Var x, double eps) {
  const int R = x->value.rows(), C = x->value.cols();
  Tensor out({R, C});
  Tensor norms({R});
  for (int r = 0; r < R; ++r) {
    double s = 0.0;
    for (int c = 0; c < C; ++c) s += x->value.at(r, c) * x->value.at(r, c);
    double nn = std::sqrt(s + eps);
    norms[r] = nn;
    for (int c = 0; c < C; ++c) out.at(r, c) = x->value.at(r, c) / nn;
  }
  return make(std::move(out), {x}, [R, C, norms](Node &n) {
    Tensor g({R, C});
    for (int r = 0; r < R; ++r) {
      double dot = 0.0;
      for (int c = 0; c < C; ++c) dot += n.grad.at(r, c) * n.value.at(r, c);
      for (int c = 0; c < C; ++c)
        g.at(r, c) = (n.grad.at(r, c) - n.value.at(r, c) * dot) / norms[r];
    }
    n.parents[0]->add_grad(g);
  });
}

// ---- reductions ----

Var sum_all(Var a) {
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make(Tensor::scalar(s), {a}, [](Node &n) {
    n.parents[0]->add_grad(Tensor::full(n.parents[0]->value.shape(), n.grad[0]));
  });
}

Var mean_all(Var a) {
  const double inv = 1.0 / static_cast<double>(a->value.numel());
  double s = 0.0;
  for (int64_t i = 0; i < a->value.numel(); ++i) s += a->value[i];
  return make(Tensor::scalar(s * inv), {a}, [inv](Node &n) {
    n.parents[0]->add_grad(
        Tensor::full(n.parents[0]->value.shape(), n.grad[0] * inv));
  });
}

Var dot_const(Var a, Tensor w) {
  if (!a->value.same_shape(w)) throw ShapeError("dot_const: shape mismatch");
  double s = 0.0;
  for (int64_t i = 0; i < w.numel(); ++i) s += a->value[i] * w[i];
  return make(Tensor::scalar(s), {a}, [w](Node &n) {
    n.parents[0]->add_grad_scaled(w, n.grad[0]);
  });
}

// ---- shape / indexing ----

Var reshape(Var a, std::vector<int> shape) {
  Tensor out = a->value.reshaped(shape);
  return make(std::move(out), {a}, [](Node &n) {
    n.parents[0]->add_grad(n.grad.reshaped(n.parents[0]->value.shape()));
  });
}

Var slice_cols(Var a, int start, int len) {
  const int R = a->value.rows(), C = a->value.cols();
  if (start < 0 || start + len > C) throw ShapeError("slice_cols out of range");
  Tensor out({R, len});
  for (int r = 0; r < R; ++r)
    for (int c = 0; c < len; ++c) out.at(r, c) = a->value.at(r, start + c);
  return make(std::move(out), {a}, [R, start, len](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < len; ++c) g.at(r, start + c) = n.grad.at(r, c);
    n.parents[0]->add_grad(g);
  });
}

Var concat_cols(const std::vector<Var> &xs) {
  const int R = xs.front()->value.rows();
  int C = 0;
  for (const auto &x : xs) {
    if (x->value.rows() != R) throw ShapeError("concat_cols: row mismatch");
    C += x->value.cols();
  }
  Tensor out({R, C});
  int off = 0;
  for (const auto &x : xs) {
    for (int r = 0; r < R; ++r)
      for (int c = 0; c < x->value.cols(); ++c)
        out.at(r, off + c) = x->value.at(r, c);
    off += x->value.cols();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make(std::move(out), std::move(parents), [R](Node &n) {
    int off = 0;
    for (auto &p : n.parents) {
      const int pc = p->value.cols();
      if (p->requires_grad) {
        Tensor g({R, pc});
        for (int r = 0; r < R; ++r)
          for (int c = 0; c < pc; ++c) g.at(r, c) = n.grad.at(r, off + c);
        p->add_grad(g);
      }
      off += pc;
    }
  });
}

Var slice_rows(Var a, int start, int len) {
  const int R = a->value.rows(), C = a->value.cols();
  if (start < 0 || start + len > R) throw ShapeError("slice_rows out of range");
  Tensor out({len, C});
  for (int r = 0; r < len; ++r)
    for (int c = 0; c < C; ++c) out.at(r, c) = a->value.at(start + r, c);
  return make(std::move(out), {a}, [start, len, C](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    for (int r = 0; r < len; ++r)
      for (int c = 0; c < C; ++c) g.at(start + r, c) = n.grad.at(r, c);
    n.parents[0]->add_grad(g);
  });
}

Var concat_rows(const std::vector<Var> &xs) {
  const int C = xs.front()->value.cols();
  int R = 0;
  for (const auto &x : xs) {
    if (x->value.cols() != C) throw ShapeError("concat_rows: col mismatch");
    R += x->value.rows();
  }
  Tensor out({R, C});
  int off = 0;
  for (const auto &x : xs) {
    for (int r = 0; r < x->value.rows(); ++r)
      for (int c = 0; c < C; ++c) out.at(off + r, c) = x->value.at(r, c);
    off += x->value.rows();
  }
  std::vector<Var> parents(xs.begin(), xs.end());
  return make(std::move(out), std::move(parents), [C](Node &n) {
    int off = 0;
    for (auto &p : n.parents) {
      const int pr = p->value.rows();
      if (p->requires_grad) {
        Tensor g({pr, C});
        for (int r = 0; r < pr; ++r)
          for (int c = 0; c < C; ++c) g.at(r, c) = n.grad.at(off + r, c);
        p->add_grad(g);
      }
      off += pr;
    }
  });
}

Var gather_rows(Var a, std::vector<int> idx) {
  const int C = a->value.cols();
  Tensor out({static_cast<int>(idx.size()), C});
  for (size_t r = 0; r < idx.size(); ++r)
    for (int c = 0; c < C; ++c)
      out.at(static_cast<int>(r), c) = a->value.at(idx[r], c);
  return make(std::move(out), {a}, [idx, C](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    for (size_t r = 0; r < idx.size(); ++r)
      for (int c = 0; c < C; ++c)
        g.at(idx[r], c) += n.grad.at(static_cast<int>(r), c);
    n.parents[0]->add_grad(g);
  });
}

Var segment_sum_rows(Var a, int k) {
  const int R = a->value.rows(), C = a->value.cols();
  if (R % k != 0) throw ShapeError("segment_sum_rows: rows not divisible");
  const int G = R / k;
  Tensor out = Tensor::zeros({G, C});
  for (int g = 0; g < G; ++g)
    for (int j = 0; j < k; ++j)
      for (int c = 0; c < C; ++c) out.at(g, c) += a->value.at(g * k + j, c);
  return make(std::move(out), {a}, [G, k, C](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    for (int gi = 0; gi < G; ++gi)
      for (int j = 0; j < k; ++j)
        for (int c = 0; c < C; ++c) g.at(gi * k + j, c) = n.grad.at(gi, c);
    n.parents[0]->add_grad(g);
  });
}

Var tokens_to_chw(Var a, int gh, int gw) {
  const int T = a->value.rows(), D = a->value.cols();
  if (T != gh * gw) throw ShapeError("tokens_to_chw: grid mismatch");
  Tensor out({D, gh, gw});
  for (int y = 0; y < gh; ++y)
    for (int x = 0; x < gw; ++x)
      for (int d = 0; d < D; ++d)
        out[(static_cast<int64_t>(d) * gh + y) * gw + x] =
            a->value.at(y * gw + x, d);
  return make(std::move(out), {a}, [gh, gw, D](Node &n) {
    Tensor g({gh * gw, D});
    for (int y = 0; y < gh; ++y)
      for (int x = 0; x < gw; ++x)
        for (int d = 0; d < D; ++d)
          g.at(y * gw + x, d) =
              n.grad[(static_cast<int64_t>(d) * gh + y) * gw + x];
    n.parents[0]->add_grad(g);
  });
}

Var chw_to_tokens(Var a) {
  if (a->value.ndim() != 3) throw ShapeError("chw_to_tokens expects 3-D");
  const int C = a->value.dim(0), H = a->value.dim(1), W = a->value.dim(2);
  Tensor out({H * W, C});
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x)
        out.at(y * W + x, c) = a->value[(static_cast<int64_t>(c) * H + y) * W + x];
  return make(std::move(out), {a}, [C, H, W](Node &n) {
    Tensor g({C, H, W});
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          g[(static_cast<int64_t>(c) * H + y) * W + x] = n.grad.at(y * W + x, c);
    n.parents[0]->add_grad(g);
  });
}

// ---- spatial ----

Var conv2d(Var x, Var w, Var b, int stride, int pad) {
  if (x->value.ndim() != 3 || w->value.ndim() != 4)
    throw ShapeError("conv2d: x must be CHW, w must be OIHW");
  const int Ci = x->value.dim(0), H = x->value.dim(1), W = x->value.dim(2);
  const int Co = w->value.dim(0), kh = w->value.dim(2), kw = w->value.dim(3);
  if (w->value.dim(1) != Ci) throw ShapeError("conv2d: channel mismatch");
  if (b->value.numel() != Co) throw ShapeError("conv2d: bias size mismatch");
  const int Ho = (H + 2 * pad - kh) / stride + 1;
  const int Wo = (W + 2 * pad - kw) / stride + 1;
  auto xat = [&](int c, int y, int xx) {
    return x->value[(static_cast<int64_t>(c) * H + y) * W + xx];
  };
  auto wat = [&](int o, int i, int u, int v) {
    return w->value[((static_cast<int64_t>(o) * Ci + i) * kh + u) * kw + v];
  };
  Tensor out({Co, Ho, Wo});
  for (int o = 0; o < Co; ++o)
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = b->value[o];
        for (int i = 0; i < Ci; ++i)
          for (int u = 0; u < kh; ++u) {
            int iy = oy * stride - pad + u;
            if (iy < 0 || iy >= H) continue;
            for (int v = 0; v < kw; ++v) {
              int ix = ox * stride - pad + v;
              if (ix < 0 || ix >= W) continue;
              acc += xat(i, iy, ix) * wat(o, i, u, v);
            }
          }
        out[(static_cast<int64_t>(o) * Ho + oy) * Wo + ox] = acc;
      }
  return make(std::move(out), {x, w, b},
              [Ci, H, W, Co, kh, kw, Ho, Wo, stride, pad](Node &n) {
    const Tensor &xv = n.parents[0]->value;
    const Tensor &wv = n.parents[1]->value;
    auto gat = [&](int o, int y, int xx) {
      return n.grad[(static_cast<int64_t>(o) * Ho + y) * Wo + xx];
    };
    if (n.parents[0]->requires_grad) {
      Tensor gx = Tensor::zeros({Ci, H, W});
      for (int o = 0; o < Co; ++o)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            double g = gat(o, oy, ox);
            for (int i = 0; i < Ci; ++i)
              for (int u = 0; u < kh; ++u) {
                int iy = oy * stride - pad + u;
                if (iy < 0 || iy >= H) continue;
                for (int v = 0; v < kw; ++v) {
                  int ix = ox * stride - pad + v;
                  if (ix < 0 || ix >= W) continue;
                  gx[(static_cast<int64_t>(i) * H + iy) * W + ix] +=
                      g * wv[((static_cast<int64_t>(o) * Ci + i) * kh + u) * kw + v];
                }
              }
          }
      n.parents[0]->add_grad(gx);
    }
    if (n.parents[1]->requires_grad) {
      Tensor gw = Tensor::zeros({Co, Ci, kh, kw});
      for (int o = 0; o < Co; ++o)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) {
            double g = gat(o, oy, ox);
            for (int i = 0; i < Ci; ++i)
              for (int u = 0; u < kh; ++u) {
                int iy = oy * stride - pad + u;
                if (iy < 0 || iy >= H) continue;
                for (int v = 0; v < kw; ++v) {
                  int ix = ox * stride - pad + v;
                  if (ix < 0 || ix >= W) continue;
                  gw[((static_cast<int64_t>(o) * Ci + i) * kh + u) * kw + v] +=
                      g * xv[(static_cast<int64_t>(i) * H + iy) * W + ix];
                }
              }
          }
      n.parents[1]->add_grad(gw);
    }
    if (n.parents[2]->requires_grad) {
      Tensor gb = Tensor::zeros({Co});
      for (int o = 0; o < Co; ++o)
        for (int oy = 0; oy < Ho; ++oy)
          for (int ox = 0; ox < Wo; ++ox) gb[o] += gat(o, oy, ox);
      n.parents[2]->add_grad(gb);
    }
  });
}

namespace {
// Shared bilinear corner/weight computation with border clamping.
struct BilinTap {
  int i00, i01, i10, i11;
  double w00, w01, w10, w11;
  double fx, fy;
  int x0, y0;
  bool clamped_x, clamped_y;
};

BilinTap bilin_tap(double x, double y, int gh, int gw) {
  BilinTap t{};
  double xc = std::min(std::max(x, 0.0), static_cast<double>(gw - 1));
  double yc = std::min(std::max(y, 0.0), static_cast<double>(gh - 1));
  t.clamped_x = (xc != x);
  t.clamped_y = (yc != y);
  int x0 = static_cast<int>(std::floor(xc));
  int y0 = static_cast<int>(std::floor(yc));
  if (x0 >= gw - 1) { x0 = gw - 1; t.fx = 0.0; t.clamped_x = t.clamped_x || (gw > 1); }
  else t.fx = xc - x0;
  if (y0 >= gh - 1) { y0 = gh - 1; t.fy = 0.0; t.clamped_y = t.clamped_y || (gh > 1); }
  else t.fy = yc - y0;
  int x1 = std::min(x0 + 1, gw - 1);
  int y1 = std::min(y0 + 1, gh - 1);
  t.x0 = x0;
  t.y0 = y0;
  t.i00 = y0 * gw + x0;
  t.i01 = y0 * gw + x1;
  t.i10 = y1 * gw + x0;
  t.i11 = y1 * gw + x1;
  t.w00 = (1 - t.fx) * (1 - t.fy);
  t.w01 = t.fx * (1 - t.fy);
  t.w10 = (1 - t.fx) * t.fy;
  t.w11 = t.fx * t.fy;
  return t;
}
} // namespace

Var bilinear_rows(Var f, int gh, int gw,
                  const std::vector<std::array<double, 2>> &pts) {
  const int D = f->value.cols();
  if (f->value.rows() != gh * gw) throw ShapeError("bilinear_rows: grid mismatch");
  const int P = static_cast<int>(pts.size());
  std::vector<BilinTap> taps(pts.size());
  Tensor out({P, D});
  for (int p = 0; p < P; ++p) {
    taps[p] = bilin_tap(pts[p][0], pts[p][1], gh, gw);
    const BilinTap &t = taps[p];
    for (int d = 0; d < D; ++d)
      out.at(p, d) = t.w00 * f->value.at(t.i00, d) + t.w01 * f->value.at(t.i01, d) +
                     t.w10 * f->value.at(t.i10, d) + t.w11 * f->value.at(t.i11, d);
  }
  return make(std::move(out), {f}, [taps, D](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    for (size_t p = 0; p < taps.size(); ++p) {
      const BilinTap &t = taps[p];
      for (int d = 0; d < D; ++d) {
        double gv = n.grad.at(static_cast<int>(p), d);
        g.at(t.i00, d) += t.w00 * gv;
        g.at(t.i01, d) += t.w01 * gv;
        g.at(t.i10, d) += t.w10 * gv;
        g.at(t.i11, d) += t.w11 * gv;
      }
    }
    n.parents[0]->add_grad(g);
  });
}

Var bilinear_dynamic(Var f, int gh, int gw, Var pos) {
  const int D = f->value.cols();
  if (f->value.rows() != gh * gw) throw ShapeError("bilinear_dynamic: grid mismatch");
  if (pos->value.cols() != 2) throw ShapeError("bilinear_dynamic: pos must be [P,2]");
  const int P = pos->value.rows();
  std::vector<BilinTap> taps(static_cast<size_t>(P));
  Tensor out({P, D});
  for (int p = 0; p < P; ++p) {
    taps[static_cast<size_t>(p)] =
        bilin_tap(pos->value.at(p, 0), pos->value.at(p, 1), gh, gw);
    const BilinTap &t = taps[static_cast<size_t>(p)];
    for (int d = 0; d < D; ++d)
      out.at(p, d) = t.w00 * f->value.at(t.i00, d) + t.w01 * f->value.at(t.i01, d) +
                     t.w10 * f->value.at(t.i10, d) + t.w11 * f->value.at(t.i11, d);
  }
  return make(std::move(out), {f, pos}, [taps, D, P](Node &n) {
    const Tensor &fv = n.parents[0]->value;
    if (n.parents[0]->requires_grad) {
      Tensor g = Tensor::zeros(fv.shape());
      for (int p = 0; p < P; ++p) {
        const BilinTap &t = taps[static_cast<size_t>(p)];
        for (int d = 0; d < D; ++d) {
          double gv = n.grad.at(p, d);
          g.at(t.i00, d) += t.w00 * gv;
          g.at(t.i01, d) += t.w01 * gv;
          g.at(t.i10, d) += t.w10 * gv;
          g.at(t.i11, d) += t.w11 * gv;
        }
      }
      n.parents[0]->add_grad(g);
    }
    if (n.parents[1]->requires_grad) {
      Tensor gp = Tensor::zeros({P, 2});
      for (int p = 0; p < P; ++p) {
        const BilinTap &t = taps[static_cast<size_t>(p)];
        double gx = 0.0, gy = 0.0;
        for (int d = 0; d < D; ++d) {
          double gv = n.grad.at(p, d);
          double f00 = fv.at(t.i00, d), f01 = fv.at(t.i01, d);
          double f10 = fv.at(t.i10, d), f11 = fv.at(t.i11, d);
          gx += gv * ((f01 - f00) * (1 - t.fy) + (f11 - f10) * t.fy);
          gy += gv * ((f10 - f00) * (1 - t.fx) + (f11 - f01) * t.fx);
        }
        gp.at(p, 0) = t.clamped_x ? 0.0 : gx;
        gp.at(p, 1) = t.clamped_y ? 0.0 : gy;
      }
      n.parents[1]->add_grad(gp);
    }
  });
}

// ---- fused losses ----

Var smooth_l1_mean(Var pred, Tensor target, double beta) {
  if (!pred->value.same_shape(target)) throw ShapeError("smooth_l1: shape mismatch");
  const int64_t N = pred->value.numel();
  if (N == 0) throw ShapeError("smooth_l1: empty input");
  double loss = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    double d = pred->value[i] - target[i];
    double a = std::abs(d);
    loss += (a < beta) ? 0.5 * d * d / beta : a - 0.5 * beta;
  }
  loss /= static_cast<double>(N);
  return make(Tensor::scalar(loss), {pred}, [target, beta, N](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    const double inv = n.grad[0] / static_cast<double>(N);
    for (int64_t i = 0; i < N; ++i) {
      double d = n.parents[0]->value[i] - target[i];
      g[i] = inv * ((std::abs(d) < beta) ? d / beta : (d > 0 ? 1.0 : -1.0));
    }
    n.parents[0]->add_grad(g);
  });
}

Var bce_logits_mean(Var logits, Tensor targets, Tensor mask) {
  if (!logits->value.same_shape(targets) || !logits->value.same_shape(mask))
    throw ShapeError("bce_logits: shape mismatch");
  double count = 0.0;
  for (int64_t i = 0; i < mask.numel(); ++i) count += mask[i];
  if (count <= 0.0) throw ShapeError("bce_logits: empty mask");
  double loss = 0.0;
  for (int64_t i = 0; i < logits->value.numel(); ++i) {
    if (mask[i] == 0.0) continue;
    double x = logits->value[i];
    loss += softplus(x) - targets[i] * x;
  }
  loss /= count;
  return make(Tensor::scalar(loss), {logits}, [targets, mask, count](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    const double inv = n.grad[0] / count;
    for (int64_t i = 0; i < g.numel(); ++i) {
      if (mask[i] == 0.0) continue;
      g[i] = inv * (stable_sigmoid(n.parents[0]->value[i]) - targets[i]);
    }
    n.parents[0]->add_grad(g);
  });
}

Var focal_alignment_mean(Var s, Tensor targets, double alpha, double gamma) {
  if (!s->value.same_shape(targets)) throw ShapeError("focal: shape mismatch");
  const int64_t N = s->value.numel();
  double loss = 0.0;
  for (int64_t i = 0; i < N; ++i) {
    double x = s->value[i];
    double log_p = -softplus(-x);  // log sigmoid(x)
    double log_q = -softplus(x);   // log (1 - sigmoid(x))
    double p = stable_sigmoid(x);
    if (targets[i] > 0.5)
      loss += -alpha * std::pow(1.0 - p, gamma) * log_p;
    else
      loss += -(1.0 - alpha) * std::pow(p, gamma) * log_q;
  }
  loss /= static_cast<double>(N);
  return make(Tensor::scalar(loss), {s}, [targets, alpha, gamma, N](Node &n) {
    Tensor g = Tensor::zeros(n.parents[0]->value.shape());
    const double inv = n.grad[0] / static_cast<double>(N);
    for (int64_t i = 0; i < N; ++i) {
      double x = n.parents[0]->value[i];
      double p = stable_sigmoid(x);
      double log_p = -softplus(-x);
      double log_q = -softplus(x);
      double d;
      if (targets[i] > 0.5)
        d = alpha * gamma * p * std::pow(1.0 - p, gamma) * log_p -
            alpha * std::pow(1.0 - p, gamma + 1.0);
      else
        d = -(1.0 - alpha) * gamma * (1.0 - p) * std::pow(p, gamma) * log_q +
            (1.0 - alpha) * std::pow(p, gamma + 1.0);
      g[i] = inv * d;
    }
    n.parents[0]->add_grad(g);
  });
}

} // namespace ovd::ag
