#include "ovd/tensor.hpp"

#include <cmath>
#include <cstring>

#include <Eigen/Dense>

namespace ovd {

namespace {
using MatMap = Eigen::Map<
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic,
                                                   Eigen::Dynamic, Eigen::RowMajor>>;

void check2d(const Tensor &t, const char *name) {
  if (t.ndim() != 2) throw ShapeError(std::string(name) + " must be 2-D");
}
} // namespace

Tensor matmul(const Tensor &a, const Tensor &b) {
  check2d(a, "matmul lhs");
  check2d(b, "matmul rhs");
  if (a.cols() != b.rows()) throw ShapeError("matmul inner dims differ");
  Tensor out({a.rows(), b.cols()});
  ConstMatMap ma(a.data(), a.rows(), a.cols());
  ConstMatMap mb(b.data(), b.rows(), b.cols());
  MatMap mo(out.data(), out.rows(), out.cols());
  mo.noalias() = ma * mb;
  return out;
}

Tensor matmul_nt(const Tensor &a, const Tensor &b) {
  check2d(a, "matmul_nt lhs");
  check2d(b, "matmul_nt rhs");
  if (a.cols() != b.cols()) throw ShapeError("matmul_nt inner dims differ");
  Tensor out({a.rows(), b.rows()});
  ConstMatMap ma(a.data(), a.rows(), a.cols());
  ConstMatMap mb(b.data(), b.rows(), b.cols());
  MatMap mo(out.data(), out.rows(), out.cols());
  mo.noalias() = ma * mb.transpose();
  return out;
}

Tensor matmul_tn(const Tensor &a, const Tensor &b) {
  check2d(a, "matmul_tn lhs");
  check2d(b, "matmul_tn rhs");
  if (a.rows() != b.rows()) throw ShapeError("matmul_tn inner dims differ");
  Tensor out({a.cols(), b.cols()});
  ConstMatMap ma(a.data(), a.rows(), a.cols());
  ConstMatMap mb(b.data(), b.rows(), b.cols());
  MatMap mo(out.data(), out.rows(), out.cols());
  mo.noalias() = ma.transpose() * mb;
  return out;
}

Tensor transpose2d(const Tensor &a) {
  check2d(a, "transpose");
  Tensor out({a.cols(), a.rows()});
  for (int r = 0; r < a.rows(); ++r)
    for (int c = 0; c < a.cols(); ++c) out.at(c, r) = a.at(r, c);
  return out;
}

bool all_finite(const Tensor &t) {
  for (int64_t i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t[i])) return false;
  return true;
}

double checksum(const Tensor &t) {
  // FNV over the raw bit patterns, folded to a double; any bit flip in any
  // element changes the value.
  uint64_t h = 0xcbf29ce484222325ULL;
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = t[i];
    uint64_t bits;
    std::memcpy(&bits, &v, sizeof(bits));
    for (int b = 0; b < 8; ++b) {
      h ^= (bits >> (8 * b)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  }
  return static_cast<double>(h);
}

} // namespace ovd
