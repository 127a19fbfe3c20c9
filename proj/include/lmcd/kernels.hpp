#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "lmcd/errors.hpp"
#include "lmcd/tensor.hpp"

namespace lmcd {

enum class Op {
  matmul,
  add,
  sub,
  mul,
  add_rowvec,
  scale,
  reduce_sum,
  concat_rows,
  concat_cols,
  slice_cols,
  take_row,
  embed_rows,
  layer_norm,
  softmax_rows,
  softmax_causal,
  gelu,
  sigmoid,
  softplus,
  log,
  bce,
  count_,
};

constexpr int kOpCount = static_cast<int>(Op::count_);

// Static parameters of an op (transpose flags, slice bounds, lookup ids...).
// These are compile-time-of-the-graph constants, never differentiated.
struct OpAttrs {
  bool trans_a = false;
  bool trans_b = false;
  double scalar = 1.0;  // scale factor
  double eps = 1e-5;    // layer_norm
  int i0 = 0;           // slice begin / row index
  int i1 = 0;           // slice end (exclusive)
  std::vector<int> indices;  // embed_rows
};

template <typename R>
using ForwardFn = Tensor<R> (*)(const std::vector<const Tensor<R>*>&,
                                const OpAttrs&);

// Accumulates d(loss)/d(input_i) into gin[i]; a null slot means that input
// does not need a gradient.  gout has the same layout as the op output.
template <typename R>
using BackwardFn = void (*)(const std::vector<const Tensor<R>*>& inputs,
                            const Tensor<R>& out, const std::vector<R>& gout,
                            const OpAttrs& attrs,
                            const std::vector<std::vector<R>*>& gin);

template <typename R>
struct KernelInfo {
  const char* name;
  int min_arity;
  int max_arity;  // -1 = unbounded
  ForwardFn<R> forward;
  BackwardFn<R> backward;
};

namespace detail {

[[noreturn]] inline void shape_fail(const char* op, const std::string& what) {
  throw ShapeError(std::string(op) + ": " + what);
}

template <typename R>
void expect_same_shape(const char* op, const Tensor<R>& a,
                       const Tensor<R>& b) {
  if (!a.same_shape(b)) {
    shape_fail(op, "shape mismatch " + a.shape_str() + " vs " + b.shape_str());
  }
}

// out(m x n) += op_a(A) * op_b(B) with logical transposes applied.
template <typename R>
void matmul_acc(const R* a, int ar, int ac, bool ta, const R* b, int br,
                int bc, bool tb, R* out) {
  const int m = ta ? ac : ar;
  const int k = ta ? ar : ac;
  const int n = tb ? br : bc;
  if (!ta && !tb) {
    for (int i = 0; i < m; ++i) {
      R* orow = out + static_cast<size_t>(i) * n;
      for (int l = 0; l < k; ++l) {
        const R av = a[static_cast<size_t>(i) * ac + l];
        const R* brow = b + static_cast<size_t>(l) * bc;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) {
    for (int i = 0; i < m; ++i) {
      const R* arow = a + static_cast<size_t>(i) * ac;
      R* orow = out + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const R* brow = b + static_cast<size_t>(j) * bc;
        R s = R(0);
        for (int l = 0; l < k; ++l) s += arow[l] * brow[l];
        orow[j] += s;
      }
    }
  } else if (ta && !tb) {
    for (int l = 0; l < k; ++l) {
      const R* arow = a + static_cast<size_t>(l) * ac;
      const R* brow = b + static_cast<size_t>(l) * bc;
      for (int i = 0; i < m; ++i) {
        const R av = arow[i];
        R* orow = out + static_cast<size_t>(i) * n;
        for (int j = 0; j < n; ++j) orow[j] += av * brow[j];
      }
    }
  } else {
    for (int i = 0; i < m; ++i) {
      R* orow = out + static_cast<size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const R* brow = b + static_cast<size_t>(j) * bc;
        R s = R(0);
        for (int l = 0; l < k; ++l) s += a[static_cast<size_t>(l) * ac + i] * brow[l];
        orow[j] += s;
      }
    }
  }
}

template <typename R>
R stable_sigmoid(R x) {
  if (x >= R(0)) {
    const R e = std::exp(-x);
    return R(1) / (R(1) + e);
  }
  const R e = std::exp(x);
  return e / (R(1) + e);
}

template <typename R>
R stable_softplus(R x) {
  if (x > R(30)) return x;
  if (x < R(-30)) return std::exp(x);
  return std::log1p(std::exp(x));
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)
constexpr double kGeluA = 0.044715;
constexpr double kBceClamp = 1e-6;

// ---- forwards ------------------------------------------------------------

template <typename R>
Tensor<R> fwd_matmul(const std::vector<const Tensor<R>*>& in,
                     const OpAttrs& at) {
  const Tensor<R>& a = *in[0];
  const Tensor<R>& b = *in[1];
  const int m = at.trans_a ? a.cols() : a.rows();
  const int ka = at.trans_a ? a.rows() : a.cols();
  const int kb = at.trans_b ? b.cols() : b.rows();
  const int n = at.trans_b ? b.rows() : b.cols();
  if (ka != kb) {
    shape_fail("matmul", "inner dims " + std::to_string(ka) + " vs " +
                             std::to_string(kb));
  }
  Tensor<R> out(m, n);
  matmul_acc(a.data().data(), a.rows(), a.cols(), at.trans_a, b.data().data(),
             b.rows(), b.cols(), at.trans_b, out.data().data());
  return out;
}

template <typename R>
Tensor<R> fwd_add(const std::vector<const Tensor<R>*>& in, const OpAttrs&) {
  expect_same_shape("add", *in[0], *in[1]);
  Tensor<R> out(in[0]->rows(), in[0]->cols());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = in[0]->data()[i] + in[1]->data()[i];
  }
  return out;
}

template <typename R>
Tensor<R> fwd_sub(const std::vector<const Tensor<R>*>& in, const OpAttrs&) {
  expect_same_shape("sub", *in[0], *in[1]);
  Tensor<R> out(in[0]->rows(), in[0]->cols());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = in[0]->data()[i] - in[1]->data()[i];
  }
  return out;
}

// Elementwise product; either side may be a 1x1 scalar broadcast.
template <typename R>
Tensor<R> fwd_mul(const std::vector<const Tensor<R>*>& in, const OpAttrs&) {
  const Tensor<R>& a = *in[0];
  const Tensor<R>& b = *in[1];
  if (a.size() == 1 && b.size() != 1) {
    Tensor<R> out(b.rows(), b.cols());
    const R s = a.data()[0];
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = s * b.data()[i];
    return out;
  }
  if (b.size() == 1 && a.size() != 1) {
    Tensor<R> out(a.rows(), a.cols());
    const R s = b.data()[0];
    for (size_t i = 0; i < out.size(); ++i) out.data()[i] = a.data()[i] * s;
    return out;
  }
  expect_same_shape("mul", a, b);
  Tensor<R> out(a.rows(), a.cols());
  for (size_t i = 0; i < out.size(); ++i) {
    out.data()[i] = a.data()[i] * b.data()[i];
  }
  return out;
}

template <typename R>
Tensor<R> fwd_add_rowvec(const std::vector<const Tensor<R>*>& in,
                         const OpAttrs&) {
  const Tensor<R>& x = *in[0];
  const Tensor<R>& v = *in[1];
  if (v.rows() != 1 || v.cols() != x.cols()) {
    shape_fail("add_rowvec", "bias " + v.shape_str() + " for input " +
                                 x.shape_str());
  }
  Tensor<R> out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = 0; j < x.cols(); ++j) {
      out.at(i, j) = x.at(i, j) + v.at(0, j);
    }
  }
  return out;
}

template <typename R>
Tensor<R> fwd_scale(const std::vector<const Tensor<R>*>& in,
                    const OpAttrs& at) {
  const Tensor<R>& x = *in[0];
  Tensor<R> out(x.rows(), x.cols());
  const R c = static_cast<R>(at.scalar);
  for (size_t i = 0; i < out.size(); ++i) out.data()[i] = c * x.data()[i];
  return out;
}

template <typename R>
Tensor<R> fwd_reduce_sum(const std::vector<const Tensor<R>*>& in,
                         const OpAttrs&) {
  Tensor<R> out(1, 1);
  R s = R(0);
  for (R x : in[0]->data()) s += x;
  out.data()[0] = s;
  return out;
}

template <typename R>
Tensor<R> fwd_concat_rows(const std::vector<const Tensor<R>*>& in,
                          const OpAttrs&) {
  const Tensor<R>& a = *in[0];
  const Tensor<R>& b = *in[1];
  if (a.cols() != b.cols()) {
    shape_fail("concat_rows", "col mismatch " + a.shape_str() + " vs " +
                                  b.shape_str());
  }
  Tensor<R> out(a.rows() + b.rows(), a.cols());
  std::copy(a.data().begin(), a.data().end(), out.data().begin());
  std::copy(b.data().begin(), b.data().end(),
            out.data().begin() + a.size());
  return out;
}

template <typename R>
Tensor<R> fwd_concat_cols(const std::vector<const Tensor<R>*>& in,
                          const OpAttrs&) {
  const int rows = in[0]->rows();
  int cols = 0;
  for (const Tensor<R>* t : in) {
    if (t->rows() != rows) {
      shape_fail("concat_cols", "row mismatch " + t->shape_str());
    }
    cols += t->cols();
  }
  Tensor<R> out(rows, cols);
  int off = 0;
  for (const Tensor<R>* t : in) {
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < t->cols(); ++j) {
        out.at(i, off + j) = t->at(i, j);
      }
    }
    off += t->cols();
  }
  return out;
}

template <typename R>
Tensor<R> fwd_slice_cols(const std::vector<const Tensor<R>*>& in,
                         const OpAttrs& at) {
  const Tensor<R>& x = *in[0];
  if (at.i0 < 0 || at.i1 <= at.i0 || at.i1 > x.cols()) {
    shape_fail("slice_cols", "range [" + std::to_string(at.i0) + "," +
                                 std::to_string(at.i1) + ") of " +
                                 x.shape_str());
  }
  Tensor<R> out(x.rows(), at.i1 - at.i0);
  for (int i = 0; i < x.rows(); ++i) {
    for (int j = at.i0; j < at.i1; ++j) {
      out.at(i, j - at.i0) = x.at(i, j);
    }
  }
  return out;
}

template <typename R>
Tensor<R> fwd_take_row(const std::vector<const Tensor<R>*>& in,
                       const OpAttrs& at) {
  const Tensor<R>& x = *in[0];
  if (at.i0 < 0 || at.i0 >= x.rows()) {
    shape_fail("take_row", "row " + std::to_string(at.i0) + " of " +
                               x.shape_str());
  }
  Tensor<R> out(1, x.cols());
  for (int j = 0; j < x.cols(); ++j) out.at(0, j) = x.at(at.i0, j);
  return out;
}

template <typename R>
Tensor<R> fwd_embed_rows(const std::vector<const Tensor<R>*>& in,
                         const OpAttrs& at) {
  const Tensor<R>& table = *in[0];
  if (at.indices.empty()) shape_fail("embed_rows", "empty index list");
  Tensor<R> out(static_cast<int>(at.indices.size()), table.cols());
  for (size_t i = 0; i < at.indices.size(); ++i) {
    const int id = at.indices[i];
    if (id < 0 || id >= table.rows()) {
      shape_fail("embed_rows", "index " + std::to_string(id) +
                                   " out of range for " + table.shape_str());
    }
    for (int j = 0; j < table.cols(); ++j) {
      out.at(static_cast<int>(i), j) = table.at(id, j);
    }
  }
  return out;
}

template <typename R>
Tensor<R> fwd_layer_norm(const std::vector<const Tensor<R>*>& in,
                         const OpAttrs& at) {
  const Tensor<R>& x = *in[0];
  const Tensor<R>& gamma = *in[1];
  const Tensor<R>& beta = *in[2];
  if (gamma.rows() != 1 || gamma.cols() != x.cols() ||
      beta.rows() != 1 || beta.cols() != x.cols()) {
    shape_fail("layer_norm", "gamma/beta must be 1x" +
                                 std::to_string(x.cols()));
  }
  Tensor<R> out(x.rows(), x.cols());
  const int n = x.cols();
  for (int i = 0; i < x.rows(); ++i) {
    R mean = R(0);
    for (int j = 0; j < n; ++j) mean += x.at(i, j);
    mean /= R(n);
    R var = R(0);
    for (int j = 0; j < n; ++j) {
      const R d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= R(n);
    const R inv = R(1) / std::sqrt(var + static_cast<R>(at.eps));
    for (int j = 0; j < n; ++j) {
      out.at(i, j) = gamma.at(0, j) * ((x.at(i, j) - mean) * inv) +
                     beta.at(0, j);
    }
  }
  return out;
}

template <typename R>
Tensor<R> fwd_softmax_rows(const std::vector<const Tensor<R>*>& in,
                           const OpAttrs&) {
  const Tensor<R>& x = *in[0];
  Tensor<R> out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    R mx = x.at(i, 0);
    for (int j = 1; j < x.cols(); ++j) mx = std::max(mx, x.at(i, j));
    R z = R(0);
    for (int j = 0; j < x.cols(); ++j) {
      const R e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j < x.cols(); ++j) out.at(i, j) /= z;
  }
  return out;
}

// Row i is normalized over columns 0..i only; later columns are exactly zero,
// so position i can never attend to positions after it.
template <typename R>
Tensor<R> fwd_softmax_causal(const std::vector<const Tensor<R>*>& in,
                             const OpAttrs&) {
  const Tensor<R>& x = *in[0];
  if (x.rows() != x.cols()) {
    shape_fail("softmax_causal", "expects square scores, got " +
                                     x.shape_str());
  }
  Tensor<R> out(x.rows(), x.cols());
  for (int i = 0; i < x.rows(); ++i) {
    R mx = x.at(i, 0);
    for (int j = 1; j <= i; ++j) mx = std::max(mx, x.at(i, j));
    R z = R(0);
    for (int j = 0; j <= i; ++j) {
      const R e = std::exp(x.at(i, j) - mx);
      out.at(i, j) = e;
      z += e;
    }
    for (int j = 0; j <= i; ++j) out.at(i, j) /= z;
    for (int j = i + 1; j < x.cols(); ++j) out.at(i, j) = R(0);
  }
  return out;
}

template <typename R>
Tensor<R> fwd_gelu(const std::vector<const Tensor<R>*>& in, const OpAttrs&) {
  const Tensor<R>& x = *in[0];
  Tensor<R> out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    const R v = x.data()[i];
    const R u = static_cast<R>(kGeluC) *
                (v + static_cast<R>(kGeluA) * v * v * v);
    out.data()[i] = R(0.5) * v * (R(1) + std::tanh(u));
  }
  return out;
}

template <typename R>
Tensor<R> fwd_sigmoid(const std::vector<const Tensor<R>*>& in,
                      const OpAttrs&) {
  const Tensor<R>& x = *in[0];
  Tensor<R> out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    out.data()[i] = stable_sigmoid(x.data()[i]);
  }
  return out;
}

template <typename R>
Tensor<R> fwd_softplus(const std::vector<const Tensor<R>*>& in,
                       const OpAttrs&) {
  const Tensor<R>& x = *in[0];
  Tensor<R> out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) {
    out.data()[i] = stable_softplus(x.data()[i]);
  }
  return out;
}

template <typename R>
Tensor<R> fwd_log(const std::vector<const Tensor<R>*>& in, const OpAttrs&) {
  const Tensor<R>& x = *in[0];
  Tensor<R> out(x.rows(), x.cols());
  for (size_t i = 0; i < x.size(); ++i) out.data()[i] = std::log(x.data()[i]);
  return out;
}

// Mean binary cross-entropy; predictions clamped away from {0,1} so the loss
// stays finite on saturated outputs.
template <typename R>
Tensor<R> fwd_bce(const std::vector<const Tensor<R>*>& in, const OpAttrs&) {
  const Tensor<R>& pred = *in[0];
  const Tensor<R>& target = *in[1];
  expect_same_shape("bce", pred, target);
  const R lo = static_cast<R>(kBceClamp);
  const R hi = R(1) - lo;
  R loss = R(0);
  for (size_t i = 0; i < pred.size(); ++i) {
    const R p = std::min(hi, std::max(lo, pred.data()[i]));
    const R t = target.data()[i];
    loss -= t * std::log(p) + (R(1) - t) * std::log(R(1) - p);
  }
  Tensor<R> out(1, 1);
  out.data()[0] = loss / static_cast<R>(pred.size());
  return out;
}

// ---- backwards -----------------------------------------------------------

template <typename R>
void bwd_matmul(const std::vector<const Tensor<R>*>& in, const Tensor<R>& out,
                const std::vector<R>& gout, const OpAttrs& at,
                const std::vector<std::vector<R>*>& gin) {
  const Tensor<R>& a = *in[0];
  const Tensor<R>& b = *in[1];
  const int m = out.rows();
  const int n = out.cols();
  if (gin[0]) {
    if (!at.trans_a) {
      matmul_acc(gout.data(), m, n, false, b.data().data(), b.rows(), b.cols(),
                 !at.trans_b, gin[0]->data());
    } else {
      matmul_acc(b.data().data(), b.rows(), b.cols(), at.trans_b, gout.data(),
                 m, n, true, gin[0]->data());
    }
  }
  if (gin[1]) {
    if (!at.trans_b) {
      matmul_acc(a.data().data(), a.rows(), a.cols(), !at.trans_a, gout.data(),
                 m, n, false, gin[1]->data());
    } else {
      matmul_acc(gout.data(), m, n, true, a.data().data(), a.rows(), a.cols(),
                 at.trans_a, gin[1]->data());
    }
  }
}

template <typename R>
void bwd_add(const std::vector<const Tensor<R>*>&, const Tensor<R>&,
             const std::vector<R>& gout, const OpAttrs&,
             const std::vector<std::vector<R>*>& gin) {
  for (int s = 0; s < 2; ++s) {
    if (!gin[s]) continue;
    for (size_t i = 0; i < gout.size(); ++i) (*gin[s])[i] += gout[i];
  }
}

template <typename R>
void bwd_sub(const std::vector<const Tensor<R>*>&, const Tensor<R>&,
             const std::vector<R>& gout, const OpAttrs&,
             const std::vector<std::vector<R>*>& gin) {
  if (gin[0]) {
    for (size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i];
  }
  if (gin[1]) {
    for (size_t i = 0; i < gout.size(); ++i) (*gin[1])[i] -= gout[i];
  }
}

template <typename R>
void bwd_mul(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
             const std::vector<R>& gout, const OpAttrs&,
             const std::vector<std::vector<R>*>& gin) {
  const Tensor<R>& a = *in[0];
  const Tensor<R>& b = *in[1];
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (gin[0]) {
    if (a_scalar) {
      R s = R(0);
      for (size_t i = 0; i < gout.size(); ++i) s += gout[i] * b.data()[i];
      (*gin[0])[0] += s;
    } else if (b_scalar) {
      const R s = b.data()[0];
      for (size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i] * s;
    } else {
      for (size_t i = 0; i < gout.size(); ++i) {
        (*gin[0])[i] += gout[i] * b.data()[i];
      }
    }
  }
  if (gin[1]) {
    if (b_scalar) {
      R s = R(0);
      for (size_t i = 0; i < gout.size(); ++i) s += gout[i] * a.data()[i];
      (*gin[1])[0] += s;
    } else if (a_scalar) {
      const R s = a.data()[0];
      for (size_t i = 0; i < gout.size(); ++i) (*gin[1])[i] += gout[i] * s;
    } else {
      for (size_t i = 0; i < gout.size(); ++i) {
        (*gin[1])[i] += gout[i] * a.data()[i];
      }
    }
  }
}

template <typename R>
void bwd_add_rowvec(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                    const std::vector<R>& gout, const OpAttrs&,
                    const std::vector<std::vector<R>*>& gin) {
  const int rows = in[0]->rows();
  const int cols = in[0]->cols();
  if (gin[0]) {
    for (size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += gout[i];
  }
  if (gin[1]) {
    for (int i = 0; i < rows; ++i) {
      for (int j = 0; j < cols; ++j) {
        (*gin[1])[j] += gout[static_cast<size_t>(i) * cols + j];
      }
    }
  }
}

template <typename R>
void bwd_scale(const std::vector<const Tensor<R>*>&, const Tensor<R>&,
               const std::vector<R>& gout, const OpAttrs& at,
               const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  const R c = static_cast<R>(at.scalar);
  for (size_t i = 0; i < gout.size(); ++i) (*gin[0])[i] += c * gout[i];
}

template <typename R>
void bwd_reduce_sum(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                    const std::vector<R>& gout, const OpAttrs&,
                    const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  for (size_t i = 0; i < in[0]->size(); ++i) (*gin[0])[i] += gout[0];
}

template <typename R>
void bwd_concat_rows(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                     const std::vector<R>& gout, const OpAttrs&,
                     const std::vector<std::vector<R>*>& gin) {
  const size_t na = in[0]->size();
  if (gin[0]) {
    for (size_t i = 0; i < na; ++i) (*gin[0])[i] += gout[i];
  }
  if (gin[1]) {
    for (size_t i = 0; i < in[1]->size(); ++i) (*gin[1])[i] += gout[na + i];
  }
}

template <typename R>
void bwd_concat_cols(const std::vector<const Tensor<R>*>& in,
                     const Tensor<R>& out, const std::vector<R>& gout,
                     const OpAttrs&, const std::vector<std::vector<R>*>& gin) {
  const int rows = out.rows();
  const int ocols = out.cols();
  int off = 0;
  for (size_t s = 0; s < in.size(); ++s) {
    const int c = in[s]->cols();
    if (gin[s]) {
      for (int i = 0; i < rows; ++i) {
        for (int j = 0; j < c; ++j) {
          (*gin[s])[static_cast<size_t>(i) * c + j] +=
              gout[static_cast<size_t>(i) * ocols + off + j];
        }
      }
    }
    off += c;
  }
}

template <typename R>
void bwd_slice_cols(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                    const std::vector<R>& gout, const OpAttrs& at,
                    const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  const int cols = in[0]->cols();
  const int w = at.i1 - at.i0;
  for (int i = 0; i < in[0]->rows(); ++i) {
    for (int j = 0; j < w; ++j) {
      (*gin[0])[static_cast<size_t>(i) * cols + at.i0 + j] +=
          gout[static_cast<size_t>(i) * w + j];
    }
  }
}

template <typename R>
void bwd_take_row(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                  const std::vector<R>& gout, const OpAttrs& at,
                  const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  const int cols = in[0]->cols();
  for (int j = 0; j < cols; ++j) {
    (*gin[0])[static_cast<size_t>(at.i0) * cols + j] += gout[j];
  }
}

template <typename R>
void bwd_embed_rows(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                    const std::vector<R>& gout, const OpAttrs& at,
                    const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  const int cols = in[0]->cols();
  for (size_t i = 0; i < at.indices.size(); ++i) {
    const size_t dst = static_cast<size_t>(at.indices[i]) * cols;
    const size_t src = i * cols;
    for (int j = 0; j < cols; ++j) (*gin[0])[dst + j] += gout[src + j];
  }
}

template <typename R>
void bwd_layer_norm(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                    const std::vector<R>& gout, const OpAttrs& at,
                    const std::vector<std::vector<R>*>& gin) {
  const Tensor<R>& x = *in[0];
  const Tensor<R>& gamma = *in[1];
  const int n = x.cols();
  std::vector<R> xhat(n);
  for (int i = 0; i < x.rows(); ++i) {
    R mean = R(0);
    for (int j = 0; j < n; ++j) mean += x.at(i, j);
    mean /= R(n);
    R var = R(0);
    for (int j = 0; j < n; ++j) {
      const R d = x.at(i, j) - mean;
      var += d * d;
    }
    var /= R(n);
    const R inv = R(1) / std::sqrt(var + static_cast<R>(at.eps));
    for (int j = 0; j < n; ++j) xhat[j] = (x.at(i, j) - mean) * inv;
    const R* grow = gout.data() + static_cast<size_t>(i) * n;
    if (gin[1]) {
      for (int j = 0; j < n; ++j) (*gin[1])[j] += grow[j] * xhat[j];
    }
    if (gin[2]) {
      for (int j = 0; j < n; ++j) (*gin[2])[j] += grow[j];
    }
    if (gin[0]) {
      R sum_g = R(0);
      R sum_gx = R(0);
      for (int j = 0; j < n; ++j) {
        const R gh = grow[j] * gamma.at(0, j);
        sum_g += gh;
        sum_gx += gh * xhat[j];
      }
      for (int j = 0; j < n; ++j) {
        const R gh = grow[j] * gamma.at(0, j);
        (*gin[0])[static_cast<size_t>(i) * n + j] +=
            inv * (gh - sum_g / R(n) - xhat[j] * sum_gx / R(n));
      }
    }
  }
}

template <typename R>
void bwd_softmax_rows(const std::vector<const Tensor<R>*>&,
                      const Tensor<R>& out, const std::vector<R>& gout,
                      const OpAttrs&, const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  const int n = out.cols();
  for (int i = 0; i < out.rows(); ++i) {
    const R* y = out.data().data() + static_cast<size_t>(i) * n;
    const R* g = gout.data() + static_cast<size_t>(i) * n;
    R dot = R(0);
    for (int j = 0; j < n; ++j) dot += g[j] * y[j];
    for (int j = 0; j < n; ++j) {
      (*gin[0])[static_cast<size_t>(i) * n + j] += y[j] * (g[j] - dot);
    }
  }
}

template <typename R>
void bwd_softmax_causal(const std::vector<const Tensor<R>*>&,
                        const Tensor<R>& out, const std::vector<R>& gout,
                        const OpAttrs&,
                        const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  const int n = out.cols();
  for (int i = 0; i < out.rows(); ++i) {
    const R* y = out.data().data() + static_cast<size_t>(i) * n;
    const R* g = gout.data() + static_cast<size_t>(i) * n;
    R dot = R(0);
    for (int j = 0; j <= i; ++j) dot += g[j] * y[j];
    for (int j = 0; j <= i; ++j) {
      (*gin[0])[static_cast<size_t>(i) * n + j] += y[j] * (g[j] - dot);
    }
  }
}

template <typename R>
void bwd_gelu(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
              const std::vector<R>& gout, const OpAttrs&,
              const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  for (size_t i = 0; i < gout.size(); ++i) {
    const R v = in[0]->data()[i];
    const R u = static_cast<R>(kGeluC) *
                (v + static_cast<R>(kGeluA) * v * v * v);
    const R t = std::tanh(u);
    const R du = static_cast<R>(kGeluC) *
                 (R(1) + R(3) * static_cast<R>(kGeluA) * v * v);
    const R dy = R(0.5) * (R(1) + t) + R(0.5) * v * (R(1) - t * t) * du;
    (*gin[0])[i] += gout[i] * dy;
  }
}

template <typename R>
void bwd_sigmoid(const std::vector<const Tensor<R>*>&, const Tensor<R>& out,
                 const std::vector<R>& gout, const OpAttrs&,
                 const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  for (size_t i = 0; i < gout.size(); ++i) {
    const R y = out.data()[i];
    (*gin[0])[i] += gout[i] * y * (R(1) - y);
  }
}

template <typename R>
void bwd_softplus(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
                  const std::vector<R>& gout, const OpAttrs&,
                  const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  for (size_t i = 0; i < gout.size(); ++i) {
    (*gin[0])[i] += gout[i] * stable_sigmoid(in[0]->data()[i]);
  }
}

template <typename R>
void bwd_log(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
             const std::vector<R>& gout, const OpAttrs&,
             const std::vector<std::vector<R>*>& gin) {
  if (!gin[0]) return;
  for (size_t i = 0; i < gout.size(); ++i) {
    (*gin[0])[i] += gout[i] / in[0]->data()[i];
  }
}

template <typename R>
void bwd_bce(const std::vector<const Tensor<R>*>& in, const Tensor<R>&,
             const std::vector<R>& gout, const OpAttrs&,
             const std::vector<std::vector<R>*>& gin) {
  const Tensor<R>& pred = *in[0];
  const Tensor<R>& target = *in[1];
  const R lo = static_cast<R>(kBceClamp);
  const R hi = R(1) - lo;
  const R inv_n = R(1) / static_cast<R>(pred.size());
  const R g = gout[0];
  for (size_t i = 0; i < pred.size(); ++i) {
    const R p = pred.data()[i];
    const R pc = std::min(hi, std::max(lo, p));
    if (gin[0]) {
      // d/dp of clamp(p) is zero outside the clamp window.
      if (p >= lo && p <= hi) {
        (*gin[0])[i] +=
            g * inv_n * (pc - target.data()[i]) / (pc * (R(1) - pc));
      }
    }
    if (gin[1]) {
      (*gin[1])[i] -= g * inv_n * (std::log(pc) - std::log(R(1) - pc));
    }
  }
}

}  // namespace detail

template <typename R>
const KernelInfo<R>& kernel_info(Op op) {
  static const KernelInfo<R> table[kOpCount] = {
      {"matmul", 2, 2, &detail::fwd_matmul<R>, &detail::bwd_matmul<R>},
      {"add", 2, 2, &detail::fwd_add<R>, &detail::bwd_add<R>},
      {"sub", 2, 2, &detail::fwd_sub<R>, &detail::bwd_sub<R>},
      {"mul", 2, 2, &detail::fwd_mul<R>, &detail::bwd_mul<R>},
      {"add_rowvec", 2, 2, &detail::fwd_add_rowvec<R>,
       &detail::bwd_add_rowvec<R>},
      {"scale", 1, 1, &detail::fwd_scale<R>, &detail::bwd_scale<R>},
      {"reduce_sum", 1, 1, &detail::fwd_reduce_sum<R>,
       &detail::bwd_reduce_sum<R>},
      {"concat_rows", 2, 2, &detail::fwd_concat_rows<R>,
       &detail::bwd_concat_rows<R>},
      {"concat_cols", 1, -1, &detail::fwd_concat_cols<R>,
       &detail::bwd_concat_cols<R>},
      {"slice_cols", 1, 1, &detail::fwd_slice_cols<R>,
       &detail::bwd_slice_cols<R>},
      {"take_row", 1, 1, &detail::fwd_take_row<R>, &detail::bwd_take_row<R>},
      {"embed_rows", 1, 1, &detail::fwd_embed_rows<R>,
       &detail::bwd_embed_rows<R>},
      {"layer_norm", 3, 3, &detail::fwd_layer_norm<R>,
       &detail::bwd_layer_norm<R>},
      {"softmax_rows", 1, 1, &detail::fwd_softmax_rows<R>,
       &detail::bwd_softmax_rows<R>},
      {"softmax_causal", 1, 1, &detail::fwd_softmax_causal<R>,
       &detail::bwd_softmax_causal<R>},
      {"gelu", 1, 1, &detail::fwd_gelu<R>, &detail::bwd_gelu<R>},
      {"sigmoid", 1, 1, &detail::fwd_sigmoid<R>, &detail::bwd_sigmoid<R>},
      {"softplus", 1, 1, &detail::fwd_softplus<R>, &detail::bwd_softplus<R>},
      {"log", 1, 1, &detail::fwd_log<R>, &detail::bwd_log<R>},
      {"bce", 2, 2, &detail::fwd_bce<R>, &detail::bwd_bce<R>},
  };
  return table[static_cast<int>(op)];
}

inline const char* op_name(Op op) { return kernel_info<double>(op).name; }

}  // namespace lmcd
