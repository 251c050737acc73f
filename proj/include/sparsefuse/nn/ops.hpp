#ifndef SPARSEFUSE_NN_OPS_HPP
#define SPARSEFUSE_NN_OPS_HPP

#include <algorithm>
#include <cmath>
#include <vector>

#include "sparsefuse/nn/tensor.hpp"

namespace sparsefuse::nn {

// ---------------------------------------------------------------------------
// Raw kernels (accumulate-into-C). The ikj order keeps the inner loop
// contiguous on both operands so the compiler can vectorize it.

inline void mm_nn_acc(const double* A, const double* B, double* C, int n, int k, int m) {
  for (int i = 0; i < n; ++i) {
    const double* a_row = A + static_cast<size_t>(i) * k;
    double* c_row = C + static_cast<size_t>(i) * m;
    for (int kk = 0; kk < k; ++kk) {
      double a = a_row[kk];
      if (a == 0.0) continue;
      const double* b_row = B + static_cast<size_t>(kk) * m;
      for (int j = 0; j < m; ++j) c_row[j] += a * b_row[j];
    }
  }
}

inline void mm_nt_acc(const double* A, const double* B, double* C, int n, int k, int m) {
  // C[n,m] += A[n,k] * B[m,k]^T
  for (int i = 0; i < n; ++i) {
    const double* a_row = A + static_cast<size_t>(i) * k;
    double* c_row = C + static_cast<size_t>(i) * m;
    for (int j = 0; j < m; ++j) {
      const double* b_row = B + static_cast<size_t>(j) * k;
      double s = 0;
      for (int kk = 0; kk < k; ++kk) s += a_row[kk] * b_row[kk];
      c_row[j] += s;
    }
  }
}

inline void mm_tn_acc(const double* A, const double* B, double* C, int k, int n, int m) {
  // C[n,m] += A[k,n]^T * B[k,m]
  for (int kk = 0; kk < k; ++kk) {
    const double* a_row = A + static_cast<size_t>(kk) * n;
    const double* b_row = B + static_cast<size_t>(kk) * m;
    for (int i = 0; i < n; ++i) {
      double a = a_row[i];
      if (a == 0.0) continue;
      double* c_row = C + static_cast<size_t>(i) * m;
      for (int j = 0; j < m; ++j) c_row[j] += a * b_row[j];
    }
  }
}

// ---------------------------------------------------------------------------
// Elementwise

inline TensorPtr add(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "add");
  auto out = make_op(a->shape, {a, b}, [a, b](Tensor& self) {
    if (a->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    if (b->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i];
  });
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] + b->values[i];
  return out;
}

inline TensorPtr sub(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "sub");
  auto out = make_op(a->shape, {a, b}, [a, b](Tensor& self) {
    if (a->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i];
    if (b->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] -= self.grad[i];
  });
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] - b->values[i];
  return out;
}

inline TensorPtr mul(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "mul");
  auto out = make_op(a->shape, {a, b}, [a, b](Tensor& self) {
    if (a->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * b->values[i];
    if (b->requires_grad)
      for (size_t i = 0; i < self.grad.size(); ++i) b->grad[i] += self.grad[i] * a->values[i];
  });
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * b->values[i];
  return out;
}

inline TensorPtr scale(const TensorPtr& a, double s) {
  auto out = make_op(a->shape, {a}, [a, s](Tensor& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) a->grad[i] += self.grad[i] * s;
  });
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = a->values[i] * s;
  return out;
}

inline TensorPtr relu(const TensorPtr& a) {
  auto out = make_op(a->shape, {a}, [a](Tensor& self) {
    for (size_t i = 0; i < self.grad.size(); ++i)
      if (a->values[i] > 0) a->grad[i] += self.grad[i];
  });
  for (size_t i = 0; i < out->values.size(); ++i) out->values[i] = std::max(0.0, a->values[i]);
  return out;
}

inline TensorPtr sigmoid(const TensorPtr& a) {
  auto out = make_op(a->shape, {a}, [a](Tensor& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      double y = self.values[i];
      a->grad[i] += self.grad[i] * y * (1.0 - y);
    }
  });
  for (size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = 1.0 / (1.0 + std::exp(-a->values[i]));
  return out;
}

// Elementwise max; ties route the gradient to the first argument.
inline TensorPtr max_elem(const TensorPtr& a, const TensorPtr& b) {
  check_same_shape(*a, *b, "max_elem");
  auto out = make_op(a->shape, {a, b}, [a, b](Tensor& self) {
    for (size_t i = 0; i < self.grad.size(); ++i) {
      if (a->values[i] >= b->values[i]) {
        if (a->requires_grad) a->grad[i] += self.grad[i];
      } else if (b->requires_grad) {
        b->grad[i] += self.grad[i];
      }
    }
  });
  for (size_t i = 0; i < out->values.size(); ++i)
    out->values[i] = std::max(a->values[i], b->values[i]);
  return out;
}

// Scale each row of x [n,c] by the matching entry of w [n,1] (or [n]).
inline TensorPtr mul_colvec(const TensorPtr& x, const TensorPtr& w) {
  int n = x->dim(0), c = x->dim(1);
  if (w->size() != n) throw ConfigError("mul_colvec: weight count != rows");
  auto out = make_op(x->shape, {x, w}, [x, w, n, c](Tensor& self) {
    for (int i = 0; i < n; ++i) {
      double wi = w->values[static_cast<size_t>(i)];
      double acc = 0;
      for (int j = 0; j < c; ++j) {
        size_t idx = static_cast<size_t>(i) * c + j;
        if (x->requires_grad) x->grad[idx] += self.grad[idx] * wi;
        acc += self.grad[idx] * x->values[idx];
      }
      if (w->requires_grad) w->grad[static_cast<size_t>(i)] += acc;
    }
  });
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < c; ++j)
      out->values[static_cast<size_t>(i) * c + j] =
          x->values[static_cast<size_t>(i) * c + j] * w->values[static_cast<size_t>(i)];
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products

inline TensorPtr matmul(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(0))
    throw ConfigError("matmul: incompatible shapes " + shape_str(a->shape) + " x " +
                      shape_str(b->shape));
  int n = a->dim(0), k = a->dim(1), m = b->dim(1);
  auto out = make_op({n, m}, {a, b}, [a, b, n, k, m](Tensor& self) {
    if (a->requires_grad) mm_nt_acc(self.grad.data(), b->values.data(), a->grad.data(), n, m, k);
    if (b->requires_grad) mm_tn_acc(a->values.data(), self.grad.data(), b->grad.data(), n, k, m);
  });
  mm_nn_acc(a->values.data(), b->values.data(), out->values.data(), n, k, m);
  return out;
}

// a [n,k] times b[m,k]^T -> [n,m]
inline TensorPtr matmul_nt(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->dim(1) != b->dim(1))
    throw ConfigError("matmul_nt: incompatible shapes " + shape_str(a->shape) + " x " +
                      shape_str(b->shape));
  int n = a->dim(0), k = a->dim(1), m = b->dim(0);
  auto out = make_op({n, m}, {a, b}, [a, b, n, k, m](Tensor& self) {
    if (a->requires_grad) mm_nn_acc(self.grad.data(), b->values.data(), a->grad.data(), n, m, k);
    if (b->requires_grad) mm_tn_acc(self.grad.data(), a->values.data(), b->grad.data(), n, m, k);
  });
  mm_nt_acc(a->values.data(), b->values.data(), out->values.data(), n, k, m);
  return out;
}

// Affine map: y [n,out] = x [n,in] * W [in,out] + b [out]
inline TensorPtr linear(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b) {
  if (x->rank() != 2 || W->rank() != 2 || x->dim(1) != W->dim(0) || b->size() != W->dim(1))
    throw ConfigError("linear: incompatible shapes x" + shape_str(x->shape) + " W" +
                      shape_str(W->shape) + " b" + shape_str(b->shape));
  int n = x->dim(0), in = x->dim(1), out_c = W->dim(1);
  auto out = make_op({n, out_c}, {x, W, b}, [x, W, b, n, in, out_c](Tensor& self) {
    if (x->requires_grad)
      mm_nt_acc(self.grad.data(), W->values.data(), x->grad.data(), n, out_c, in);
    if (W->requires_grad)
      mm_tn_acc(x->values.data(), self.grad.data(), W->grad.data(), n, in, out_c);
    if (b->requires_grad)
      for (int i = 0; i < n; ++i)
        for (int j = 0; j < out_c; ++j)
          b->grad[static_cast<size_t>(j)] += self.grad[static_cast<size_t>(i) * out_c + j];
  });
  for (int i = 0; i < n; ++i) {
    double* row = out->values.data() + static_cast<size_t>(i) * out_c;
    for (int j = 0; j < out_c; ++j) row[j] = b->values[static_cast<size_t>(j)];
  }
  mm_nn_acc(x->values.data(), W->values.data(), out->values.data(), n, in, out_c);
  return out;
}

// ---------------------------------------------------------------------------
// Normalization and softmax

// Per-row normalization of a [n,c] tensor with affine gamma/beta [c].
inline TensorPtr layer_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                            double eps = 1e-5) {
  if (x->rank() != 2 || gamma->size() != x->dim(1) || beta->size() != x->dim(1))
    throw ConfigError("layer_norm: incompatible shapes");
  int n = x->dim(0), c = x->dim(1);
  auto out = make_op(x->shape, {x, gamma, beta}, [x, gamma, beta, n, c, eps](Tensor& self) {
    for (int i = 0; i < n; ++i) {
      const double* xr = x->values.data() + static_cast<size_t>(i) * c;
      const double* gr = self.grad.data() + static_cast<size_t>(i) * c;
      double mu = 0, var = 0;
      for (int j = 0; j < c; ++j) mu += xr[j];
      mu /= c;
      for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
      var /= c;
      double inv = 1.0 / std::sqrt(var + eps);
      double sum_dxhat = 0, sum_dxhat_xhat = 0;
      std::vector<double> dxhat(static_cast<size_t>(c));
      for (int j = 0; j < c; ++j) {
        double xhat = (xr[j] - mu) * inv;
        dxhat[static_cast<size_t>(j)] = gr[j] * gamma->values[static_cast<size_t>(j)];
        sum_dxhat += dxhat[static_cast<size_t>(j)];
        sum_dxhat_xhat += dxhat[static_cast<size_t>(j)] * xhat;
        if (gamma->requires_grad) gamma->grad[static_cast<size_t>(j)] += gr[j] * xhat;
        if (beta->requires_grad) beta->grad[static_cast<size_t>(j)] += gr[j];
      }
      if (x->requires_grad)
        for (int j = 0; j < c; ++j) {
          double xhat = (xr[j] - mu) * inv;
          x->grad[static_cast<size_t>(i) * c + j] +=
              inv * (dxhat[static_cast<size_t>(j)] - sum_dxhat / c - xhat * sum_dxhat_xhat / c);
        }
    }
  });
  for (int i = 0; i < n; ++i) {
    const double* xr = x->values.data() + static_cast<size_t>(i) * c;
    double* yr = out->values.data() + static_cast<size_t>(i) * c;
    double mu = 0, var = 0;
    for (int j = 0; j < c; ++j) mu += xr[j];
    mu /= c;
    for (int j = 0; j < c; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= c;
    double inv = 1.0 / std::sqrt(var + eps);
    for (int j = 0; j < c; ++j)
      yr[j] = (xr[j] - mu) * inv * gamma->values[static_cast<size_t>(j)] +
              beta->values[static_cast<size_t>(j)];
  }
  return out;
}

// Softmax over the last axis of a rank-1 or rank-2 tensor.
inline TensorPtr softmax(const TensorPtr& x) {
  int n = x->rank() == 1 ? 1 : x->dim(0);
  int m = x->rank() == 1 ? x->dim(0) : x->dim(1);
  if (x->rank() > 2) throw ConfigError("softmax: rank must be 1 or 2");
  auto out = make_op(x->shape, {x}, [x, n, m](Tensor& self) {
    for (int i = 0; i < n; ++i) {
      const double* y = self.values.data() + static_cast<size_t>(i) * m;
      const double* gy = self.grad.data() + static_cast<size_t>(i) * m;
      double dot = 0;
      for (int j = 0; j < m; ++j) dot += gy[j] * y[j];
      for (int j = 0; j < m; ++j)
        x->grad[static_cast<size_t>(i) * m + j] += (gy[j] - dot) * y[j];
    }
  });
  for (int i = 0; i < n; ++i) {
    const double* xr = x->values.data() + static_cast<size_t>(i) * m;
    double* yr = out->values.data() + static_cast<size_t>(i) * m;
    double mx = xr[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, xr[j]);
    double z = 0;
    for (int j = 0; j < m; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (int j = 0; j < m; ++j) yr[j] /= z;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape surgery

inline TensorPtr concat_cols(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 2 || b->rank() != 2 || a->dim(0) != b->dim(0))
    throw ConfigError("concat_cols: row mismatch");
  int n = a->dim(0), ca = a->dim(1), cb = b->dim(1);
  auto out = make_op({n, ca + cb}, {a, b}, [a, b, n, ca, cb](Tensor& self) {
    for (int i = 0; i < n; ++i) {
      const double* g = self.grad.data() + static_cast<size_t>(i) * (ca + cb);
      if (a->requires_grad)
        for (int j = 0; j < ca; ++j) a->grad[static_cast<size_t>(i) * ca + j] += g[j];
      if (b->requires_grad)
        for (int j = 0; j < cb; ++j) b->grad[static_cast<size_t>(i) * cb + j] += g[ca + j];
    }
  });
  for (int i = 0; i < n; ++i) {
    double* o = out->values.data() + static_cast<size_t>(i) * (ca + cb);
    for (int j = 0; j < ca; ++j) o[j] = a->values[static_cast<size_t>(i) * ca + j];
    for (int j = 0; j < cb; ++j) o[ca + j] = b->values[static_cast<size_t>(i) * cb + j];
  }
  return out;
}

inline TensorPtr concat_rows(const std::vector<TensorPtr>& parts) {
  if (parts.empty()) throw ConfigError("concat_rows: empty input");
  int c = parts[0]->dim(1), n = 0;
  for (const auto& p : parts) {
    if (p->rank() != 2 || p->dim(1) != c) throw ConfigError("concat_rows: column mismatch");
    n += p->dim(0);
  }
  auto out = make_op({n, c}, parts, [parts, c](Tensor& self) {
    size_t off = 0;
    for (const auto& p : parts) {
      size_t count = p->values.size();
      if (p->requires_grad)
        for (size_t i = 0; i < count; ++i) p->grad[i] += self.grad[off + i];
      off += count;
    }
  });
  size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p->values.begin(), p->values.end(), out->values.begin() + off);
    off += p->values.size();
  }
  return out;
}

inline TensorPtr slice_cols(const TensorPtr& x, int start, int len) {
  if (x->rank() != 2 || start < 0 || start + len > x->dim(1))
    throw ConfigError("slice_cols: range out of bounds");
  int n = x->dim(0), c = x->dim(1);
  auto out = make_op({n, len}, {x}, [x, start, len, n, c](Tensor& self) {
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < len; ++j)
        x->grad[static_cast<size_t>(i) * c + start + j] +=
            self.grad[static_cast<size_t>(i) * len + j];
  });
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < len; ++j)
      out->values[static_cast<size_t>(i) * len + j] =
          x->values[static_cast<size_t>(i) * c + start + j];
  return out;
}

inline TensorPtr gather_rows(const TensorPtr& x, std::vector<int> idx) {
  if (x->rank() != 2) throw ConfigError("gather_rows: rank-2 input required");
  int c = x->dim(1), m = static_cast<int>(idx.size());
  for (int i : idx)
    if (i < 0 || i >= x->dim(0)) throw ConfigError("gather_rows: index out of range");
  auto out = make_op({m, c}, {x}, [x, idx, c](Tensor& self) {
    for (size_t i = 0; i < idx.size(); ++i)
      for (int j = 0; j < c; ++j)
        x->grad[static_cast<size_t>(idx[i]) * c + j] += self.grad[i * c + j];
  });
  for (size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < c; ++j)
      out->values[i * c + j] = x->values[static_cast<size_t>(idx[i]) * c + j];
  return out;
}

// Out-of-place row replacement: out = base with out[idx[i]] = rows[i].
// Indices must be unique.
inline TensorPtr scatter_rows(const TensorPtr& base, std::vector<int> idx, const TensorPtr& rows) {
  if (base->rank() != 2 || rows->rank() != 2 || base->dim(1) != rows->dim(1) ||
      rows->dim(0) != static_cast<int>(idx.size()))
    throw ConfigError("scatter_rows: incompatible shapes");
  int c = base->dim(1);
  auto out = make_op(base->shape, {base, rows}, [base, rows, idx, c](Tensor& self) {
    std::vector<char> replaced(static_cast<size_t>(base->dim(0)), 0);
    for (int i : idx) replaced[static_cast<size_t>(i)] = 1;
    if (base->requires_grad)
      for (int r = 0; r < base->dim(0); ++r)
        if (!replaced[static_cast<size_t>(r)])
          for (int j = 0; j < c; ++j)
            base->grad[static_cast<size_t>(r) * c + j] += self.grad[static_cast<size_t>(r) * c + j];
    if (rows->requires_grad)
      for (size_t i = 0; i < idx.size(); ++i)
        for (int j = 0; j < c; ++j)
          rows->grad[i * c + j] += self.grad[static_cast<size_t>(idx[i]) * c + j];
  });
  out->values = base->values;
  for (size_t i = 0; i < idx.size(); ++i)
    for (int j = 0; j < c; ++j)
      out->values[static_cast<size_t>(idx[i]) * c + j] = rows->values[i * c + j];
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

inline TensorPtr sum_all(const TensorPtr& x) {
  auto out = make_op({1}, {x}, [x](Tensor& self) {
    for (size_t i = 0; i < x->values.size(); ++i) x->grad[i] += self.grad[0];
  });
  double s = 0;
  for (double v : x->values) s += v;
  out->values[0] = s;
  return out;
}

inline TensorPtr mean_all(const TensorPtr& x) {
  double inv = 1.0 / static_cast<double>(x->size());
  auto out = make_op({1}, {x}, [x, inv](Tensor& self) {
    for (size_t i = 0; i < x->values.size(); ++i) x->grad[i] += self.grad[0] * inv;
  });
  double s = 0;
  for (double v : x->values) s += v;
  out->values[0] = s * inv;
  return out;
}

// ---------------------------------------------------------------------------
// Composites

// Two-layer perceptron: linear-relu-linear.
inline TensorPtr mlp2(const TensorPtr& x, const TensorPtr& W1, const TensorPtr& b1,
                      const TensorPtr& W2, const TensorPtr& b2) {
  return linear(relu(linear(x, W1, b1)), W2, b2);
}

inline TensorPtr constant(std::vector<int> shape, std::vector<double> values) {
  return make_tensor(std::move(shape), std::move(values));
}

}  // namespace sparsefuse::nn

#endif  // SPARSEFUSE_NN_OPS_HPP
