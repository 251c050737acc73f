#ifndef SPARSEFUSE_NN_CONV_HPP
#define SPARSEFUSE_NN_CONV_HPP

#include <cmath>
#include <vector>

#include "sparsefuse/nn/ops.hpp"

namespace sparsefuse::nn {

// Feature maps are rank-3 CHW tensors (batch of one everywhere).

namespace detail {

// im2col with layout [Cin*9, Ho*Wo]; padding 1, kernel 3.
inline void build_col3x3(const Tensor& x, int stride, std::vector<double>& col, int ho, int wo) {
  int ci_n = x.dim(0), h = x.dim(1), w = x.dim(2);
  col.assign(static_cast<size_t>(ci_n) * 9 * ho * wo, 0.0);
  for (int ci = 0; ci < ci_n; ++ci) {
    const double* plane = x.values.data() + static_cast<size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        double* row = col.data() + (static_cast<size_t>(ci) * 9 + ky * 3 + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          const double* src = plane + static_cast<size_t>(iy) * w;
          double* dst = row + static_cast<size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) dst[ox] = src[ix];
          }
        }
      }
  }
}

inline void scatter_col3x3(const std::vector<double>& dcol, int stride, Tensor& x, int ho, int wo) {
  int ci_n = x.dim(0), h = x.dim(1), w = x.dim(2);
  for (int ci = 0; ci < ci_n; ++ci) {
    double* plane = x.grad.data() + static_cast<size_t>(ci) * h * w;
    for (int ky = 0; ky < 3; ++ky)
      for (int kx = 0; kx < 3; ++kx) {
        const double* row = dcol.data() + (static_cast<size_t>(ci) * 9 + ky * 3 + kx) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          int iy = oy * stride + ky - 1;
          if (iy < 0 || iy >= h) continue;
          double* dst = plane + static_cast<size_t>(iy) * w;
          const double* src = row + static_cast<size_t>(oy) * wo;
          for (int ox = 0; ox < wo; ++ox) {
            int ix = ox * stride + kx - 1;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
  }
}

}  // namespace detail

// 3x3 convolution, padding 1. Output spatial dims are ceil(H/stride).
// W is [Cout, Cin*9] row-major over (ci, ky, kx); b is [Cout].
inline TensorPtr conv3x3(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b,
                         int stride = 1) {
  if (x->rank() != 3 || W->rank() != 2) throw ConfigError("conv3x3: bad ranks");
  int cin = x->dim(0), h = x->dim(1), w = x->dim(2);
  int cout = W->dim(0);
  if (W->dim(1) != cin * 9 || b->size() != cout)
    throw ConfigError("conv3x3: weight shape mismatch " + shape_str(W->shape));
  int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;

  auto out = make_op({cout, ho, wo}, {x, W, b}, [x, W, b, stride, cin, cout, ho, wo](Tensor& self) {
    std::vector<double> col;
    detail::build_col3x3(*x, stride, col, ho, wo);
    int hw = ho * wo;
    if (W->requires_grad)
      mm_nt_acc(self.grad.data(), col.data(), W->grad.data(), cout, hw, cin * 9);
    if (b->requires_grad)
      for (int co = 0; co < cout; ++co)
        for (int p = 0; p < hw; ++p)
          b->grad[static_cast<size_t>(co)] += self.grad[static_cast<size_t>(co) * hw + p];
    if (x->requires_grad) {
      std::vector<double> dcol(static_cast<size_t>(cin) * 9 * hw, 0.0);
      mm_tn_acc(W->values.data(), self.grad.data(), dcol.data(), cout, cin * 9, hw);
      detail::scatter_col3x3(dcol, stride, *x, ho, wo);
    }
  });

  std::vector<double> col;
  detail::build_col3x3(*x, stride, col, ho, wo);
  int hw = ho * wo;
  for (int co = 0; co < cout; ++co) {
    double* dst = out->values.data() + static_cast<size_t>(co) * hw;
    for (int p = 0; p < hw; ++p) dst[p] = b->values[static_cast<size_t>(co)];
  }
  mm_nn_acc(W->values.data(), col.data(), out->values.data(), cout, cin * 9, hw);
  return out;
}

// 1x1 convolution (per-cell channel mix). W is [Cout, Cin], b [Cout].
inline TensorPtr conv1x1(const TensorPtr& x, const TensorPtr& W, const TensorPtr& b) {
  if (x->rank() != 3 || W->rank() != 2 || W->dim(1) != x->dim(0) || b->size() != W->dim(0))
    throw ConfigError("conv1x1: shape mismatch");
  int cin = x->dim(0), hw = x->dim(1) * x->dim(2), cout = W->dim(0);
  auto out =
      make_op({cout, x->dim(1), x->dim(2)}, {x, W, b}, [x, W, b, cin, hw, cout](Tensor& self) {
        if (W->requires_grad)
          mm_nt_acc(self.grad.data(), x->values.data(), W->grad.data(), cout, hw, cin);
        if (b->requires_grad)
          for (int co = 0; co < cout; ++co)
            for (int p = 0; p < hw; ++p)
              b->grad[static_cast<size_t>(co)] += self.grad[static_cast<size_t>(co) * hw + p];
        if (x->requires_grad)
          mm_tn_acc(W->values.data(), self.grad.data(), x->grad.data(), cout, cin, hw);
      });
  for (int co = 0; co < cout; ++co) {
    double* dst = out->values.data() + static_cast<size_t>(co) * hw;
    for (int p = 0; p < hw; ++p) dst[p] = b->values[static_cast<size_t>(co)];
  }
  mm_nn_acc(W->values.data(), x->values.data(), out->values.data(), cout, cin, hw);
  return out;
}

// Per-channel normalization over the spatial extent, with affine. This is the
// batch-free stand-in for batch norm in all conv blocks.
inline TensorPtr channel_norm(const TensorPtr& x, const TensorPtr& gamma, const TensorPtr& beta,
                              double eps = 1e-5) {
  if (x->rank() != 3 || gamma->size() != x->dim(0) || beta->size() != x->dim(0))
    throw ConfigError("channel_norm: shape mismatch");
  int c = x->dim(0), hw = x->dim(1) * x->dim(2);
  auto out = make_op(x->shape, {x, gamma, beta}, [x, gamma, beta, c, hw, eps](Tensor& self) {
    for (int ch = 0; ch < c; ++ch) {
      const double* xr = x->values.data() + static_cast<size_t>(ch) * hw;
      const double* gr = self.grad.data() + static_cast<size_t>(ch) * hw;
      double mu = 0, var = 0;
      for (int p = 0; p < hw; ++p) mu += xr[p];
      mu /= hw;
      for (int p = 0; p < hw; ++p) var += (xr[p] - mu) * (xr[p] - mu);
      var /= hw;
      double inv = 1.0 / std::sqrt(var + eps);
      double g = gamma->values[static_cast<size_t>(ch)];
      double sum_d = 0, sum_dx = 0;
      for (int p = 0; p < hw; ++p) {
        double xhat = (xr[p] - mu) * inv;
        sum_d += gr[p] * g;
        sum_dx += gr[p] * g * xhat;
        if (gamma->requires_grad) gamma->grad[static_cast<size_t>(ch)] += gr[p] * xhat;
        if (beta->requires_grad) beta->grad[static_cast<size_t>(ch)] += gr[p];
      }
      if (x->requires_grad)
        for (int p = 0; p < hw; ++p) {
          double xhat = (xr[p] - mu) * inv;
          x->grad[static_cast<size_t>(ch) * hw + p] +=
              inv * (gr[p] * g - sum_d / hw - xhat * sum_dx / hw);
        }
    }
  });
  for (int ch = 0; ch < c; ++ch) {
    const double* xr = x->values.data() + static_cast<size_t>(ch) * hw;
    double* yr = out->values.data() + static_cast<size_t>(ch) * hw;
    double mu = 0, var = 0;
    for (int p = 0; p < hw; ++p) mu += xr[p];
    mu /= hw;
    for (int p = 0; p < hw; ++p) var += (xr[p] - mu) * (xr[p] - mu);
    var /= hw;
    double inv = 1.0 / std::sqrt(var + eps);
    double g = gamma->values[static_cast<size_t>(ch)], be = beta->values[static_cast<size_t>(ch)];
    for (int p = 0; p < hw; ++p) yr[p] = (xr[p] - mu) * inv * g + be;
  }
  return out;
}

// Concatenate two CHW maps along the channel axis.
inline TensorPtr concat_chw(const TensorPtr& a, const TensorPtr& b) {
  if (a->rank() != 3 || b->rank() != 3 || a->dim(1) != b->dim(1) || a->dim(2) != b->dim(2))
    throw ConfigError("concat_chw: spatial dims mismatch " + shape_str(a->shape) + " vs " +
                      shape_str(b->shape));
  int ca = a->dim(0), cb = b->dim(0), hw = a->dim(1) * a->dim(2);
  auto out = make_op({ca + cb, a->dim(1), a->dim(2)}, {a, b}, [a, b, ca, cb, hw](Tensor& self) {
    if (a->requires_grad)
      for (size_t i = 0; i < a->values.size(); ++i) a->grad[i] += self.grad[i];
    if (b->requires_grad)
      for (size_t i = 0; i < b->values.size(); ++i)
        b->grad[i] += self.grad[static_cast<size_t>(ca) * hw + i];
  });
  std::copy(a->values.begin(), a->values.end(), out->values.begin());
  std::copy(b->values.begin(), b->values.end(),
            out->values.begin() + static_cast<size_t>(ca) * hw);
  return out;
}

// [C,H,W] -> [H*W, C] so spatial cells become attention rows.
inline TensorPtr chw_to_rows(const TensorPtr& x) {
  if (x->rank() != 3) throw ConfigError("chw_to_rows: rank-3 input required");
  int c = x->dim(0), hw = x->dim(1) * x->dim(2);
  auto out = make_op({hw, c}, {x}, [x, c, hw](Tensor& self) {
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p)
        x->grad[static_cast<size_t>(ch) * hw + p] += self.grad[static_cast<size_t>(p) * c + ch];
  });
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p)
      out->values[static_cast<size_t>(p) * c + ch] = x->values[static_cast<size_t>(ch) * hw + p];
  return out;
}

inline TensorPtr rows_to_chw(const TensorPtr& x, int h, int w) {
  if (x->rank() != 2 || x->dim(0) != h * w) throw ConfigError("rows_to_chw: shape mismatch");
  int c = x->dim(1), hw = h * w;
  auto out = make_op({c, h, w}, {x}, [x, c, hw](Tensor& self) {
    for (int ch = 0; ch < c; ++ch)
      for (int p = 0; p < hw; ++p)
        x->grad[static_cast<size_t>(p) * c + ch] += self.grad[static_cast<size_t>(ch) * hw + p];
  });
  for (int ch = 0; ch < c; ++ch)
    for (int p = 0; p < hw; ++p)
      out->values[static_cast<size_t>(ch) * hw + p] = x->values[static_cast<size_t>(p) * c + ch];
  return out;
}

// Bilinear sampling of a CHW map at n normalized [0,1]^2 locations (pixel
// centers at (i+0.5)/extent). Out-of-bounds reads are zero; gradients flow to
// both the map and the coordinates.
inline TensorPtr bilinear_sample(const TensorPtr& map, const TensorPtr& coords) {
  if (map->rank() != 3 || coords->rank() != 2 || coords->dim(1) != 2)
    throw ConfigError("bilinear_sample: bad shapes");
  int c = map->dim(0), h = map->dim(1), w = map->dim(2);
  int n = coords->dim(0);

  auto sample_corners = [c, h, w](const Tensor& m, double px, double py, int x0, int y0,
                                  double fx, double fy, double* out_row) {
    (void)px;
    (void)py;
    double w00 = (1 - fx) * (1 - fy), w10 = fx * (1 - fy);
    double w01 = (1 - fx) * fy, w11 = fx * fy;
    for (int ch = 0; ch < c; ++ch) {
      const double* plane = m.values.data() + static_cast<size_t>(ch) * h * w;
      double v = 0;
      if (y0 >= 0 && y0 < h) {
        if (x0 >= 0 && x0 < w) v += w00 * plane[static_cast<size_t>(y0) * w + x0];
        if (x0 + 1 >= 0 && x0 + 1 < w) v += w10 * plane[static_cast<size_t>(y0) * w + x0 + 1];
      }
      if (y0 + 1 >= 0 && y0 + 1 < h) {
        if (x0 >= 0 && x0 < w) v += w01 * plane[static_cast<size_t>(y0 + 1) * w + x0];
        if (x0 + 1 >= 0 && x0 + 1 < w) v += w11 * plane[static_cast<size_t>(y0 + 1) * w + x0 + 1];
      }
      out_row[ch] = v;
    }
  };

  auto out = make_op({n, c}, {map, coords}, [map, coords, c, h, w, n](Tensor& self) {
    for (int i = 0; i < n; ++i) {
      double px = coords->values[static_cast<size_t>(i) * 2] * w - 0.5;
      double py = coords->values[static_cast<size_t>(i) * 2 + 1] * h - 0.5;
      int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
      double fx = px - x0, fy = py - y0;
      double du = 0, dv = 0;
      for (int ch = 0; ch < c; ++ch) {
        double g = self.grad[static_cast<size_t>(i) * c + ch];
        if (g == 0.0) continue;
        const double* plane = map->values.data() + static_cast<size_t>(ch) * h * w;
        double* gplane =
            map->requires_grad ? map->grad.data() + static_cast<size_t>(ch) * h * w : nullptr;
        double v00 = 0, v10 = 0, v01 = 0, v11 = 0;
        bool b00 = y0 >= 0 && y0 < h && x0 >= 0 && x0 < w;
        bool b10 = y0 >= 0 && y0 < h && x0 + 1 >= 0 && x0 + 1 < w;
        bool b01 = y0 + 1 >= 0 && y0 + 1 < h && x0 >= 0 && x0 < w;
        bool b11 = y0 + 1 >= 0 && y0 + 1 < h && x0 + 1 >= 0 && x0 + 1 < w;
        if (b00) v00 = plane[static_cast<size_t>(y0) * w + x0];
        if (b10) v10 = plane[static_cast<size_t>(y0) * w + x0 + 1];
        if (b01) v01 = plane[static_cast<size_t>(y0 + 1) * w + x0];
        if (b11) v11 = plane[static_cast<size_t>(y0 + 1) * w + x0 + 1];
        if (gplane) {
          if (b00) gplane[static_cast<size_t>(y0) * w + x0] += g * (1 - fx) * (1 - fy);
          if (b10) gplane[static_cast<size_t>(y0) * w + x0 + 1] += g * fx * (1 - fy);
          if (b01) gplane[static_cast<size_t>(y0 + 1) * w + x0] += g * (1 - fx) * fy;
          if (b11) gplane[static_cast<size_t>(y0 + 1) * w + x0 + 1] += g * fx * fy;
        }
        du += g * ((v10 - v00) * (1 - fy) + (v11 - v01) * fy);
        dv += g * ((v01 - v00) * (1 - fx) + (v11 - v10) * fx);
      }
      if (coords->requires_grad) {
        coords->grad[static_cast<size_t>(i) * 2] += du * w;
        coords->grad[static_cast<size_t>(i) * 2 + 1] += dv * h;
      }
    }
  });

  for (int i = 0; i < n; ++i) {
    double px = coords->values[static_cast<size_t>(i) * 2] * w - 0.5;
    double py = coords->values[static_cast<size_t>(i) * 2 + 1] * h - 0.5;
    int x0 = static_cast<int>(std::floor(px)), y0 = static_cast<int>(std::floor(py));
    sample_corners(*map, px, py, x0, y0, px - x0, py - y0,
                   out->values.data() + static_cast<size_t>(i) * c);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Residual block: conv-norm-relu-conv-norm plus skip (1x1 projection when the
// stride or channel count changes), final relu.

struct ResidualBlockParams {
  TensorPtr w1, b1, g1, be1;
  TensorPtr w2, b2, g2, be2;
  TensorPtr wp, bp, gp, bep;  // projection path; null when identity skip
};

inline TensorPtr residual_block(const TensorPtr& x, const ResidualBlockParams& p, int stride) {
  auto y = conv3x3(x, p.w1, p.b1, stride);
  y = relu(channel_norm(y, p.g1, p.be1));
  y = conv3x3(y, p.w2, p.b2, 1);
  y = channel_norm(y, p.g2, p.be2);
  TensorPtr skip = x;
  if (p.wp) {
    // Match the stride by sampling every stride-th cell, then project.
    if (stride != 1) {
      int c = x->dim(0), h = x->dim(1), w = x->dim(2);
      int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
      auto strided =
          make_op({c, ho, wo}, {x}, [x, c, h, w, ho, wo, stride](Tensor& self) {
            for (int ch = 0; ch < c; ++ch)
              for (int oy = 0; oy < ho; ++oy)
                for (int ox = 0; ox < wo; ++ox)
                  x->grad[(static_cast<size_t>(ch) * h + oy * stride) * w + ox * stride] +=
                      self.grad[(static_cast<size_t>(ch) * ho + oy) * wo + ox];
          });
      for (int ch = 0; ch < c; ++ch)
        for (int oy = 0; oy < ho; ++oy)
          for (int ox = 0; ox < wo; ++ox)
            strided->values[(static_cast<size_t>(ch) * ho + oy) * wo + ox] =
                x->values[(static_cast<size_t>(ch) * h + oy * stride) * w + ox * stride];
      skip = strided;
    }
    skip = channel_norm(conv1x1(skip, p.wp, p.bp), p.gp, p.bep);
  }
  return relu(add(y, skip));
}

}  // namespace sparsefuse::nn

#endif  // SPARSEFUSE_NN_CONV_HPP
