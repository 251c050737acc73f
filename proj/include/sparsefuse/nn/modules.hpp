#ifndef SPARSEFUSE_NN_MODULES_HPP
#define SPARSEFUSE_NN_MODULES_HPP

#include <string>
#include <vector>

#include "sparsefuse/nn/attention.hpp"
#include "sparsefuse/nn/conv.hpp"
#include "sparsefuse/nn/params.hpp"

namespace sparsefuse::nn {

// Registration helpers: each bundle owns named parameters under a prefix.
// Registration order is fixed by call order, which pins both the init draws
// and the checkpoint layout.

struct LinearModule {
  TensorPtr w, b;
  TensorPtr operator()(const TensorPtr& x) const { return linear(x, w, b); }
};

inline LinearModule add_linear(ParamStore& s, const std::string& p, int in, int out, Rng& rng) {
  return {s.add(p + ".w", {in, out}, Init::XavierUniform, rng),
          s.add(p + ".b", {out}, Init::Zeros, rng)};
}

struct MlpModule {
  TensorPtr w1, b1, w2, b2;
  TensorPtr operator()(const TensorPtr& x) const { return mlp2(x, w1, b1, w2, b2); }
};

inline MlpModule add_mlp(ParamStore& s, const std::string& p, int in, int hidden, int out,
                         Rng& rng) {
  return {s.add(p + ".w1", {in, hidden}, Init::XavierUniform, rng),
          s.add(p + ".b1", {hidden}, Init::Zeros, rng),
          s.add(p + ".w2", {hidden, out}, Init::XavierUniform, rng),
          s.add(p + ".b2", {out}, Init::Zeros, rng)};
}

struct NormModule {
  TensorPtr gamma, beta;
  TensorPtr rows(const TensorPtr& x) const { return layer_norm(x, gamma, beta); }
  TensorPtr chw(const TensorPtr& x) const { return channel_norm(x, gamma, beta); }
};

inline NormModule add_norm(ParamStore& s, const std::string& p, int c, Rng& rng) {
  return {s.add(p + ".g", {c}, Init::Ones, rng), s.add(p + ".be", {c}, Init::Zeros, rng)};
}

inline AttentionParams add_attention(ParamStore& s, const std::string& p, int c, int heads,
                                     Rng& rng) {
  AttentionParams a;
  a.heads = heads;
  a.wq = s.add(p + ".wq", {c, c}, Init::XavierUniform, rng);
  a.bq = s.add(p + ".bq", {c}, Init::Zeros, rng);
  a.wk = s.add(p + ".wk", {c, c}, Init::XavierUniform, rng);
  a.bk = s.add(p + ".bk", {c}, Init::Zeros, rng);
  a.wv = s.add(p + ".wv", {c, c}, Init::XavierUniform, rng);
  a.bv = s.add(p + ".bv", {c}, Init::Zeros, rng);
  a.wo = s.add(p + ".wo", {c, c}, Init::XavierUniform, rng);
  a.bo = s.add(p + ".bo", {c}, Init::Zeros, rng);
  return a;
}

inline DeformableParams add_deformable(ParamStore& s, const std::string& p, int c, int c_in,
                                       int heads, int levels, int points, Rng& rng) {
  DeformableParams d;
  d.heads = heads;
  d.points = points;
  d.wv = s.add(p + ".wv", {c_in, c}, Init::XavierUniform, rng);
  d.bv = s.add(p + ".bv", {c}, Init::Zeros, rng);
  d.w_off = s.add(p + ".woff", {c, heads * levels * points * 2}, Init::XavierUniform, rng);
  d.b_off = s.add(p + ".boff", {heads * levels * points * 2}, Init::Zeros, rng);
  // dampen the offset head so initial samples stay near the reference point
  // (offsets are in normalized map units; Xavier scale would scatter them off
  // the map and the zero-padding would mute every gradient)
  for (auto& v : d.w_off->values) v *= 0.05;
  d.w_wt = s.add(p + ".wwt", {c, heads * levels * points}, Init::XavierUniform, rng);
  d.b_wt = s.add(p + ".bwt", {heads * levels * points}, Init::Zeros, rng);
  d.wo = s.add(p + ".wo", {c, c}, Init::XavierUniform, rng);
  d.bo = s.add(p + ".bo", {c}, Init::Zeros, rng);
  return d;
}

inline ResidualBlockParams add_residual_block(ParamStore& s, const std::string& p, int cin,
                                              int cout, bool project, Rng& rng) {
  ResidualBlockParams r;
  r.w1 = s.add(p + ".w1", {cout, cin * 9}, Init::XavierUniform, rng);
  r.b1 = s.add(p + ".b1", {cout}, Init::Zeros, rng);
  r.g1 = s.add(p + ".g1", {cout}, Init::Ones, rng);
  r.be1 = s.add(p + ".be1", {cout}, Init::Zeros, rng);
  r.w2 = s.add(p + ".w2", {cout, cout * 9}, Init::XavierUniform, rng);
  r.b2 = s.add(p + ".b2", {cout}, Init::Zeros, rng);
  r.g2 = s.add(p + ".g2", {cout}, Init::Ones, rng);
  r.be2 = s.add(p + ".be2", {cout}, Init::Zeros, rng);
  if (project) {
    r.wp = s.add(p + ".wp", {cout, cin}, Init::XavierUniform, rng);
    r.bp = s.add(p + ".bp", {cout}, Init::Zeros, rng);
    r.gp = s.add(p + ".gp", {cout}, Init::Ones, rng);
    r.bep = s.add(p + ".bep", {cout}, Init::Zeros, rng);
  }
  return r;
}

struct ConvModule {
  TensorPtr w, b;
};

inline ConvModule add_conv3x3(ParamStore& s, const std::string& p, int cin, int cout, Rng& rng) {
  return {s.add(p + ".w", {cout, cin * 9}, Init::XavierUniform, rng),
          s.add(p + ".b", {cout}, Init::Zeros, rng)};
}

// Transformer feed-forward, pre-norm residual: x + W2 relu(W1 LN(x)).
struct FfnModule {
  MlpModule mlp;
  NormModule norm;
  TensorPtr operator()(const TensorPtr& x) const { return add(x, mlp(norm.rows(x))); }
};

inline FfnModule add_ffn(ParamStore& s, const std::string& p, int c, int expansion, Rng& rng) {
  return {add_mlp(s, p + ".mlp", c, c * expansion, c, rng), add_norm(s, p + ".ln", c, rng)};
}

}  // namespace sparsefuse::nn

#endif  // SPARSEFUSE_NN_MODULES_HPP
