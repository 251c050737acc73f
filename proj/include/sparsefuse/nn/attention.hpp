#ifndef SPARSEFUSE_NN_ATTENTION_HPP
#define SPARSEFUSE_NN_ATTENTION_HPP

#include <cmath>
#include <vector>

#include "sparsefuse/nn/conv.hpp"
#include "sparsefuse/nn/ops.hpp"

namespace sparsefuse::nn {

struct AttentionParams {
  TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
  int heads = 1;
};

struct AttentionResult {
  TensorPtr out;                    // n x C
  std::vector<TensorPtr> weights;   // per head, n x m row-stochastic
};

// Scaled dot-product attention with positional embeddings added to the
// queries, keys, and values before projection. Covers both self-attention
// (q_in == kv_in) and cross-attention. Pass null positions to skip them.
inline AttentionResult multi_head_attention(const TensorPtr& q_in, const TensorPtr& kv_in,
                                            const TensorPtr& pos_q, const TensorPtr& pos_kv,
                                            const AttentionParams& p) {
  int c = q_in->dim(1);
  if (c % p.heads != 0) throw ConfigError("attention: C not divisible by heads");
  int dh = c / p.heads;

  TensorPtr q_src = pos_q ? add(q_in, pos_q) : q_in;
  TensorPtr kv_src = pos_kv ? add(kv_in, pos_kv) : kv_in;
  TensorPtr q = linear(q_src, p.wq, p.bq);
  TensorPtr k = linear(kv_src, p.wk, p.bk);
  TensorPtr v = linear(kv_src, p.wv, p.bv);

  double inv_scale = 1.0 / std::sqrt(static_cast<double>(dh));
  AttentionResult res;
  TensorPtr merged;
  for (int h = 0; h < p.heads; ++h) {
    TensorPtr qh = slice_cols(q, h * dh, dh);
    TensorPtr kh = slice_cols(k, h * dh, dh);
    TensorPtr vh = slice_cols(v, h * dh, dh);
    TensorPtr attn = softmax(scale(matmul_nt(qh, kh), inv_scale));
    res.weights.push_back(attn);
    TensorPtr oh = matmul(attn, vh);
    merged = h == 0 ? oh : concat_cols(merged, oh);
  }
  res.out = linear(merged, p.wo, p.bo);
  return res;
}

inline AttentionResult self_attention(const TensorPtr& x, const TensorPtr& pos,
                                      const AttentionParams& p) {
  return multi_head_attention(x, x, pos, pos, p);
}

struct DeformableParams {
  TensorPtr wv, bv;      // value projection, applied per level: C_in -> C
  TensorPtr w_off, b_off;  // C -> heads*levels*points*2
  TensorPtr w_wt, b_wt;    // C -> heads*levels*points
  TensorPtr wo, bo;        // output projection C -> C
  int heads = 1, points = 4;
};

// Multi-scale deformable attention. Each query samples `points` offset
// locations per head per pyramid level around its reference point (normalized
// [0,1]^2 units shared by all levels) and mixes them with weights softmaxed
// over (levels x points). Out-of-bounds samples read as zero.
inline TensorPtr deformable_attention(const TensorPtr& q, const TensorPtr& ref_points,
                                      const std::vector<TensorPtr>& levels,
                                      const DeformableParams& p) {
  int n = q->dim(0), c = q->dim(1);
  int L = static_cast<int>(levels.size());
  if (c % p.heads != 0) throw ConfigError("deformable: C not divisible by heads");
  int dh = c / p.heads;
  if (p.w_off->dim(1) != p.heads * L * p.points * 2 || p.w_wt->dim(1) != p.heads * L * p.points)
    throw ConfigError("deformable: head shapes do not match levels/points");

  // Project values once per level, then gather from projected maps: bilinear
  // sampling commutes with the (linear) value projection.
  std::vector<TensorPtr> value_maps;
  value_maps.reserve(static_cast<size_t>(L));
  for (const auto& lvl : levels) {
    auto rows = chw_to_rows(lvl);
    auto proj = linear(rows, p.wv, p.bv);
    value_maps.push_back(rows_to_chw(proj, lvl->dim(1), lvl->dim(2)));
  }

  TensorPtr offsets = linear(q, p.w_off, p.b_off);  // n x (H*L*P*2)
  TensorPtr logits = linear(q, p.w_wt, p.b_wt);     // n x (H*L*P)

  TensorPtr merged;
  for (int h = 0; h < p.heads; ++h) {
    TensorPtr head_logits = slice_cols(logits, h * L * p.points, L * p.points);
    TensorPtr head_w = softmax(head_logits);  // rows sum to 1 over (L x P)
    TensorPtr head_acc;
    for (int l = 0; l < L; ++l) {
      for (int pt = 0; pt < p.points; ++pt) {
        int flat = (h * L + l) * p.points + pt;
        TensorPtr off = slice_cols(offsets, flat * 2, 2);
        TensorPtr coords = add(ref_points, off);
        TensorPtr sampled = bilinear_sample(value_maps[static_cast<size_t>(l)], coords);
        TensorPtr head_sample = slice_cols(sampled, h * dh, dh);
        TensorPtr w_col = slice_cols(head_w, l * p.points + pt, 1);
        TensorPtr weighted = mul_colvec(head_sample, w_col);
        head_acc = head_acc ? add(head_acc, weighted) : weighted;
      }
    }
    merged = h == 0 ? head_acc : concat_cols(merged, head_acc);
  }
  (void)n;
  return linear(merged, p.wo, p.bo);
}

}  // namespace sparsefuse::nn

#endif  // SPARSEFUSE_NN_ATTENTION_HPP
